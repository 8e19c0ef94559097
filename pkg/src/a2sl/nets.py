"""Small numpy network toolkit with hand-written reverse-mode gradients.

Parameters are plain ``dict[str, np.ndarray]`` (float64). Forward functions
return their output plus a cache; the matching ``*_backward`` turns output
gradients into a gradient dict with the same keys as the parameters.

LSTM gate layout along the 4H axis: input, forget, output, candidate.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import DegenerateInput, FormatError, InvalidArgument, NumericError


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


# --- parameter containers -----------------------------------------------------

def init_lstm(input_dim, hidden_dim, rng, prefix=""):
    bound = 1.0 / math.sqrt(hidden_dim)
    H = hidden_dim
    b = rng.uniform(-bound, bound, 4 * H)
    b[H:2 * H] += 1.0
    return {
        prefix + "Wx": rng.uniform(-bound, bound, (input_dim, 4 * H)),
        prefix + "Wh": rng.uniform(-bound, bound, (H, 4 * H)),
        prefix + "b": b,
    }


def init_encoder(input_dim, hidden_dim, rng):
    p = init_lstm(input_dim, hidden_dim, rng, "fwd.")
    p.update(init_lstm(input_dim, hidden_dim, rng, "bwd."))
    return p


def init_decoder(input_dim, hidden_dim, rng, out_shift=None, out_scale=None):
    """LSTM with a linear head; optional fixed output affine maps the head to target units."""
    p = init_lstm(input_dim, hidden_dim, rng)
    bound = 1.0 / math.sqrt(hidden_dim)
    p["w_out"] = rng.uniform(-bound, bound, hidden_dim)
    p["b_out"] = np.zeros(1)
    if out_shift is not None:
        p["out_shift"] = np.array([float(out_shift)])
        p["out_scale"] = np.array([float(out_scale)])
    return p


def init_mlp(input_dim, hidden_dim, rng):
    b1 = 1.0 / math.sqrt(input_dim)
    b2 = 1.0 / math.sqrt(hidden_dim)
    return {
        "W1": rng.uniform(-b1, b1, (input_dim, hidden_dim)),
        "b1": np.zeros(hidden_dim),
        "w2": rng.uniform(-b2, b2, hidden_dim),
        "b2": np.zeros(1),
    }


def clone(params):
    return {k: v.copy() for k, v in params.items()}


def zeros_like(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def add_into(acc, grads):
    for k, v in grads.items():
        acc[k] = acc[k] + v if k in acc else v.copy()
    return acc


def check_finite(grads):
    for k, v in grads.items():
        if not np.all(np.isfinite(v)):
            raise NumericError(f"non-finite gradient for parameter {k!r}")


def params_equal(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


# --- LSTM ---------------------------------------------------------------------

def _lstm_dims(p, prefix):
    Wx = p[prefix + "Wx"]
    return Wx.shape[0], Wx.shape[1] // 4


def lstm_step(x, h, c, p, prefix=""):
    """One LSTM step; x (D,) or (B, D), h and c (H,) or (B, H)."""
    D, H = _lstm_dims(p, prefix)
    x, h, c = np.asarray(x, float), np.asarray(h, float), np.asarray(c, float)
    if x.shape[-1] != D or h.shape[-1] != H or c.shape[-1] != H:
        raise InvalidArgument(f"lstm_step shapes x{x.shape} h{h.shape} c{c.shape} vs D={D}, H={H}")
    z = x @ p[prefix + "Wx"] + h @ p[prefix + "Wh"] + p[prefix + "b"]
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    o = sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def lstm_forward(X, p, prefix=""):
    """Run an LSTM over X (B, T, D) from zero state; returns all hidden states (B, T, H)."""
    D, H = _lstm_dims(p, prefix)
    if X.ndim != 3 or X.shape[2] != D:
        raise InvalidArgument(f"expected input (B, T, {D}), got {X.shape}")
    B, T, _ = X.shape
    if T < 1:
        raise InvalidArgument("empty sequence")
    Wh = p[prefix + "Wh"]
    XW = X @ p[prefix + "Wx"] + p[prefix + "b"]
    Hs = np.empty((B, T, H))
    Cs = np.empty((B, T, H))
    gates = np.empty((B, T, 4 * H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        z = XW[:, t] + h @ Wh
        a = gates[:, t]
        a[:, :3 * H] = sigmoid(z[:, :3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 3 * H:]
        h = a[:, 2 * H:3 * H] * np.tanh(c)
        Cs[:, t] = c
        Hs[:, t] = h
    return Hs, (X, Hs, Cs, gates)


def lstm_backward(cache, p, dH=None, dh_last=None, prefix=""):
    """Gradients of the LSTM parameters given dL/dh_t (dH) and/or dL/dh_T (dh_last)."""
    X, Hs, Cs, gates = cache
    B, T, H = Hs.shape
    Wh = p[prefix + "Wh"]
    dZ = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dh_next
        if dH is not None:
            dh = dh + dH[:, t]
        if dh_last is not None and t == T - 1:
            dh = dh + dh_last
        a = gates[:, t]
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = np.tanh(Cs[:, t])
        c_prev = Cs[:, t - 1] if t > 0 else 0.0
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dZ[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = dz @ Wh.T
    D = X.shape[2]
    H_prev = np.concatenate([np.zeros((B, 1, H)), Hs[:, :-1]], axis=1)
    dZf = dZ.reshape(-1, 4 * H)
    return {
        prefix + "Wx": X.reshape(-1, D).T @ dZf,
        prefix + "Wh": H_prev.reshape(-1, H).T @ dZf,
        prefix + "b": dZf.sum(axis=0),
    }


# --- BiLSTM encoder -----------------------------------------------------------

def embed_forward(X, p):
    """Scenario embeddings s = (h_fwd[n] + h_bwd[1]) / 2 for X (B, n, D)."""
    X = np.asarray(X, float)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1] < 1:
        raise InvalidArgument("empty sequence")
    Hf, cf = lstm_forward(X, p, "fwd.")
    Hb, cb = lstm_forward(X[:, ::-1], p, "bwd.")
    s = 0.5 * (Hf[:, -1] + Hb[:, -1])
    return s, (cf, cb)


def embed_backward(ds, cache, p):
    cf, cb = cache
    g = lstm_backward(cf, p, dh_last=0.5 * ds, prefix="fwd.")
    g.update(lstm_backward(cb, p, dh_last=0.5 * ds, prefix="bwd."))
    return g


def bilstm_embed(sequence, p):
    """Embedding vector of a single (n, D) input sequence."""
    seq = np.asarray(sequence, float)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise InvalidArgument(f"expected a non-empty (n, D) sequence, got shape {seq.shape}")
    return embed_forward(seq[None], p)[0][0]


# --- decoder ------------------------------------------------------------------

def predict_forward(X, p):
    """Per-step predictions (B, T) = affine head applied to LSTM hidden states."""
    X = np.asarray(X, float)
    if X.ndim == 2:
        X = X[None]
    Hs, cache = lstm_forward(X, p)
    z = Hs @ p["w_out"] + p["b_out"][0]
    if "out_scale" in p:
        z = z * p["out_scale"][0] + p["out_shift"][0]
    return z, (Hs, cache)


def predict_backward(dY, cache, p):
    """Gradients of the trainable decoder parameters; the output affine stays fixed."""
    Hs, lc = cache
    if "out_scale" in p:
        dY = dY * p["out_scale"][0]
    g = lstm_backward(lc, p, dH=dY[..., None] * p["w_out"])
    g["w_out"] = np.einsum("bt,bth->h", dY, Hs)
    g["b_out"] = np.array([dY.sum()])
    return g


def lstm_predict(sequence, p):
    seq = np.asarray(sequence, float)
    if seq.ndim != 2:
        raise InvalidArgument(f"expected (n, D) sequence, got shape {seq.shape}")
    return predict_forward(seq[None], p)[0][0]


# --- MLP discriminator --------------------------------------------------------

def mlp_forward(X, p):
    """Logits (B,) of a one-hidden-layer tanh MLP."""
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[1] != p["W1"].shape[0]:
        raise InvalidArgument(f"MLP expects {p['W1'].shape[0]} inputs, got {X.shape[1]}")
    hid = np.tanh(X @ p["W1"] + p["b1"])
    return hid @ p["w2"] + p["b2"][0], (X, hid)


def mlp_backward(dlogit, cache, p):
    X, hid = cache
    dhid = np.outer(dlogit, p["w2"]) * (1.0 - hid * hid)
    return {
        "W1": X.T @ dhid,
        "b1": dhid.sum(axis=0),
        "w2": hid.T @ dlogit,
        "b2": np.array([dlogit.sum()]),
    }


def bce_loss(logits, labels, weights=None):
    """Mean weighted binary cross-entropy on logits, and its gradient."""
    labels = np.asarray(labels, float)
    w = np.ones_like(labels) if weights is None else np.asarray(weights, float)
    w = w / w.sum()
    loss = -np.sum(w * (labels * log_sigmoid(logits) + (1 - labels) * log_sigmoid(-logits)))
    return float(loss), w * (sigmoid(logits) - labels)


# --- similarity ---------------------------------------------------------------

def cosine_sim(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInput("cosine similarity of a zero-norm vector")
    return float(a @ b / (na * nb))


def cosine_sim_grad(a, b):
    """(sim, dsim/da, dsim/db)."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInput("cosine similarity of a zero-norm vector")
    sim = float(a @ b / (na * nb))
    return sim, b / (na * nb) - sim * a / (na * na), a / (na * nb) - sim * b / (nb * nb)


def cosine_matrix(Q, K):
    """Row-wise cosine similarities between Q (q, d) and K (k, d)."""
    qn = np.linalg.norm(Q, axis=1, keepdims=True)
    kn = np.linalg.norm(K, axis=1, keepdims=True)
    if np.any(qn == 0) or np.any(kn == 0):
        raise DegenerateInput("cosine similarity of a zero-norm vector")
    return (Q / qn) @ (K / kn).T


# --- Adam ---------------------------------------------------------------------

class Adam:
    def __init__(self, params, lr=0.005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = zeros_like(params)
        self.v = zeros_like(params)
        self.t = 0

    def step(self, params, grads):
        """Return updated parameters; entries without gradients are copied through."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        out = {}
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                out[k] = p.copy()
                continue
            if g.shape != p.shape:
                raise InvalidArgument(f"gradient shape {g.shape} != parameter shape {p.shape} for {k!r}")
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            out[k] = p - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return out


def adam_step(params, grads, state):
    return state.step(params, grads)


# --- finite differences -------------------------------------------------------

def numeric_grad(fn, params, step=1e-5, keys=None):
    """Central differences of scalar fn(params) for every entry of ``keys``."""
    out = {}
    for k in keys or params:
        base = params[k]
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            fp = fn(params)
            flat[i] = old - step
            fm = fn(params)
            flat[i] = old
            gf[i] = (fp - fm) / (2 * step)
        out[k] = g
    return out


def max_rel_error(analytic, numeric, floor=1e-6):
    """Largest elementwise |a - n| / max(|a|, |n|, floor) over all shared keys."""
    worst = 0.0
    for k, n in numeric.items():
        a = analytic[k]
        den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / den)))
    return worst


# --- checkpoints --------------------------------------------------------------

MAGIC = "# a2sl-tensors v1"


def save_params(path, params, meta=""):
    """Text tensor file: a header line, then per tensor ``name ndim dims...`` and a value line."""
    lines = [f"{MAGIC} {meta}".rstrip()]
    for k in sorted(params):
        v = np.asarray(params[k], dtype=np.float64)
        lines.append(" ".join([k, str(v.ndim), *map(str, v.shape)]))
        lines.append(" ".join(repr(float(x)) for x in v.reshape(-1)))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_params(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(MAGIC):
        raise FormatError(f"{path}: not a tensor checkpoint")
    out = {}
    body = lines[1:]
    if len(body) % 2:
        raise FormatError(f"{path}: truncated checkpoint")
    for head, vals in zip(body[::2], body[1::2]):
        parts = head.split()
        name, ndim = parts[0], int(parts[1])
        shape = tuple(int(d) for d in parts[2:2 + ndim])
        data = np.array([float(x) for x in vals.split()], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise FormatError(f"{path}: tensor {name} has {data.size} values, expected shape {shape}")
        out[name] = data.reshape(shape)
    return out


def checkpoint_meta(path):
    first = Path(path).read_text(encoding="utf-8").split("\n", 1)[0]
    return first[len(MAGIC):].strip()
