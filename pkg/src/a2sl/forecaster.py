"""Monthly and yearly forecasters: losses, trainers, joint training and fine-tuning."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import nets
from .dataset import stack_inputs, stack_targets, yearly_sequences, N_DAYS
from .errors import EmptyLoss, InvalidArgument, TrainingDiverged
from .retrieval import (EmbeddingIndex, build_batch, encode, ensure_observed, similarity_weights,
                        similarity_weights_backward)
from .ssl import ScenarioPool, multilevel_loss_grad, regime_pool, sample_quadruple

log = logging.getLogger(__name__)

ARMS = ("no-pretrain", "pretrain", "a2sl")


@dataclass
class TrainConfig:
    lam: float = 0.5
    k: int = 4
    mu: float = 1.0
    lr: float = 0.005
    batch_size: int = 16
    epochs: int = 30
    finetune_epochs: int = 20
    finetune_lr: float = None          # default 0.1 * lr
    pretrain_epochs: int = 10
    encoder_warmup_epochs: int = 0
    pretrain_alpha: bool = True        # initialise the monthly decoder from simulated-label pre-training
    pretrain_yearly: bool = True
    finetune_on_anchor_obs: bool = False
    hidden_dim: int = 16
    encoder_dim: int = 32
    n_clusters: int = 4
    refresh_period: int = 1
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise InvalidArgument(f"lam must be in [0, 1], got {self.lam}")
        if self.k < 0 or self.mu < 0 or self.lr <= 0 or self.batch_size < 1:
            raise InvalidArgument("k, mu must be >= 0; lr > 0; batch_size >= 1")
        if self.finetune_lr is None:
            self.finetune_lr = 0.1 * self.lr

    def to_dict(self):
        return asdict(self)


def rng_streams(seed):
    """Independent generators for init, shuffling and quadruple sampling."""
    init, shuffle, sample = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(shuffle), np.random.default_rng(sample)


# --- losses -------------------------------------------------------------------

def seq_mse(preds, y, mask):
    """Per-sequence masked MSE, its gradient w.r.t. preds, and which sequences are observed.

    Masked-out entries never touch the arithmetic, so their values are irrelevant.
    """
    preds = np.atleast_2d(preds)
    m = np.atleast_2d(mask).astype(bool)
    cnt = m.sum(axis=1)
    diff = np.where(m, preds - np.where(m, np.atleast_2d(y), 0.0), 0.0)
    safe = np.maximum(cnt, 1)
    return (diff * diff).sum(axis=1) / safe, 2.0 * diff / safe[:, None], cnt > 0


def weighted_masked_mse(preds, y, mask, weights):
    """Similarity-weighted masked MSE; unobserved sequences are dropped and weights renormalized."""
    mse, dmse, observed = seq_mse(preds, y, mask)
    w = np.where(observed, np.asarray(weights, float), 0.0)
    if not observed.any() or w.sum() <= 0:
        raise EmptyLoss("no observed day in any scenario of the batch")
    w = w / w.sum()
    return float(np.sum(w * mse)), w[:, None] * dmse


def masked_mse(pred, y, mask):
    """Masked MSE of one series; None when nothing is observed."""
    mse, _, observed = seq_mse(pred, y, mask)
    return float(mse[0]) if observed[0] else None


def rmse(preds, ys, masks):
    """Pooled RMSE over every observed day of the given series."""
    sse, n = 0.0, 0
    for p, y, m in zip(preds, ys, masks):
        m = np.asarray(m).astype(bool)
        d = np.asarray(p)[m] - np.asarray(y)[m]
        sse += float(d @ d)
        n += int(m.sum())
    if n == 0:
        raise EmptyLoss("no observed day to score")
    return math.sqrt(sse / n)


# --- generic masked-regression trainer ------------------------------------------

def batch_masked_step(params, X, Y, M):
    """Mean masked MSE over the observed sequences of one mini-batch and its gradients."""
    preds, cache = nets.predict_forward(X, params)
    mse, dmse, observed = seq_mse(preds, Y, M)
    n = int(observed.sum())
    if n == 0:
        return None, None
    wseq = np.where(observed, 1.0 / n, 0.0)
    loss = float(np.sum(wseq * mse))
    return loss, nets.predict_backward(wseq[:, None] * dmse, cache, params)


def _val_rmse(params, val):
    Xv, Yv, Mv = val
    P = nets.predict_forward(Xv, params)[0]
    return rmse(P, Yv, Mv)


def train_masked(params, X, Y, M, epochs, lr, batch_size, shuffle_rng, label="", val=None):
    """Adam on mean masked MSE; returns (params, per-epoch rows).

    With ``val = (X, Y, M)`` the parameters of the epoch with the lowest validation
    RMSE are returned (the starting point counts as epoch -1).
    """
    opt = nets.Adam(params, lr=lr)
    history = []
    best = (_val_rmse(params, val), -1, params) if val is not None else None
    N = len(X)
    for epoch in range(epochs):
        perm = shuffle_rng.permutation(N)
        losses = []
        for lo in range(0, N, batch_size):
            b = perm[lo:lo + batch_size]
            loss, grads = batch_masked_step(params, X[b], Y[b], M[b])
            if loss is None:
                continue
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, label)
            nets.check_finite(grads)
            params = opt.step(params, grads)
            losses.append(loss)
        row = {"epoch": epoch, "loss": float(np.mean(losses)) if losses else math.nan}
        if val is not None:
            row["val_rmse"] = _val_rmse(params, val)
            if row["val_rmse"] < best[0]:
                best = (row["val_rmse"], epoch, params)
        history.append(row)
    if best is not None:
        log.debug("%s: best validation epoch %d (rmse %.4f)", label, best[1], best[0])
        return best[2], history
    return params, history


def pretrain_simulated(params, X, sim_targets, Y, M, cfg, shuffle_rng, epochs=None, label="", val=None):
    """Dense fit to simulated labels, then masked fit to observations."""
    dense = np.ones_like(sim_targets, dtype=np.int8)
    params, h_pre = train_masked(params, X, sim_targets, dense, cfg.pretrain_epochs, cfg.lr, cfg.batch_size,
                                 shuffle_rng, label + " pretrain")
    params, h_obs = train_masked(params, X, Y, M, cfg.epochs if epochs is None else epochs, cfg.lr,
                                 cfg.batch_size, shuffle_rng, label, val)
    return params, {"pretrain": h_pre, "observed": h_obs}


def target_affine(sim_targets):
    """Fixed output shift/scale for a decoder: mean and std of the simulated labels."""
    S = np.asarray(sim_targets, float)
    sd = float(S.std())
    return float(S.mean()), sd if sd > 1e-12 else 1.0


def new_decoder(input_dim, sim_targets, cfg, rng):
    shift, scale = target_affine(sim_targets)
    return nets.init_decoder(input_dim, cfg.hidden_dim, rng, out_shift=shift, out_scale=scale)


def _monthly_arrays(scenarios):
    X = stack_inputs(scenarios)
    Y, M = stack_targets(scenarios)
    return X, Y, M, np.stack([s.sim_phys for s in scenarios])


def monthly_val(scenarios):
    """Validation triple (X, Y, M) of observed scenarios, or None."""
    obs = [s for s in scenarios or () if s.n_obs > 0]
    if not obs:
        return None
    return _monthly_arrays(obs)[:3]


def yearly_val(scenarios, task):
    seqs = [q for q in yearly_sequences(scenarios, task)] if scenarios else []
    seqs = [q for q in seqs if q.mask.any()]
    if not seqs:
        return None
    return np.stack([q.X for q in seqs]), np.stack([q.y for q in seqs]), np.stack([q.mask for q in seqs])


def train_monthly_baseline(train, cfg, pretrain, val=None):
    """Plain monthly LSTM on the task's training scenarios (optionally simulated-label pre-trained).

    ``val`` scenarios enable best-validation checkpoint selection.
    """
    init_rng, shuffle_rng, _ = rng_streams(cfg.seed)
    X, Y, M, S = _monthly_arrays(train)
    params = new_decoder(X.shape[2], S, cfg, init_rng)
    vt = monthly_val(val)
    if pretrain:
        return pretrain_simulated(params, X, S, Y, M, cfg, shuffle_rng, label="pretrain-lstm", val=vt)
    params, hist = train_masked(params, X, Y, M, cfg.epochs, cfg.lr, cfg.batch_size, shuffle_rng, "lstm", vt)
    return params, {"observed": hist}


def train_yearly(train_all, task, cfg, val_all=None):
    """Yearly model on regime-composite 360-day sequences of the training years."""
    seqs = yearly_sequences(train_all, task)
    init_rng, shuffle_rng, _ = rng_streams(cfg.seed + 7919)
    X = np.stack([q.X for q in seqs])
    Y = np.stack([q.y for q in seqs])
    M = np.stack([q.mask for q in seqs])
    S = np.stack([q.sim_phys for q in seqs])
    params = new_decoder(X.shape[2], S, cfg, init_rng)
    vt = yearly_val(val_all, task)
    if cfg.pretrain_yearly:
        return pretrain_simulated(params, X, S, Y, M, cfg, shuffle_rng, label="yearly", val=vt)
    params, hist = train_masked(params, X, Y, M, cfg.epochs, cfg.lr, cfg.batch_size, shuffle_rng, "yearly", vt)
    return params, {"observed": hist}


# --- joint encoder / decoder training --------------------------------------------

@dataclass
class AnchorItem:
    """One anchor's contribution to a joint-training step."""

    members: list                 # anchor first, then retrieved scenarios
    quad: tuple = None            # (positive, semi-positive, negative) or None
    active: np.ndarray = None     # members whose observations enter the loss

    def __post_init__(self):
        if self.active is None:
            self.active = np.array([m.n_obs > 0 for m in self.members])


def joint_loss_and_grads(encoder, decoder, items, lam, mu):
    """Combined objective  L = L_De + mu * L_En  averaged over anchors, with gradients.

    L_De reaches the encoder through the similarity weights of each retrieval set;
    L_En through the quadruple embeddings.
    """
    members, owner = [], []
    for a, it in enumerate(items):
        members.extend(it.members)
        owner.extend([a] * len(it.members))
    owner = np.array(owner)
    X = stack_inputs(members)
    Y, M = stack_targets(members)
    preds, dcache = nets.predict_forward(X, decoder)
    mse, dmse, _ = seq_mse(preds, Y, M)

    contributing = [a for a, it in enumerate(items) if it.active.any()]
    n_de = len(contributing)
    use_encoder = mu > 0 or any(len(it.members) > 1 for it in items)

    enc_seqs, enc_slots, seen = [], [], {}

    def slot_of(scn):
        if scn.id not in seen:
            seen[scn.id] = len(enc_seqs)
            enc_seqs.append(scn)
        return seen[scn.id]

    if use_encoder:
        for it in items:
            slot = {"members": [slot_of(m) for m in it.members]}
            if mu > 0:
                slot["quad"] = [slot_of(q) for q in it.quad]
            enc_slots.append(slot)
        E, ecache = nets.embed_forward(stack_inputs(enc_seqs), encoder)
        dE = np.zeros_like(E)

    wseq = np.zeros(len(members))
    start = 0
    for a, it in enumerate(items):
        idx = np.arange(start, start + len(it.members))
        start += len(it.members)
        if not it.active.any():
            continue
        if len(it.members) == 1:
            w = np.array([1.0])
        else:
            me = E[enc_slots[a]["members"]]
            w, _ = similarity_weights(me[0], me, active=it.active)
        wseq[idx] = w / n_de
        if len(it.members) > 1:
            dw = np.where(it.active, mse[idx], 0.0) / n_de
            d_anchor, d_members = similarity_weights_backward(me[0], me, dw, active=it.active)
            rows = enc_slots[a]["members"]
            np.add.at(dE, rows, d_members)
            dE[rows[0]] += d_anchor

    l_de = float(np.sum(wseq * mse))
    l_en = 0.0
    if mu > 0:
        for a, it in enumerate(items):
            r = enc_slots[a]["members"][0]
            q = enc_slots[a]["quad"]
            loss, dA, dP, dS, dN = multilevel_loss_grad(E[r], E[q[0]], E[q[1]], E[q[2]], lam)
            l_en += loss / len(items)
            c = mu / len(items)
            dE[r] += c * dA
            dE[q[0]] += c * dP
            dE[q[1]] += c * dS
            dE[q[2]] += c * dN

    g_dec = nets.predict_backward(wseq[:, None] * dmse, dcache, decoder)
    g_enc = nets.embed_backward(dE, ecache, encoder) if use_encoder else nets.zeros_like(encoder)
    return l_de + mu * l_en, l_de, l_en, g_enc, g_dec, n_de


@dataclass
class JointResult:
    encoder: dict
    decoder: dict
    index: EmbeddingIndex
    history: list = field(default_factory=list)


def encoder_warmup(encoder, anchors, pool, clusters, cfg, sample_rng, shuffle_rng):
    """Optional encoder-only epochs on the multi-level pairwise loss."""
    opt = nets.Adam(encoder, lr=cfg.lr)
    for _ in range(cfg.encoder_warmup_epochs):
        perm = shuffle_rng.permutation(len(anchors))
        for lo in range(0, len(anchors), cfg.batch_size):
            quads = [sample_quadruple(anchors[i], pool, clusters, sample_rng) for i in perm[lo:lo + cfg.batch_size]]
            E, cache = nets.embed_forward(stack_inputs([s for q in quads for s in q.members()]), encoder)
            dE = np.zeros_like(E)
            for j in range(len(quads)):
                _, *g = multilevel_loss_grad(*E[4 * j:4 * j + 4], cfg.lam)
                dE[4 * j:4 * j + 4] = np.array(g) / len(quads)
            encoder = opt.step(encoder, nets.embed_backward(dE, cache, encoder))
    return encoder


def joint_train(train_task, train_all, clusters, cfg, decoder=None, encoder=None, val=None):
    """Jointly train the scenario encoder and the shared monthly decoder.

    ``train_task`` are the anchors and the retrieval pool; ``train_all`` supplies
    the regime-composite pool for quadruple sampling. Given ``val`` scenarios, the
    encoder/decoder pair of the best-validation epoch is kept.
    """
    init_rng, shuffle_rng, sample_rng = rng_streams(cfg.seed)
    D = stack_inputs(train_task[:1]).shape[2]
    dec_init = new_decoder(D, np.stack([s.sim_phys for s in train_task]), cfg, init_rng)
    enc_init = nets.init_encoder(D, cfg.encoder_dim, init_rng)
    decoder = dec_init if decoder is None else nets.clone(decoder)
    encoder = enc_init if encoder is None else nets.clone(encoder)
    task = train_task[0].task
    pool = ScenarioPool(regime_pool(train_all, task)) if cfg.mu > 0 or cfg.encoder_warmup_epochs else None

    if cfg.encoder_warmup_epochs:
        encoder = encoder_warmup(encoder, train_task, pool, clusters, cfg, sample_rng, shuffle_rng)

    opt_dec = nets.Adam(decoder, lr=cfg.lr)
    opt_enc = nets.Adam(encoder, lr=cfg.lr)
    index = None
    history = []
    best = (monthly_rmse(decoder, val), -1, encoder, decoder) if val else None
    for epoch in range(cfg.epochs):
        if cfg.k > 0 and (index is None or index.stale):
            index = EmbeddingIndex.build(train_task, encoder, cfg.refresh_period)
        perm = shuffle_rng.permutation(len(train_task))
        l_tot, l_de_all, l_en_all = [], [], []
        for lo in range(0, len(train_task), cfg.batch_size):
            items = []
            for i in perm[lo:lo + cfg.batch_size]:
                anchor = train_task[i]
                members = [anchor]
                if cfg.k > 0:
                    pos = ensure_observed(index.embedding_of(anchor.id), index, cfg.k, exclude=anchor.id)
                    members += [index.scenarios[j] for j in pos]
                quad = None
                if cfg.mu > 0:
                    q = sample_quadruple(anchor, pool, clusters, sample_rng)
                    quad = (q.positive, q.semi_positive, q.negative)
                items.append(AnchorItem(members, quad))
            loss, l_de, l_en, g_enc, g_dec, n_de = joint_loss_and_grads(encoder, decoder, items, cfg.lam, cfg.mu)
            if n_de == 0 and cfg.mu == 0:
                continue
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, "joint")
            nets.check_finite(g_dec)
            nets.check_finite(g_enc)
            decoder = opt_dec.step(decoder, g_dec)
            encoder = opt_enc.step(encoder, g_enc)
            l_tot.append(loss)
            l_de_all.append(l_de)
            l_en_all.append(l_en)
        row = {"epoch": epoch, "loss": float(np.mean(l_tot)) if l_tot else math.nan,
               "L_De": float(np.mean(l_de_all)) if l_de_all else math.nan,
               "L_En": float(np.mean(l_en_all)) if l_en_all else math.nan}
        if val:
            row["val_rmse"] = monthly_rmse(decoder, val)
            if row["val_rmse"] < best[0]:
                best = (row["val_rmse"], epoch, encoder, decoder)
        history.append(row)
        log.debug("joint epoch %d %s", epoch, row)
        if index is not None:
            index.tick()
    if best is not None:
        log.debug("joint: best validation epoch %d (rmse %.4f)", best[1], best[0])
        encoder, decoder = best[2], best[3]
    final_index = EmbeddingIndex.build(train_task, encoder, cfg.refresh_period)
    return JointResult(encoder, decoder, final_index, history)


# --- fine-tuning ----------------------------------------------------------------

def finetune(anchor, decoder, index, cfg, anchor_emb=None):
    """Scenario-specific copy of the decoder tuned on the anchor's retrieval set.

    Index embeddings and the given decoder are left untouched. Returns
    (params, batch, losses) where losses[0] is the loss before any update.
    """
    if anchor_emb is None:
        anchor_emb = index.embedding_of(anchor.id)
    batch = build_batch(anchor, anchor_emb, index, max(cfg.k, 1))
    members = batch.members
    active = np.array([m.n_obs > 0 for m in members])
    if not cfg.finetune_on_anchor_obs:
        active[0] = False
    w = np.where(active, batch.weights, 0.0)
    X = stack_inputs(members)
    Y, M = stack_targets(members)
    M = M * active[:, None]
    params = nets.clone(decoder)
    opt = nets.Adam(params, lr=cfg.finetune_lr)
    losses = []
    for _ in range(cfg.finetune_epochs):
        preds, cache = nets.predict_forward(X, params)
        loss, dpred = weighted_masked_mse(preds, Y, M, w)
        losses.append(loss)
        params = opt.step(params, nets.predict_backward(dpred, cache, params))
    preds, _ = nets.predict_forward(X, params)
    losses.append(weighted_masked_mse(preds, Y, M, w)[0])
    return params, batch, losses


def finetuned_predictions(scenarios, decoder, encoder, index, cfg, jobs=1):
    """Fine-tune per scenario and predict its 30 days; returns (preds (N, 30), batches)."""
    embs = encode(scenarios, encoder)

    def one(i):
        params, batch, _ = finetune(scenarios[i], decoder, index, cfg, embs[i])
        return nets.lstm_predict(scenarios[i].inputs, params), batch

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(jobs) as ex:
            res = list(ex.map(one, range(len(scenarios))))
    else:
        res = [one(i) for i in range(len(scenarios))]
    if not res:
        return np.zeros((0, N_DAYS)), []
    return np.stack([r[0] for r in res]), [r[1] for r in res]


# --- prediction and errors -------------------------------------------------------

def predict_monthly(decoder, scenarios):
    if not scenarios:
        return np.zeros((0, N_DAYS))
    return nets.predict_forward(stack_inputs(scenarios), decoder)[0]


def predict_yearly(params, all_scenarios, task):
    """Yearly-model predictions keyed by (lake_id, year), each of length 360."""
    seqs = yearly_sequences(all_scenarios, task)
    if not seqs:
        return {}
    P = nets.predict_forward(np.stack([q.X for q in seqs]), params)[0]
    return {(q.lake_id, q.year): P[i] for i, q in enumerate(seqs)}


def slice_year(year_pred, scenario):
    lo = scenario.day_offset
    return year_pred[lo:lo + N_DAYS]


def yearly_scenario_predictions(params, all_scenarios, scenarios):
    by_year = predict_yearly(params, all_scenarios, scenarios[0].task) if scenarios else {}
    return np.stack([slice_year(by_year[(s.lake_id, s.year)], s) for s in scenarios]) if scenarios \
        else np.zeros((0, N_DAYS))


def monthly_error(scenario, pred):
    return masked_mse(pred, scenario.y, scenario.mask)


def yearly_error(scenario, year_pred):
    return masked_mse(slice_year(year_pred, scenario), scenario.y, scenario.mask)


def monthly_rmse(decoder, scenarios):
    obs = [s for s in scenarios if s.n_obs > 0]
    if not obs:
        return math.nan
    P = predict_monthly(decoder, obs)
    return rmse(P, [s.y for s in obs], [s.mask for s in obs])
