"""Finite-difference checks of the three hand-written gradients on small random instances."""

from __future__ import annotations

import numpy as np

from . import adaptive, nets
from .dataset import Scenario
from .forecaster import AnchorItem, joint_loss_and_grads
from .retrieval import similarity_weights
from .ssl import multilevel_loss_grad

TOL = 1e-4


def _check(fn, analytic, params, step=1e-5):
    keys = [k for k in params if k in analytic]
    numeric = nets.numeric_grad(fn, params, step, keys)
    return nets.max_rel_error(analytic, numeric)


def encoder_loss_instance(seed, D=3, H=3, T=5):
    """Relative error of dL_En/d(encoder) for one random quadruple."""
    rng = np.random.default_rng(seed)
    enc = nets.init_encoder(D, H, rng)
    X = rng.normal(size=(4, T, D))
    lam = float(rng.uniform(0.05, 0.95))

    def loss(p):
        E, _ = nets.embed_forward(X, p)
        return multilevel_loss_grad(*E, lam)[0]

    E, cache = nets.embed_forward(X, enc)
    _, *dE = multilevel_loss_grad(*E, lam)
    return _check(loss, nets.embed_backward(np.array(dE), cache, enc), enc)


def _random_scenario(rng, lake, T, m):
    mask = (rng.random(T) < 0.6).astype(np.int8)
    mask[rng.integers(T)] = 1
    y = np.where(mask > 0, rng.normal(size=T), np.nan)
    return Scenario(lake, 1, int(rng.integers(1, 13)), "DO_hyp", rng.normal(size=(T, m)), rng.normal(size=T), y, mask)


def _weights_away_from_kink(items, enc, margin=1e-3):
    for it in items:
        if len(it.members) < 2:
            continue
        E, _ = nets.embed_forward(np.stack([s.inputs for s in it.members]), enc)
        _, sims = similarity_weights(E[0], E)
        if np.any(np.abs(sims) < margin):
            return False
    return True


def decoder_loss_instance(seed, mu=0.0, m=2, H=3, T=5):
    """Relative error of the combined objective w.r.t. encoder and decoder for one random batch.

    With mu = 0 the encoder is reached only through the similarity weights.
    """
    rng = np.random.default_rng(seed)
    D = m + 1
    while True:
        enc = nets.init_encoder(D, H, rng)
        dec = nets.init_decoder(D, H, rng, out_shift=float(rng.normal()), out_scale=float(rng.uniform(0.5, 2)))
        items = []
        lake = 0
        for _ in range(2):
            members = []
            for _ in range(int(rng.integers(2, 4))):
                members.append(_random_scenario(rng, lake, T, m))
                lake += 1
            quad = tuple(_random_scenario(rng, lake + j, T, m) for j in range(3)) if mu > 0 else None
            lake += 3
            active = np.array([s.n_obs > 0 for s in members])
            active[-1] = bool(rng.random() < 0.5)
            items.append(AnchorItem(members, quad, active))
        if _weights_away_from_kink(items, enc):
            break
    lam = float(rng.uniform(0.05, 0.95))
    _, _, _, g_enc, g_dec, _ = joint_loss_and_grads(enc, dec, items, lam, mu)
    params = {**{"enc." + k: v for k, v in enc.items()}, **{"dec." + k: v for k, v in dec.items()}}
    analytic = {**{"enc." + k: v for k, v in g_enc.items()}, **{"dec." + k: v for k, v in g_dec.items()}}

    def loss(p):
        e = {k[4:]: v for k, v in p.items() if k.startswith("enc.")}
        d = {k[4:]: v for k, v in p.items() if k.startswith("dec.")}
        return joint_loss_and_grads(e, d, items, lam, mu)[0]

    return _check(loss, analytic, params)


def bce_instance(seed, F=5, H=4, N=8):
    """Relative error of the class-weighted BCE gradient of the discriminator MLP."""
    rng = np.random.default_rng(seed)
    p = nets.init_mlp(F, H, rng)
    Z = rng.normal(size=(N, F))
    y = np.array([0, 1] * (N // 2))
    w = adaptive.balanced_weights(y)
    _, g = adaptive.disc_loss_and_grads(p, Z, y, w)
    return _check(lambda q: adaptive.disc_loss_and_grads(q, Z, y, w)[0], g, p)


SUITES = {
    "L_En": lambda s: encoder_loss_instance(s),
    "L_De": lambda s: decoder_loss_instance(s, mu=0.0),
    "L_De+mu*L_En": lambda s: decoder_loss_instance(s, mu=0.7),
    "BCE": lambda s: bce_instance(s),
}


def run(n_instances=20, seed=0, suites=None):
    """{suite: list of max relative errors}, one per seeded instance."""
    out = {}
    for name in suites or SUITES:
        out[name] = [SUITES[name](seed * 100003 + i) for i in range(n_instances)]
    return out
