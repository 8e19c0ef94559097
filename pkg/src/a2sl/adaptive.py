"""Variable/stable labeling, the discriminator and routing between yearly and monthly models."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nets
from .errors import DegenerateLabels, InvalidArgument
from .forecaster import masked_mse, rmse
from .retrieval import scenario_key

log = logging.getLogger(__name__)

TAU_GRID = tuple(round(0.1 * i, 1) for i in range(11))


@dataclass
class ScenarioLabelSet:
    variable: set
    stable: set
    errors: dict = field(default_factory=dict)    # id -> (E_beta, E_gamma)
    excluded: list = field(default_factory=list)

    def label_of(self, sid):
        return 1 if sid in self.variable else 0


def label_scenarios(scenarios, beta_preds, gamma_preds):
    """Variable iff the fine-tuned monthly model has strictly lower masked MSE than the yearly one."""
    variable, stable, errors, excluded = set(), set(), {}, []
    for s, pb, pg in zip(scenarios, beta_preds, gamma_preds):
        e_b = masked_mse(pb, s.y, s.mask)
        e_g = masked_mse(pg, s.y, s.mask)
        if e_b is None or e_g is None:
            excluded.append(s.id)
            log.info("scenario %s has no observations; left unlabeled", s.id)
            continue
        errors[s.id] = (e_b, e_g)
        (variable if e_b < e_g else stable).add(s.id)
    return ScenarioLabelSet(variable, stable, errors, excluded)


def summary_features(scenarios, embeddings):
    """Frozen embedding followed by per-channel mean, std, min and max of the input matrix."""
    rows = []
    for s, e in zip(scenarios, embeddings):
        X = s.inputs
        rows.append(np.concatenate([e, X.mean(axis=0), X.std(axis=0), X.min(axis=0), X.max(axis=0)]))
    return np.array(rows)


@dataclass
class DiscConfig:
    hidden_dim: int = 16
    lr: float = 0.01
    batch_size: int = 16
    max_epochs: int = 300
    patience: int = 10
    holdout_frac: float = 0.25
    seed: int = 0


@dataclass
class Discriminator:
    params: dict
    feat_mean: np.ndarray
    feat_std: np.ndarray
    tau: float = 0.5
    history: list = field(default_factory=list)

    def prob(self, features):
        Z = (np.atleast_2d(features) - self.feat_mean) / self.feat_std
        return nets.sigmoid(nets.mlp_forward(Z, self.params)[0])


def bce_objective(p, labels):
    """Sum of log p over variable plus log(1 - p) over stable samples (to be maximised)."""
    p = np.asarray(p, float)
    y = np.asarray(labels, float)
    return float(np.sum(y * np.log(p) + (1 - y) * np.log1p(-p)))


def balanced_weights(labels):
    y = np.asarray(labels)
    n1, n0 = int(y.sum()), int(len(y) - y.sum())
    return np.where(y == 1, 0.5 / max(n1, 1), 0.5 / max(n0, 1))


def disc_loss_and_grads(params, Z, labels, weights=None):
    logits, cache = nets.mlp_forward(Z, params)
    loss, dlogit = nets.bce_loss(logits, labels, weights)
    return loss, nets.mlp_backward(dlogit, cache, params)


def train_discriminator(features, labels, cfg=DiscConfig(), tau=0.5):
    """Class-balanced mini-batch BCE training with early stopping on a held-out part."""
    y = np.asarray(labels, int)
    if y.min() == y.max():
        raise DegenerateLabels("discriminator needs both variable and stable scenarios")
    if not (0.0 < tau < 1.0):
        raise InvalidArgument(f"tau must lie in (0, 1), got {tau}")
    X = np.asarray(features, float)
    rng = np.random.default_rng(cfg.seed)

    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    hold = []
    for cls in (pos, neg):
        n_hold = int(round(cfg.holdout_frac * len(cls)))
        if len(cls) - n_hold >= 1 and n_hold >= 1:
            hold.extend(rng.permutation(cls)[:n_hold].tolist())
    hold = np.array(sorted(hold), dtype=int)
    train = np.setdiff1d(np.arange(len(y)), hold)
    if len(hold) == 0 or len(np.unique(y[hold])) < 2:
        hold = train

    mean = X[train].mean(axis=0)
    std = X[train].std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    Z = (X - mean) / std

    params = nets.init_mlp(X.shape[1], cfg.hidden_dim, rng)
    opt = nets.Adam(params, lr=cfg.lr)
    tr_pos, tr_neg = train[y[train] == 1], train[y[train] == 0]
    hw = balanced_weights(y[hold])
    best = (math.inf, params)
    since_best = 0
    history = []
    half = max(1, cfg.batch_size // 2)
    n_batches = max(1, math.ceil(len(train) / cfg.batch_size))
    for epoch in range(cfg.max_epochs):
        for _ in range(n_batches):
            b = np.concatenate([rng.choice(tr_pos, half), rng.choice(tr_neg, half)])
            _, g = disc_loss_and_grads(params, Z[b], y[b])
            params = opt.step(params, g)
        held = disc_loss_and_grads(params, Z[hold], y[hold], hw)[0]
        history.append(held)
        if held < best[0] - 1e-12:
            best = (held, nets.clone(params))
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return Discriminator(best[1], mean, std, tau, history)


@dataclass
class RoutedPrediction:
    pred: np.ndarray
    branch: str
    p: float


def route_predict(scenario, p, tau, yearly_fn, monthly_fn, calls=None):
    """Return the yearly prediction when p <= tau, otherwise the fine-tuned monthly one.

    Only the selected model is invoked; ``calls`` counts invocations per scenario.
    """
    if p <= tau:
        branch, pred = "yearly", yearly_fn(scenario)
    else:
        branch, pred = "monthly", monthly_fn(scenario)
    if calls is not None:
        calls[scenario.id] += 1
    return RoutedPrediction(np.asarray(pred), branch, float(p))


def routed_predictions(scenarios, p, tau, yearly_preds, monthly_preds):
    """Routing over precomputed predictions of both models; returns (preds, branches, calls)."""
    calls = Counter()
    out, branches = [], []
    for i, s in enumerate(scenarios):
        r = route_predict(s, p[i], tau, lambda _s: yearly_preds[i], lambda _s: monthly_preds[i], calls)
        out.append(r.pred)
        branches.append(r.branch)
    return np.array(out), branches, calls


def oracle_predictions(scenarios, yearly_preds, monthly_preds):
    """Per-scenario choice of whichever model has the smaller squared error."""
    out = []
    for s, py, pm in zip(scenarios, yearly_preds, monthly_preds):
        m = s.mask.astype(bool)
        ey = np.sum((py[m] - s.y[m]) ** 2)
        em = np.sum((pm[m] - s.y[m]) ** 2)
        out.append(pm if em < ey else py)
    return np.array(out)


def _rmse_of(scenarios, preds):
    return rmse(preds, [s.y for s in scenarios], [s.mask for s in scenarios])


def threshold_sweep(scenarios, p, yearly_preds, monthly_preds, taus=TAU_GRID):
    """Routed RMSE for each threshold, overall and per (lake, year).

    Returns a dict with ``overall`` {tau: rmse}, ``per_lake_year`` rows, and the
    all-yearly, all-monthly and oracle reference RMSEs.
    """
    scenarios = [s for s in scenarios]
    groups = {}
    for i, s in enumerate(scenarios):
        if s.n_obs:
            groups.setdefault((s.lake_id, s.year), []).append(i)
    overall, per_group = {}, []
    for tau in taus:
        preds, _, _ = routed_predictions(scenarios, p, tau, yearly_preds, monthly_preds)
        overall[tau] = _rmse_of(scenarios, preds)
        for key in sorted(groups):
            idx = groups[key]
            per_group.append((tau, key[0], key[1], _rmse_of([scenarios[i] for i in idx], preds[idx])))
    return {
        "overall": overall,
        "per_lake_year": per_group,
        "all_yearly": _rmse_of(scenarios, np.asarray(yearly_preds)),
        "all_monthly": _rmse_of(scenarios, np.asarray(monthly_preds)),
        "oracle": _rmse_of(scenarios, oracle_predictions(scenarios, yearly_preds, monthly_preds)),
    }


def write_routing(path, scenarios, p, branches, labels=None, header=""):
    """CSV of routing decisions with validation errors where known."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    errors = labels.errors if labels is not None else {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "p", "branch", "E_beta", "E_gamma"])
        for s, pi, b in zip(scenarios, p, branches):
            e = errors.get(s.id, ("", ""))
            w.writerow([scenario_key(s.id), repr(float(pi)), b, *(repr(v) if v != "" else "" for v in e)])
