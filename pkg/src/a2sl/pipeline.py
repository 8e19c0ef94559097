"""End-to-end experiment: data, training of every arm, validation labeling and test evaluation."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import adaptive, nets
from .dataset import build_benchmark_split
from .errors import DegenerateLabels
from .forecaster import (_monthly_arrays, finetuned_predictions, joint_train, new_decoder, predict_monthly, rmse,
                         rng_streams, train_masked, train_monthly_baseline, train_yearly,
                         yearly_scenario_predictions)
from .retrieval import EmbeddingIndex, encode
from .simkit import generate_benchmark, load_benchmark
from .ssl import cluster_lakes

log = logging.getLogger(__name__)

BASELINE_ROLES = {"no-pretrain": "lstm_no-pretrain", "pretrain": "lstm_pretrain"}


@dataclass
class Benchmark:
    records: list
    split: object          # normalized DatasetSplit over all tasks
    clusters: object

    def task_split(self, task):
        return self.split.for_task(task)


def make_benchmark(cfg, records=None):
    if records is None:
        records = generate_benchmark(n_lakes=cfg.n_lakes, n_years=cfg.n_years, seed=cfg.data_seed,
                                     sigma_obs=cfg.sigma_obs)
    clusters = cluster_lakes([r.lake for r in records], K=cfg.train.n_clusters, seed=cfg.cluster_seed)
    split = build_benchmark_split(records, cfg.train_end, cfg.val_end)
    return Benchmark(records, split, clusters)


def load_or_make_benchmark(cfg):
    path = cfg.data_path
    if (path / "lakes.csv").exists():
        return make_benchmark(cfg, load_benchmark(path))
    return make_benchmark(cfg)


def observed(scenarios):
    return [s for s in scenarios if s.n_obs > 0]


def write_csv(path, columns, rows, header=""):
    """CSV with an optional ``# header`` line; floats are written with repr for exact round trips."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            vals = [r.get(c, "") if isinstance(r, dict) else r[i] for i, c in enumerate(columns)]
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in vals])


# --- checkpoints ---------------------------------------------------------------------

class NullStore:
    def load(self, role):
        return None

    def save(self, role, params, curve=None):
        pass


class CheckpointStore:
    """Per-(seed, task) directory of role checkpoints and training curves.

    A checkpoint is reused only when its model hash, seed and role match.
    """

    def __init__(self, run_dir, cfg, seed):
        self.dir = Path(run_dir)
        self.cfg, self.seed = cfg, seed

    def meta(self, role):
        return f"{self.cfg.provenance(self.seed)} model={self.cfg.model_hash()} role={role}"

    def path(self, role):
        return self.dir / f"{role}.ckpt"

    def load(self, role):
        p = self.path(role)
        if not p.exists():
            return None
        have = set(nets.checkpoint_meta(p).split())
        want = {f"model={self.cfg.model_hash()}", f"seed={self.seed}", f"role={role}"}
        if not want <= have:
            log.warning("%s was written under a different configuration; retraining", p)
            return None
        log.info("resuming %s from %s", role, p)
        return nets.load_params(p)

    def save(self, role, params, curve=None):
        nets.save_params(self.path(role), params, self.meta(role))
        if curve:
            cols = list(dict.fromkeys(k for row in curve for k in row))
            write_csv(self.dir / f"curve_{role}.csv", cols, curve, self.cfg.provenance(self.seed))


def _curve_rows(hist):
    if isinstance(hist, list):
        return hist
    return [{"phase": phase, **row} for phase, rows in hist.items() for row in rows]


# --- models ----------------------------------------------------------------------------

@dataclass
class TrainedModels:
    encoder: dict = None
    alpha: dict = None
    gamma: dict = None
    baselines: dict = field(default_factory=dict)     # arm -> decoder params
    index: object = None
    disc: object = None
    labels: object = None


class ConstantDiscriminator:
    """Stand-in when validation labels have a single class."""

    def __init__(self, p, tau=0.5):
        self.p, self.tau = p, tau

    def prob(self, features):
        return np.full(len(np.atleast_2d(features)), self.p)


def disc_to_params(disc):
    if isinstance(disc, ConstantDiscriminator):
        return {"const_p": np.array([disc.p])}
    out = {"mlp." + k: v for k, v in disc.params.items()}
    out.update(feat_mean=disc.feat_mean, feat_std=disc.feat_std)
    return out


def disc_from_params(p, tau):
    if "const_p" in p:
        return ConstantDiscriminator(float(p["const_p"][0]), tau)
    return adaptive.Discriminator({k[4:]: v for k, v in p.items() if k.startswith("mlp.")},
                                  p["feat_mean"], p["feat_std"], tau)


def pretrain_alpha(train_task, cfg):
    """Dense simulated-label pre-training of the shared monthly decoder (same init stream as the baselines)."""
    init_rng, shuffle_rng, _ = rng_streams(cfg.seed)
    X, _, _, S = _monthly_arrays(train_task)
    params = new_decoder(X.shape[2], S, cfg, init_rng)
    dense = np.ones_like(S, dtype=np.int8)
    return train_masked(params, X, S, dense, cfg.pretrain_epochs, cfg.lr, cfg.batch_size, shuffle_rng, "alpha")


def scenario_predictions(bench, models, scenarios, tcfg, jobs=1):
    """Fine-tuned monthly and sliced yearly predictions for the given scenarios."""
    monthly, batches = finetuned_predictions(scenarios, models.alpha, models.encoder, models.index, tcfg, jobs)
    yearly = yearly_scenario_predictions(models.gamma, bench.split.all(), scenarios)
    return monthly, yearly, batches


def fit_discriminator(bench, models, task, tcfg, disc_cfg, tau, jobs=1):
    """Label validation scenarios and train the discriminator on them."""
    val = observed(bench.task_split(task).validation)
    monthly, yearly, _ = scenario_predictions(bench, models, val, tcfg, jobs)
    labels = adaptive.label_scenarios(val, monthly, yearly)
    feats = adaptive.summary_features(val, encode(val, models.encoder))
    y = np.array([labels.label_of(s.id) for s in val])
    try:
        disc = adaptive.train_discriminator(feats, y, disc_cfg, tau)
    except DegenerateLabels:
        p = 1.0 - 1e-6 if y.all() else 1e-6
        log.warning("validation labels have one class; routing everything with p=%g", p)
        disc = ConstantDiscriminator(p, tau)
    return disc, labels


def train_arms(bench, cfg, seed, store=None, jobs=1, select_val=True, arms=None):
    """Train (or resume) every configured arm for one seed.

    The a2sl arm comprises the encoder, M_alpha, M_gamma and the discriminator.
    """
    store = store or NullStore()
    task = cfg.task
    tcfg = replace(cfg.train, seed=seed)
    ts = bench.task_split(task)
    val = observed(ts.validation) if select_val else None
    val_all = bench.split.validation if select_val else None
    m = TrainedModels()
    for arm in arms or cfg.arm_list:
        t0 = time.perf_counter()
        if arm in BASELINE_ROLES:
            role = BASELINE_ROLES[arm]
            p = store.load(role)
            if p is None:
                p, hist = train_monthly_baseline(ts.train, tcfg, arm == "pretrain", val)
                store.save(role, p, _curve_rows(hist))
            m.baselines[arm] = p
        elif arm == "a2sl":
            enc, alpha = store.load("encoder"), store.load("alpha")
            if enc is None or alpha is None:
                dec0 = None
                if tcfg.pretrain_alpha:
                    dec0, hist = pretrain_alpha(ts.train, tcfg)
                    store.save("alpha_pretrain", dec0, _curve_rows(hist))
                res = joint_train(ts.train, bench.split.train, bench.clusters, tcfg, decoder=dec0, val=val)
                enc, alpha = res.encoder, res.decoder
                store.save("encoder", enc)
                store.save("alpha", alpha, res.history)
            m.encoder, m.alpha = enc, alpha
            m.index = EmbeddingIndex.build(ts.train, enc, tcfg.refresh_period)
            gamma = store.load("gamma")
            if gamma is None:
                gamma, hist = train_yearly(bench.split.train, task, tcfg, val_all)
                store.save("gamma", gamma, _curve_rows(hist))
            m.gamma = gamma
            dp = store.load("disc")
            if dp is None:
                dcfg = adaptive.DiscConfig(hidden_dim=cfg.disc_hidden, lr=cfg.disc_lr,
                                           patience=cfg.disc_patience, seed=seed)
                m.disc, m.labels = fit_discriminator(bench, m, task, tcfg, dcfg, cfg.tau, jobs)
                curve = [{"epoch": i, "heldout_bce": v} for i, v in enumerate(getattr(m.disc, "history", []))]
                store.save("disc", disc_to_params(m.disc), curve)
            else:
                m.disc = disc_from_params(dp, cfg.tau)
        log.info("seed %d: %s ready in %.1fs", seed, arm, time.perf_counter() - t0)
    return m


# --- evaluation -----------------------------------------------------------------------

@dataclass
class Evaluation:
    scenarios: list
    preds: dict                 # name -> (N, 30)
    p: np.ndarray
    branches: list
    rmse: dict
    variable_rmse: dict
    n_variable: int


def evaluate(bench, models, cfg, seed, jobs=1, scenarios=None):
    """Test RMSE of every trained arm, over observed test days only."""
    tcfg = replace(cfg.train, seed=seed)
    test = observed(bench.task_split(cfg.task).test) if scenarios is None else scenarios
    preds = {arm: predict_monthly(p, test) for arm, p in models.baselines.items()}
    if models.alpha is not None:
        monthly, yearly, _ = scenario_predictions(bench, models, test, tcfg, jobs)
        p = models.disc.prob(adaptive.summary_features(test, encode(test, models.encoder)))
        routed, branches, _ = adaptive.routed_predictions(test, p, cfg.tau, yearly, monthly)
        preds.update({"a2sl": routed, "a2sl-monthly": monthly, "a2sl-yearly": yearly,
                      "alpha": predict_monthly(models.alpha, test)})
    else:
        p, branches = np.zeros(len(test)), ["none"] * len(test)
    ys, ms = [s.y for s in test], [s.mask for s in test]
    scores = {k: rmse(v, ys, ms) for k, v in preds.items()}
    var = np.flatnonzero(p > cfg.tau)
    var_scores = {}
    if len(var):
        for k, v in preds.items():
            var_scores[k] = rmse(v[var], [ys[i] for i in var], [ms[i] for i in var])
    return Evaluation(test, preds, p, branches, scores, var_scores, len(var))


def run_seed(bench, cfg, seed, jobs=1, store=None):
    """Train every configured arm for one seed and evaluate on the test split."""
    t0 = time.perf_counter()
    models = train_arms(bench, cfg, seed, store, jobs)
    ev = evaluate(bench, models, cfg, seed, jobs)
    log.info("seed %d done in %.1fs: %s", seed, time.perf_counter() - t0, ev.rmse)
    return models, ev


def summarize(values):
    """(mean, std, count) of the finite values."""
    v = np.asarray([x for x in values if x is not None and not math.isnan(x)], float)
    if not len(v):
        return math.nan, math.nan, 0
    return float(v.mean()), float(v.std()), len(v)
