"""Scenario chunking, year splits, normalization and model inputs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument
from .simkit import DAYS_PER_MONTH, DAYS_PER_YEAR, SUMMER_MONTHS, STATIC_FEATURE_NAMES, TASKS

N_DAYS = DAYS_PER_MONTH
# The heat-wave flag stays in the drivers but is not a model input; its effect is in air_temp.
FEATURE_NAMES = ("air_temp", "shortwave", "wind", "doy_sin", "doy_cos") + STATIC_FEATURE_NAMES
LAYERED = {"T_epi", "T_hyp", "DO_epi", "DO_hyp"}


def quantity(task):
    return task.split("_")[0]


def task_months(task, summer=SUMMER_MONTHS):
    if task in LAYERED:
        return tuple(summer)
    return tuple(m for m in range(1, 13) if m not in summer)


def companion_task(task):
    """Task that fills the months ``task`` is not defined in (same quantity)."""
    q = quantity(task)
    return f"{q}_total" if task in LAYERED else f"{q}_epi"


def regime_task(task, month, summer=SUMMER_MONTHS):
    return task if month in task_months(task, summer) else companion_task(task)


@dataclass
class Scenario:
    lake_id: int
    year: int
    month: int
    task: str
    x: np.ndarray          # (n, m) daily features
    sim: np.ndarray        # (n,) simulated labels as fed to models
    y: np.ndarray          # (n,) observations, physical units, NaN where unobserved
    mask: np.ndarray       # (n,) int8
    sim_phys: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.sim_phys is None:
            self.sim_phys = self.sim

    @cached_property
    def id(self):
        return (self.lake_id, self.year, self.month, self.task)

    @cached_property
    def inputs(self):
        """(n, m+1) model inputs: features followed by the simulated label."""
        return np.column_stack([self.x, self.sim])

    @property
    def n_obs(self):
        return int(self.mask.sum())

    @property
    def day_offset(self):
        """Index of this scenario's first day within its year."""
        return (self.month - 1) * DAYS_PER_MONTH


@dataclass
class NormStats:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    sim_mean: dict
    sim_std: dict

    def to_dict(self):
        return {
            "feature_names": list(FEATURE_NAMES),
            "feature_mean": [float(v) for v in self.feature_mean],
            "feature_std": [float(v) for v in self.feature_std],
            "sim_mean": {k: float(v) for k, v in self.sim_mean.items()},
            "sim_std": {k: float(v) for k, v in self.sim_std.items()},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["feature_mean"]), np.array(d["feature_std"]), dict(d["sim_mean"]), dict(d["sim_std"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    stats: NormStats = None

    def all(self):
        return self.train + self.validation + self.test

    def for_task(self, task):
        pick = lambda scns: [s for s in scns if s.task == task]
        return DatasetSplit(pick(self.train), pick(self.validation), pick(self.test), self.stats)


def daily_features(record):
    """(days, m) feature matrix in FEATURE_NAMES order."""
    d = record.drivers
    doy = (d.day % DAYS_PER_YEAR).astype(np.float64)
    ang = 2 * np.pi * doy / DAYS_PER_YEAR
    dyn = np.column_stack([d.air_temp, d.shortwave, d.wind, np.sin(ang), np.cos(ang)])
    static = np.broadcast_to(record.lake.static_features(), (len(d), len(STATIC_FEATURE_NAMES)))
    return np.hstack([dyn, static])


def chunk_years(record, tasks=TASKS, summer=SUMMER_MONTHS):
    """Cut one lake's daily record into 30-day scenarios, one per (month, applicable task)."""
    n = len(record.drivers)
    if n == 0 or n % DAYS_PER_YEAR:
        raise FormatError(f"lake {record.lake.lake_id}: {n} days is not a whole number of 360-day years")
    feats = daily_features(record)
    out = []
    for yi in range(n // DAYS_PER_YEAR):
        for month in range(1, 13):
            lo = yi * DAYS_PER_YEAR + (month - 1) * DAYS_PER_MONTH
            sl = slice(lo, lo + DAYS_PER_MONTH)
            for task in tasks:
                if month not in task_months(task, summer):
                    continue
                out.append(Scenario(
                    lake_id=record.lake.lake_id, year=yi + 1, month=month, task=task,
                    x=feats[sl].copy(), sim=record.sim[task][sl].copy(),
                    y=record.obs[task][sl].copy(), mask=record.mask[task][sl].astype(np.int8),
                ))
    return out


def split_by_year(scenarios, train_end, val_end):
    if not scenarios:
        raise InvalidArgument("no scenarios to split")
    max_year = max(s.year for s in scenarios)
    if not (train_end < val_end < max_year):
        raise InvalidArgument(f"need train_end < val_end < {max_year}, got {train_end}, {val_end}")
    train = [s for s in scenarios if s.year <= train_end]
    val = [s for s in scenarios if train_end < s.year <= val_end]
    test = [s for s in scenarios if s.year > val_end]
    for name, part in (("train", train), ("validation", val), ("test", test)):
        if not part:
            raise InvalidArgument(f"empty {name} split")
    return DatasetSplit(train, val, test)


def fit_stats(train):
    if not train:
        raise InvalidArgument("train split is empty")
    X = np.concatenate([s.x for s in train])
    std = np.where(X.max(axis=0) == X.min(axis=0), 0.0, X.std(axis=0))
    sim_mean, sim_std = {}, {}
    for q in sorted({quantity(s.task) for s in train}):
        v = np.concatenate([s.sim_phys for s in train if quantity(s.task) == q])
        sim_mean[q] = float(v.mean())
        sim_std[q] = float(v.std())
    return NormStats(X.mean(axis=0), std, sim_mean, sim_std)


def _safe(std):
    return np.where(std < 1e-12, 1.0, std)


def apply_stats(scenarios, stats):
    out = []
    fstd = _safe(stats.feature_std)
    live = stats.feature_std > 0   # constant train columns map to exactly 0
    for s in scenarios:
        q = quantity(s.task)
        sstd = float(_safe(np.array(stats.sim_std[q])))
        out.append(replace(
            s,
            x=np.where(live, (s.x - stats.feature_mean) / fstd, 0.0),
            sim=(s.sim_phys - stats.sim_mean[q]) / sstd,
            sim_phys=s.sim_phys,
        ))
    return out


def normalize(split, stats=None):
    """Z-score features and simulated labels with train statistics; observations stay physical."""
    stats = fit_stats(split.train) if stats is None else stats
    return DatasetSplit(apply_stats(split.train, stats), apply_stats(split.validation, stats),
                        apply_stats(split.test, stats), stats)


def build_input(scenario, t):
    """Model input for day t (1-based): features followed by the simulated label."""
    n = len(scenario.sim)
    if not (1 <= t <= n):
        raise InvalidArgument(f"day index {t} outside 1..{n}")
    return np.concatenate([scenario.x[t - 1], [scenario.sim[t - 1]]])


def scenario_inputs(scenario):
    return scenario.inputs


def stack_inputs(scenarios):
    return np.stack([scenario_inputs(s) for s in scenarios])


def stack_targets(scenarios):
    return np.stack([s.y for s in scenarios]), np.stack([s.mask for s in scenarios])


@dataclass
class YearSequence:
    lake_id: int
    year: int
    task: str
    X: np.ndarray         # (360, m+1)
    y: np.ndarray         # (360,) observations of ``task``; other months masked
    mask: np.ndarray
    sim_phys: np.ndarray  # regime-composite simulated labels


def yearly_sequences(scenarios, task, summer=SUMMER_MONTHS):
    """Regroup monthly scenarios into 360-day sequences for ``task``.

    Months outside the task's own season are filled from the companion task
    (e.g. DO_total outside summer for DO_hyp) and carry a zero mask.
    """
    wanted = {task, companion_task(task)}
    by_key = {}
    for s in scenarios:
        if s.task in wanted and s.task == regime_task(task, s.month, summer):
            by_key.setdefault((s.lake_id, s.year), {})[s.month] = s
    out = []
    for (lake_id, year), months in sorted(by_key.items()):
        if len(months) != 12:
            raise FormatError(f"lake {lake_id} year {year}: only {len(months)} months available for {task}")
        chunks = [months[m] for m in range(1, 13)]
        own = np.concatenate([np.full(N_DAYS, c.task == task) for c in chunks])
        out.append(YearSequence(
            lake_id=lake_id, year=year, task=task,
            X=np.concatenate([scenario_inputs(c) for c in chunks]),
            y=np.concatenate([c.y for c in chunks]),
            mask=np.concatenate([c.mask for c in chunks]) * own.astype(np.int8),
            sim_phys=np.concatenate([c.sim_phys for c in chunks]),
        ))
    return out


def build_benchmark_split(records, train_end, val_end, tasks=TASKS):
    scenarios = [s for r in records for s in chunk_years(r, tasks)]
    return normalize(split_by_year(scenarios, train_end, val_end))
