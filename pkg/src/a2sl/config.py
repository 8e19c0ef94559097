"""Run configuration: a flat key = value text file with a stable hash."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

from .errors import FormatError, InvalidArgument
from .forecaster import ARMS, TrainConfig
from .simkit import TASKS


@dataclass
class RunConfig:
    out_dir: str = "runs/default"
    data_dir: str = ""               # defaults to <out_dir>/data
    n_lakes: int = 24
    n_years: int = 12
    data_seed: int = 7
    sigma_obs: float = 0.3
    train_end: int = 8
    val_end: int = 10
    task: str = "DO_hyp"
    arms: str = ",".join(ARMS)
    seed: int = 0
    runs: int = 5                    # seeds seed .. seed+runs-1 for reports
    tau: float = 0.5
    cluster_seed: int = 0
    disc_hidden: int = 16
    disc_lr: float = 0.01
    disc_patience: int = 10
    inspect_anchors: int = 10
    jobs: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidArgument(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        bad = [a for a in self.arm_list if a not in ARMS]
        if bad:
            raise InvalidArgument(f"unknown arm(s) {bad}; choose from {', '.join(ARMS)}")
        if not (0.0 < self.tau < 1.0):
            raise InvalidArgument(f"tau must lie in (0, 1), got {self.tau}")
        if self.runs < 1 or self.jobs < 1:
            raise InvalidArgument("runs and jobs must be >= 1")

    @property
    def arm_list(self):
        return [a.strip() for a in self.arms.split(",") if a.strip()]

    @property
    def data_path(self):
        return Path(self.data_dir) if self.data_dir else Path(self.out_dir) / "data"

    def items(self):
        """Flat (key, value) pairs; training options are prefixed with ``train.``."""
        out = []
        for f in fields(self):
            if f.name == "train":
                out.extend((f"train.{k}", v) for k, v in asdict(self.train).items())
            else:
                out.append((f.name, getattr(self, f.name)))
        return sorted(out)

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    def _digest(self, skip):
        text = "".join(f"{k}={v!r}\n" for k, v in self.items() if k not in skip)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def hash(self):
        """Digest over everything that affects results (paths and job count excluded)."""
        return self._digest({"out_dir", "data_dir", "jobs"})

    def model_hash(self):
        """Digest of what a trained model depends on; seed and reporting options are excluded."""
        return self._digest({"out_dir", "data_dir", "jobs", "seed", "runs", "arms", "tau", "inspect_anchors"})

    def provenance(self, seed=None):
        return f"config={self.hash()} seed={self.seed if seed is None else seed}"

    def with_overrides(self, **kw):
        d = dict(self.items())
        d.update(kw)
        return from_pairs(d)


def _coerce(raw, kind):
    if kind is bool:
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)
    if kind is float and str(raw).strip() == "None":
        return None
    return kind(raw)


_KINDS = {"int": int, "float": float, "str": str, "bool": bool}


def _kind(f):
    t = f.type if isinstance(f.type, str) else f.type.__name__
    return _KINDS[t]


def from_pairs(pairs):
    top = {f.name: f for f in fields(RunConfig) if f.name != "train"}
    tr = {f.name: f for f in fields(TrainConfig)}
    kw, tkw = {}, {}
    for key, raw in pairs.items():
        try:
            if key.startswith("train."):
                name = key[len("train."):]
                if name not in tr:
                    raise FormatError(f"unknown config key {key!r}")
                v = raw if not isinstance(raw, str) else _coerce(raw, _kind(tr[name]))
                tkw[name] = v
            elif key in top:
                kw[key] = raw if not isinstance(raw, str) else _coerce(raw, _kind(top[key]))
            else:
                raise FormatError(f"unknown config key {key!r}")
        except FormatError:
            raise
        except ValueError:
            raise FormatError(f"bad value for {key!r}: {raw!r}") from None
    return RunConfig(train=TrainConfig(**tkw), **kw)


def parse_text(text):
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {n}: expected 'key = value', got {line!r}")
        k, v = (p.strip() for p in line.split("=", 1))
        pairs[k] = v
    return from_pairs(pairs)


def load(path):
    p = Path(path)
    if not p.exists():
        raise InvalidArgument(f"config file not found: {p}")
    return parse_text(p.read_text(encoding="utf-8"))


def save(cfg, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(f"# {cfg.provenance()}\n" + cfg.to_text(), encoding="utf-8")
