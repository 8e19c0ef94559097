import csv
import time
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from a2sl import config as cfgmod, pipeline, simkit
from a2sl.cli import main, run_dir
from a2sl.errors import FormatError, InvalidArgument

SMALL_TEXT = """\
# tiny preset for command tests
n_lakes = 12
n_years = 5
train_end = 3
val_end = 4
runs = 1
inspect_anchors = 4
train.epochs = 2
train.pretrain_epochs = 1
train.finetune_epochs = 2
"""


def rows_of(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "small.txt"
    cfg_path.write_text(SMALL_TEXT + f"out_dir = {root / 'out'}\n")
    codes = {}
    for cmd in ("simulate", "train", "evaluate", "sweep", "inspect"):
        codes[cmd] = main([cmd, "--config", str(cfg_path)])
    cfg = cfgmod.load(cfg_path)
    return cfg, cfg_path, codes


def test_commands_succeed(run):
    _, _, codes = run
    assert codes == dict.fromkeys(codes, 0)


def test_simulate_file_count_and_round_trip(run):
    cfg, _, _ = run
    files = sorted(cfg.data_path.glob("*.csv"))
    assert len(files) == cfg.n_lakes + 1
    back = simkit.load_benchmark(cfg.data_path)
    fresh = simkit.generate_benchmark(n_lakes=cfg.n_lakes, n_years=cfg.n_years, seed=cfg.data_seed,
                                      sigma_obs=cfg.sigma_obs)
    for a, b in zip(fresh, back):
        for t in simkit.TASKS:
            assert np.array_equal(a.sim[t], b.sim[t])
            assert np.array_equal(a.obs[t], b.obs[t], equal_nan=True)


def test_every_artifact_carries_provenance(run):
    cfg, _, _ = run
    tag = f"config={cfg.hash()}"
    out = Path(cfg.out_dir)
    files = [p for p in out.rglob("*") if p.suffix in (".csv", ".svg", ".ckpt") and p.name != "config.txt"]
    assert len(files) > 20
    for p in files:
        head = p.read_text(encoding="utf-8").split("\n", 2)[:2]
        assert any(tag in h and "seed=" in h for h in head), p


def test_report_layout(run):
    cfg, _, _ = run
    rows = rows_of(Path(cfg.out_dir) / "report.csv")
    assert [r["model"] for r in rows[:3]] == ["no-pretrain", "pretrain", "a2sl"]
    for r in rows[:3]:
        mean, std = r[cfg.task].replace("(", "").replace(")", "").split()
        assert float(mean) >= 0 and float(std) >= 0
        assert r[f"runs_{cfg.task}"] == "1"
    text = (Path(cfg.out_dir) / "report.csv").read_text()
    assert "1.253" in text and "3.460" in text


def test_sweep_endpoints_match_single_models(run):
    cfg, _, _ = run
    d = run_dir(cfg, cfg.seed)
    metrics = {r["model"]: r["rmse"] for r in rows_of(d / "metrics.csv")}
    sweep = {r["tau"]: r["rmse"] for r in rows_of(d / "sweep.csv") if r["lake_id"] == "all"}
    assert sweep["1.0"] == metrics["a2sl-yearly"]
    assert sweep["0.0"] == metrics["a2sl-monthly"]


def test_svgs_well_formed(run):
    cfg, _, _ = run
    d = run_dir(cfg, cfg.seed)
    for name in ("sweep.svg", "inspect.svg"):
        root = ET.parse(d / name).getroot()
        assert root.tag.endswith("svg")
        assert root.findall(".//{http://www.w3.org/2000/svg}polyline")


def test_inspect_rows(run):
    cfg, _, _ = run
    rows = rows_of(run_dir(cfg, cfg.seed) / "inspect.csv")
    anchors = {}
    for r in rows:
        anchors.setdefault(r["anchor"], []).append(int(r["rank"]))
    assert len(anchors) == cfg.inspect_anchors
    for ranks in anchors.values():
        assert ranks == list(range(len(ranks))) and len(ranks) >= cfg.train.k + 1
    k_eff = [len(v) - 1 for v in anchors.values()]
    assert len(rows) == sum(k + 1 for k in k_eff)
    if set(k_eff) == {cfg.train.k}:
        assert len(rows) == cfg.inspect_anchors * (cfg.train.k + 1)


def test_missing_checkpoint_exit_code(run, capsys):
    _, cfg_path, _ = run
    assert main(["evaluate", "--config", str(cfg_path), "--seed", "3"]) == 7
    assert "a2sl train" in capsys.readouterr().err


def test_resume_reuses_checkpoints(run):
    cfg, cfg_path, _ = run
    d = run_dir(cfg, cfg.seed)
    before = {p.name: p.read_bytes() for p in d.glob("*.ckpt")}
    t0 = time.perf_counter()
    assert main(["train", "--config", str(cfg_path)]) == 0
    assert time.perf_counter() - t0 < 30
    assert {p.name: p.read_bytes() for p in d.glob("*.ckpt")} == before


def test_resume_after_partial_loss_is_equivalent(run):
    cfg, cfg_path, _ = run
    d = run_dir(cfg, cfg.seed)
    before = {p.name: p.read_bytes() for p in d.glob("*.ckpt")}
    (d / "gamma.ckpt").unlink()
    (d / "disc.ckpt").unlink()
    assert main(["train", "--config", str(cfg_path)]) == 0
    assert {p.name: p.read_bytes() for p in d.glob("*.ckpt")} == before


def test_checkpoint_from_other_config_is_not_reused(run, tmp_path):
    cfg, _, _ = run
    other = cfg.with_overrides(**{"train.lr": 0.001})
    store = pipeline.CheckpointStore(run_dir(cfg, cfg.seed), other, cfg.seed)
    assert store.load("gamma") is None
    assert pipeline.CheckpointStore(run_dir(cfg, cfg.seed), cfg, cfg.seed).load("gamma") is not None


def test_perfect_prediction_scores_zero(monkeypatch, small_bench, small_cfg):
    models = pipeline.TrainedModels(baselines={"pretrain": None})
    monkeypatch.setattr(pipeline, "predict_monthly", lambda p, scns: np.stack([np.nan_to_num(s.y) for s in scns]))
    ev = pipeline.evaluate(small_bench, models, small_cfg, 0)
    assert ev.rmse["pretrain"] == 0.0


def test_gradcheck_command():
    assert main(["gradcheck", "--instances", "2"]) == 0


def test_bad_config_exit_codes(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("no_such_key = 1\n")
    assert main(["train", "--config", str(bad)]) == FormatError.exit_code
    bad.write_text("task = DO_middle\n")
    assert main(["train", "--config", str(bad)]) == InvalidArgument.exit_code


def test_config_round_trip(tmp_path):
    cfg = cfgmod.parse_text(SMALL_TEXT)
    cfgmod.save(cfg, tmp_path / "c.txt")
    back = cfgmod.load(tmp_path / "c.txt")
    assert back == cfg and back.hash() == cfg.hash()
    assert cfg.with_overrides(out_dir="elsewhere").hash() == cfg.hash()
    assert cfg.with_overrides(seed=4).model_hash() == cfg.model_hash()
    assert cfg.with_overrides(**{"train.k": 2}).hash() != cfg.hash()


def test_config_value_errors():
    with pytest.raises(FormatError):
        cfgmod.parse_text("n_lakes = many\n")
    with pytest.raises(FormatError):
        cfgmod.parse_text("just words\n")
    with pytest.raises(InvalidArgument):
        cfgmod.parse_text("tau = 1.5\n")
