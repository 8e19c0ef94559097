"""Command-line harness: simulate, train, evaluate, sweep, inspect and gradcheck."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import adaptive, config as cfgmod, gradcheck, pipeline, svg
from .errors import A2slError, MissingCheckpoint
from .forecaster import ARMS
from .retrieval import build_batch, encode, write_inspect
from .simkit import TASKS, export, generate_benchmark

log = logging.getLogger("a2sl")

REFERENCE_NOTE = (
    "external reference values on real-lake data (not reproducible here; printed for context, never asserted): "
    "summer epilimnion temperature A2SL 1.253 vs LSTM 1.330 degC; hypolimnion DO A2SL 2.719 vs LSTM 3.460 g/m3"
)


def _load_config(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    over = {}
    if getattr(args, "out", None):
        over["out_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        over.update(seed=args.seed, runs=1)
    if getattr(args, "task", None):
        over["task"] = args.task
    if getattr(args, "arm", None):
        over["arms"] = ",".join(args.arm)
    if getattr(args, "jobs", None):
        over["jobs"] = args.jobs
    return cfg.with_overrides(**over) if over else cfg


def seeds_of(cfg):
    return list(range(cfg.seed, cfg.seed + cfg.runs))


def run_dir(cfg, seed, task=None):
    return Path(cfg.out_dir) / f"seed_{seed}" / (task or cfg.task)


def _require(path, what):
    if not Path(path).exists():
        raise MissingCheckpoint(f"{what} not found at {path}; run `a2sl train` with the same config first")


# --- subcommands ------------------------------------------------------------------------

def cmd_simulate(cfg):
    records = generate_benchmark(n_lakes=cfg.n_lakes, n_years=cfg.n_years, seed=cfg.data_seed,
                                 sigma_obs=cfg.sigma_obs)
    out = cfg.data_path
    export(records, out, header=cfg.provenance())
    cfgmod.save(cfg, Path(cfg.out_dir) / "config.txt")
    n_days = sum(len(r.drivers) for r in records)
    print(f"wrote {len(records)} lake files + lakes.csv to {out} ({n_days} daily rows)")
    return 0


def _bench(cfg):
    bench = pipeline.load_or_make_benchmark(cfg)
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    bench.clusters.to_csv(Path(cfg.out_dir) / "clusters.csv", cfg.provenance())
    return bench


def _models(bench, cfg, seed, train, arms=None):
    """Trained models for one seed; with ``train=False`` every required checkpoint must already exist."""
    arms = arms or cfg.arm_list
    store = pipeline.CheckpointStore(run_dir(cfg, seed), cfg, seed)
    if not train:
        for arm in arms:
            roles = ["encoder", "alpha", "gamma", "disc"] if arm == "a2sl" else [pipeline.BASELINE_ROLES[arm]]
            for role in roles:
                _require(store.path(role), f"checkpoint for arm {arm!r} ({role}, seed {seed})")
    return pipeline.train_arms(bench, cfg, seed, store, cfg.jobs, arms=arms)


def cmd_train(cfg):
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    cfgmod.save(cfg, Path(cfg.out_dir) / "config.txt")
    bench = _bench(cfg)
    for seed in seeds_of(cfg):
        m = _models(bench, cfg, seed, train=True)
        if m.labels is not None:
            val = [s for s in pipeline.observed(bench.task_split(cfg.task).validation)]
            p = m.disc.prob(adaptive.summary_features(val, encode(val, m.encoder)))
            branches = ["yearly" if pi <= cfg.tau else "monthly" for pi in p]
            adaptive.write_routing(run_dir(cfg, seed) / "labels_validation.csv", val, p, branches, m.labels,
                                   cfg.provenance(seed))
        print(f"seed {seed}: trained {', '.join(cfg.arm_list)} -> {run_dir(cfg, seed)}")
    return 0


def _metric_rows(ev, task, seed):
    rows = []
    for name, v in sorted(ev.rmse.items()):
        rows.append({"seed": seed, "task": task, "model": name, "rmse": v,
                     "variable_rmse": ev.variable_rmse.get(name, ""), "n_variable": ev.n_variable,
                     "n_scenarios": len(ev.scenarios)})
    return rows


def write_report(cfg, path):
    """Arms x tasks table of mean (std) RMSE over the seeds that have metrics."""
    rows = {}
    for seed in seeds_of(cfg):
        for task in TASKS:
            f = run_dir(cfg, seed, task) / "metrics.csv"
            if not f.exists():
                continue
            with open(f, encoding="utf-8") as fh:
                for r in csv.DictReader(line for line in fh if not line.startswith("#")):
                    rows.setdefault((r["model"], task), []).append(float(r["rmse"]))
                    if r["variable_rmse"]:
                        rows.setdefault((r["model"] + " [variable subset]", task), []).append(
                            float(r["variable_rmse"]))
    head = list(ARMS) + [f"{a} [variable subset]" for a in ARMS]
    models = head + sorted({k[0] for k in rows} - set(head))
    table = []
    for mname in models:
        row = {"model": mname}
        for task in TASKS:
            mean, std, n = pipeline.summarize(rows.get((mname, task), []))
            row[task] = f"{mean:.4f} ({std:.4f})" if n else "n/a"
            row[f"runs_{task}"] = n
        table.append(row)
    cols = ["model"] + list(TASKS) + [f"runs_{t}" for t in TASKS]
    pipeline.write_csv(path, cols, table, cfg.provenance())
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(f"# RMSE over observed test days, mean (std) over runs\n# {REFERENCE_NOTE}\n")
    return table


def cmd_evaluate(cfg):
    bench = _bench(cfg)
    for seed in seeds_of(cfg):
        m = _models(bench, cfg, seed, train=False)
        ev = pipeline.evaluate(bench, m, cfg, seed, cfg.jobs)
        d = run_dir(cfg, seed)
        pipeline.write_csv(d / "metrics.csv", ["seed", "task", "model", "rmse", "variable_rmse", "n_variable",
                                               "n_scenarios"], _metric_rows(ev, cfg.task, seed),
                           cfg.provenance(seed))
        if m.alpha is not None:
            adaptive.write_routing(d / "routing_test.csv", ev.scenarios, ev.p, ev.branches, None,
                                   cfg.provenance(seed))
        print(f"seed {seed} {cfg.task}: " + ", ".join(f"{k}={v:.4f}" for k, v in sorted(ev.rmse.items())))
    table = write_report(cfg, Path(cfg.out_dir) / "report.csv")
    print(f"report: {Path(cfg.out_dir) / 'report.csv'}")
    for row in table:
        if row[cfg.task] != "n/a":
            print(f"  {row['model']:<32} {row[cfg.task]}")
    print(f"note: {REFERENCE_NOTE}")
    return 0


def cmd_sweep(cfg):
    bench = _bench(cfg)
    for seed in seeds_of(cfg):
        m = _models(bench, cfg, seed, train=False, arms=["a2sl"])
        tcfg = replace(cfg.train, seed=seed)
        test = pipeline.observed(bench.task_split(cfg.task).test)
        monthly, yearly, _ = pipeline.scenario_predictions(bench, m, test, tcfg, cfg.jobs)
        p = m.disc.prob(adaptive.summary_features(test, encode(test, m.encoder)))
        res = adaptive.threshold_sweep(test, p, yearly, monthly)
        d = run_dir(cfg, seed)
        rows = [{"tau": t, "lake_id": "all", "year": "all", "rmse": v} for t, v in res["overall"].items()]
        rows += [{"tau": t, "lake_id": lk, "year": yr, "rmse": v} for t, lk, yr, v in res["per_lake_year"]]
        pipeline.write_csv(d / "sweep.csv", ["tau", "lake_id", "year", "rmse"], rows, cfg.provenance(seed))
        taus = list(res["overall"])
        svg.plot(d / "sweep.svg", [{"label": "routed", "x": taus, "y": list(res["overall"].values())}],
                 title=f"threshold sweep, {cfg.task}", xlabel="tau", ylabel="test RMSE",
                 provenance=cfg.provenance(seed),
                 hlines={"all yearly": res["all_yearly"], "all monthly": res["all_monthly"],
                         "oracle": res["oracle"]})
        print(f"seed {seed}: sweep -> {d / 'sweep.csv'} (yearly {res['all_yearly']:.4f}, "
              f"monthly {res['all_monthly']:.4f}, oracle {res['oracle']:.4f})")
    return 0


def cmd_inspect(cfg):
    bench = _bench(cfg)
    for seed in seeds_of(cfg):
        m = _models(bench, cfg, seed, train=False, arms=["a2sl"])
        test = pipeline.observed(bench.task_split(cfg.task).test)[:cfg.inspect_anchors]
        embs = encode(test, m.encoder)
        batches = [build_batch(a, e, m.index, max(cfg.train.k, 1)) for a, e in zip(test, embs)]
        d = run_dir(cfg, seed)
        write_inspect(batches, d / "inspect.csv", cfg.provenance(seed))
        if batches:
            b = batches[0]
            days = list(range(1, len(b.anchor.sim_phys) + 1))
            series = [{"label": f"{'anchor' if j == 0 else f'rank {j}'} w={w:.2f}", "x": days, "y": list(s.sim_phys)}
                      for j, (s, w) in enumerate(zip(b.members, b.weights))]
            obs = b.anchor.mask.astype(bool)
            series.append({"label": "anchor obs", "x": [t for t, o in zip(days, obs) if o],
                           "y": list(b.anchor.y[obs]), "style": "points"})
            svg.plot(d / "inspect.svg", series, title=f"retrieval set of {b.anchor.id}", xlabel="day",
                     ylabel="simulated label", provenance=cfg.provenance(seed))
        print(f"seed {seed}: {len(batches)} retrieval sets -> {d / 'inspect.csv'}")
    return 0


def cmd_gradcheck(cfg, instances):
    res = gradcheck.run(instances, seed=cfg.seed)
    worst = 0.0
    for name, errs in res.items():
        print(f"{name:<14} instances={len(errs)} max_rel_error={max(errs):.3e}")
        worst = max(worst, max(errs))
    if worst >= gradcheck.TOL:
        print(f"gradient check failed: {worst:.3e} >= {gradcheck.TOL}")
        return 4
    return 0


# --- entry point ----------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="a2sl", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, task=True, arm=False):
        p.add_argument("--config", help="key = value config file (defaults apply when omitted)")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, help="run a single seed instead of seed..seed+runs-1")
        p.add_argument("--jobs", type=int, help="parallel fine-tuning jobs")
        if task:
            p.add_argument("--task", choices=TASKS)
        if arm:
            p.add_argument("--arm", action="append", choices=ARMS, help="repeat to select several arms")
        return p

    common(sub.add_parser("simulate", help="generate and export the synthetic benchmark"), task=False)
    common(sub.add_parser("train", help="train (or resume) the selected arms"), arm=True)
    common(sub.add_parser("evaluate", help="test RMSE per arm and the mean (std) report"), arm=True)
    common(sub.add_parser("sweep", help="routed RMSE across discriminator thresholds"))
    common(sub.add_parser("inspect", help="dump retrieval sets for test anchors"))
    g = common(sub.add_parser("gradcheck", help="finite-difference gradient checks"), task=False)
    g.add_argument("--instances", type=int, default=20)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "inspect":
            return cmd_inspect(cfg)
        return cmd_gradcheck(cfg, args.instances)
    except A2slError as e:
        print(f"error [{type(e).__name__}]: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error [io]: {e}", file=sys.stderr)
        return 8


if __name__ == "__main__":
    sys.exit(main())
