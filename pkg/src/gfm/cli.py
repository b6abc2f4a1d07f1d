"""Command line entry point: ``gfm features|cluster|run|evaluate|stats|synth``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import clustering
from .core import split_for_test, write_dataset
from .ensembles import _features, cluster_series, make_problem, read_forecasts_csv
from .evaluation import evaluate_forecasts, statistical_tests
from .features import FEATURE_NAMES, feature_matrix, standardize
from .harness import ExperimentConfig, generate_synthetic, run_experiment, write_metrics, write_stats
from .seeding import derive_seed


def _workers(args) -> int:
    env = os.environ.get("GFM_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, args.workers)


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    return cfg


def cmd_features(args) -> None:
    cfg = _config(args)
    ds = cfg.load()
    train = split_for_test(ds)
    fm = feature_matrix([sp.train for sp in train], [sp.id for sp in train], ds.seasonal_period)
    if args.standardize:
        fm = standardize(fm)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "features.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", *FEATURE_NAMES])
        for sid, row in zip(fm.ids, fm.rows):
            w.writerow([sid, *(repr(float(v)) for v in row)])


def cmd_cluster(args) -> None:
    cfg = _config(args)
    raw = json.loads(Path(args.config).read_text()).get("cluster", {})
    method = args.method or raw.get("method", "kmeans")
    ds = cfg.load()
    problem = make_problem(ds, cfg.learner)
    k = args.k or raw.get("k")
    seed = cfg.master_seed
    if k is None:
        init = "plusplus" if method == "kmeanspp" else "random"
        lo, hi = cfg.elbow_range or (1, min(10, len(ds)))
        k = clustering.elbow_optimal_k(_features(problem), (lo, hi), derive_seed(seed, "elbow"), init)
    assignment = cluster_series(problem, int(k), method, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "labels.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", "cluster", "method", "k", "seed"])
        for sid, lab in zip(problem.ids, assignment.labels):
            w.writerow([sid, int(lab), method, int(k), seed])


def cmd_run(args) -> None:
    cfg = _config(args)
    result = run_experiment(cfg, args.out, workers=_workers(args))
    for tag, m in result.metrics.items():
        print(f"{tag:32s} mean sMAPE {m.mean_smape:8.4f}  median sMAPE {m.median_smape:8.4f}  mean MASE {m.mean_mase:8.4f}")


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    ds = cfg.load()
    splits = split_for_test(ds)
    train = {sp.id: sp.train for sp in splits}
    actual = {sp.id: sp.test for sp in splits}
    zero_safe = bool(cfg.dataset.get("zero_safe_smape", False))
    metrics = {
        tag: evaluate_forecasts(fm.final(), actual, train, ds.seasonal_period, zero_safe)
        for tag, fm in read_forecasts_csv(args.forecasts).items()
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(metrics, out)


def cmd_stats(args) -> None:
    with open(args.input, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    models = rows[0][1:]
    E = np.array([[float(v) for v in r[1:]] for r in rows[1:] if r])
    report = statistical_tests(E, models, args.alpha)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_stats(report, out)


def cmd_synth(args) -> None:
    spec = json.loads(Path(args.config).read_text())
    spec = spec.get("synthetic", spec)
    if args.seed is not None:
        spec["seed"] = args.seed
    ds = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out / "dataset.csv")
    with (out / "labels.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", "family"])
        for sid, lab in ds.labels.items():
            w.writerow([sid, lab])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--workers", type=int, default=1, help="worker threads (GFM_WORKERS overrides)")
        return p

    p = common(sub.add_parser("features", help="write the per-series feature matrix"))
    p.add_argument("--standardize", action="store_true")
    p.set_defaults(func=cmd_features)

    p = common(sub.add_parser("cluster", help="cluster series and write labels"))
    p.add_argument("--method", choices=clustering.METHODS)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_cluster)

    common(sub.add_parser("run", help="run an experiment end to end")).set_defaults(func=cmd_run)

    p = common(sub.add_parser("evaluate", help="score a forecasts CSV against the test holdout"))
    p.add_argument("--forecasts", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("stats", help="Friedman + Holm-corrected Wilcoxon tests"), config_required=False)
    p.add_argument("--input", required=True, help="CSV: dataset column then one mean-sMAPE column per model")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_stats)

    common(sub.add_parser("synth", help="generate a synthetic dataset")).set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
