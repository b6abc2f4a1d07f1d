"""Experiment orchestration: config, tuning, variant dispatch, evaluation, persistence."""

from __future__ import annotations

import copy
import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .core import Dataset, TimeSeries, load_dataset, split_for_test
from .ensembles import (
    DEFAULT_K_RANGE,
    DEFAULT_SEED_ITERATIONS,
    ForecastMatrix,
    combine_forecasts,
    default_ensemble_seeds,
    run_baseline,
    run_cluster_number,
    run_cluster_oc,
    run_cluster_seed,
    run_local,
    run_seed_ensemble,
    run_specialists,
    write_forecasts_csv,
)
from .evaluation import MetricResult, evaluate_forecasts, smape, statistical_tests
from .learners import LearnerConfig, LearnerError
from .seeding import derive_seed

log = logging.getLogger(__name__)

CLUSTER_VARIANTS = {
    "Kmeans": "kmeans",
    "KmeansPlus": "kmeanspp",
    "DTW": "kmedoids_dtw",
    "Random": "random",
}
LOCAL_VARIANTS = {
    "ETS": "auto",
    "SES": "ses",
    "Holt": "holt",
    "HoltWinters": "holt_winters_additive",
    "SNaive": "seasonal_naive",
}

DEVIATION_NOTES = [
    "seasonal decomposition: classical moving-average decomposition instead of STL",
    "local models: exponential smoothing family and seasonal naive instead of auto ETS/ARIMA",
    "hyperparameter search: seeded random search instead of SMAC",
    "FFNN training: full-batch gradient descent with a fixed step",
]

DEFAULT_RANGES = {
    "ffnn": {
        "hidden_nodes": {"low": 1, "high": 12, "type": "int"},
        "decay": {"low": 0.0, "high": 0.1, "type": "float"},
    },
    "pr": {},
}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, err: Exception):
        super().__init__(f"[{stage}] {type(err).__name__}: {err}")
        self.stage = stage


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    dataset: dict
    learner: LearnerConfig
    variants: list[str]
    master_seed: int = 0
    ensemble_seeds: list[int] | None = None
    k_range: tuple[int, int] = DEFAULT_K_RANGE
    elbow_range: tuple[int, int] | None = None
    seed_iterations: int = DEFAULT_SEED_ITERATIONS
    specialists: dict = field(default_factory=dict)
    tuning: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | Path | None = None) -> "ExperimentConfig":
        raw = copy.deepcopy(raw)
        if isinstance(raw.get("config"), dict) and "dataset" in raw["config"]:
            # a run manifest: replay its resolved config
            raw = raw["config"]
        if "dataset" not in raw:
            raise ConfigError("config needs a 'dataset' section")
        ds = raw["dataset"]
        if "path" not in ds and "synthetic" not in ds:
            raise ConfigError("dataset needs 'path' or 'synthetic'")
        if "synthetic" not in ds:
            for key in ("horizon", "seasonal_period"):
                if key not in ds:
                    raise ConfigError(f"dataset.{key} is required")
        learner_raw = dict(raw.get("learner", {}))
        known = {f.name for f in fields(LearnerConfig)}
        unknown = set(learner_raw) - known
        if unknown:
            raise ConfigError(f"unknown learner fields: {sorted(unknown)}")
        if "seasonality" not in learner_raw and learner_raw.get("kind", "pr") == "ffnn":
            learner_raw["seasonality"] = ds.get("seasonality", "none")
        learner_raw.setdefault("nonnegative", bool(ds.get("nonnegative", False)))
        try:
            learner = LearnerConfig(**learner_raw)
        except LearnerError as e:
            raise ConfigError(str(e)) from None
        variants = list(raw.get("variants", ["Baseline"]))
        for v in variants:
            _parse_variant(v)
        seeds = raw.get("seeds", {})
        k_range = tuple(raw.get("k_range", DEFAULT_K_RANGE))
        if len(k_range) != 2 or k_range[0] < 1 or k_range[1] < k_range[0]:
            raise ConfigError(f"invalid k_range {k_range}")
        elbow = raw.get("elbow_range")
        tuning = dict(raw.get("tuning", {}))
        tuning.setdefault("enabled", False)
        tuning.setdefault("budget", 10)
        spec = dict(raw.get("specialists", {}))
        spec.setdefault("K", None)
        spec.setdefault("N", 2)
        spec.setdefault("K_range", [2, 7])
        spec.setdefault("final_round", "previous")
        spec.setdefault("max_rounds", 10)
        if learner.kind == "pr" and any("Ensemble.Seed" in v for v in variants):
            log.warning("Ensemble.Seed with a PR learner reduces to Baseline")
        return cls(
            dataset=ds,
            learner=learner,
            variants=variants,
            master_seed=int(seeds.get("master", raw.get("seed", 0))),
            ensemble_seeds=seeds.get("ensemble"),
            k_range=k_range,
            elbow_range=tuple(elbow) if elbow else None,
            seed_iterations=int(raw.get("seed_iterations", DEFAULT_SEED_ITERATIONS)),
            specialists=spec,
            tuning=tuning,
            base_dir=Path(base_dir) if base_dir else Path.cwd(),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "learner": self.learner.to_dict(),
            "variants": self.variants,
            "seeds": {"master": self.master_seed, "ensemble": self.ensemble_seeds},
            "k_range": list(self.k_range),
            "elbow_range": list(self.elbow_range) if self.elbow_range else None,
            "seed_iterations": self.seed_iterations,
            "specialists": self.specialists,
            "tuning": self.tuning,
        }

    def load(self) -> Dataset:
        ds_cfg = self.dataset
        if "synthetic" in ds_cfg:
            return generate_synthetic(ds_cfg["synthetic"])
        path = Path(ds_cfg["path"])
        if not path.is_absolute():
            path = self.base_dir / path
        return load_dataset(
            path,
            int(ds_cfg["horizon"]),
            int(ds_cfg["seasonal_period"]),
            ds_cfg.get("imputation", "zero"),
            ds_cfg.get("group_by"),
            ds_cfg.get("name"),
        )


def _parse_variant(name: str) -> list[tuple[str, str]]:
    """Split ``A+B`` combinations into ``(family, detail)`` parts."""
    parts = []
    for part in name.split("+"):
        part = part.strip()
        if part in ("Baseline", "Ensemble.Seed", "Ensemble.Specialists") or part in LOCAL_VARIANTS:
            parts.append((part, ""))
            continue
        head, _, kind = part.partition(".")
        if head not in CLUSTER_VARIANTS or kind not in ("Number", "Seed", "OC"):
            raise ConfigError(f"unknown variant {part!r}")
        if head == "DTW" and kind != "Number":
            raise ConfigError("DTW clustering only supports the Number variant")
        parts.append((head, kind))
    return parts


def max_submodels(cfg: ExperimentConfig, n_series: int) -> int:
    """Largest number of submodels any configured variant trains in one iteration."""
    best = 1
    for v in cfg.variants:
        for head, kind in _parse_variant(v):
            if kind == "Number":
                best = max(best, cfg.k_range[1])
            elif kind in ("Seed", "OC"):
                best = max(best, (cfg.elbow_range or (1, min(10, n_series)))[1])
            elif head == "Ensemble.Specialists":
                K = cfg.specialists.get("K") or max(cfg.specialists["K_range"])
                best = max(best, K)
    return min(best, n_series)


# --------------------------------------------------------------------------
# synthetic data


def generate_synthetic(spec: dict) -> Dataset:
    """Seeded AR/seasonal families; family membership is kept in ``Dataset.labels``.

    Each family entry takes ``ar`` (coefficients), ``level``, ``count`` and
    optional ``seasonal_amplitude``, ``trend`` and ``name``. Series follow
    ``x_t = level + trend*t + amp*sin(2 pi t / period) + y_t`` with
    ``y_t = sum_i ar_i y_{t-i} + noise``.
    """
    rng = np.random.default_rng(int(spec.get("seed", 0)))
    length = int(spec.get("length", 120))
    noise = float(spec.get("noise_sd", 0.1))
    period = int(spec.get("seasonal_period", 1))
    burn = int(spec.get("burn_in", 50))
    init_sd = float(spec.get("init_sd", 1.0))
    series, labels = [], {}
    for fi, fam in enumerate(spec["families"]):
        ar = np.asarray(fam.get("ar", []), dtype=float)
        p = len(ar)
        name = fam.get("name", f"F{fi}")
        for j in range(int(fam.get("count", 10))):
            y = list(rng.normal(0.0, init_sd, size=p)) if p else []
            eps = rng.normal(0.0, noise, size=burn + length) if noise > 0 else np.zeros(burn + length)
            for t in range(burn + length):
                y.append(float(np.dot(ar, y[-1 : -p - 1 : -1])) + eps[t] if p else eps[t])
            y = np.array(y[-length:])
            t = np.arange(length)
            x = float(fam.get("level", 0.0)) + float(fam.get("trend", 0.0)) * t + y
            amp = float(fam.get("seasonal_amplitude", 0.0))
            if amp and period > 1:
                x = x + amp * np.sin(2 * np.pi * t / period)
            sid = f"{name}_{j:03d}"
            series.append(TimeSeries(sid, x, period))
            labels[sid] = fi
    return Dataset(tuple(series), int(spec.get("horizon", 12)), spec.get("name", "synthetic"), labels)


# --------------------------------------------------------------------------
# tuning


def _candidate_space(ranges: dict) -> tuple[list[list] | None, dict]:
    """Full grid when every range is discrete, else None."""
    grids = []
    for name, r in ranges.items():
        if "choices" in r:
            grids.append(list(r["choices"]))
        elif r.get("type") == "int":
            grids.append(list(range(int(r["low"]), int(r["high"]) + 1)))
        else:
            return None, ranges
    return grids, ranges


def _sample(ranges: dict, rng: np.random.Generator) -> dict:
    out = {}
    for name, r in ranges.items():
        if "choices" in r:
            out[name] = r["choices"][int(rng.integers(len(r["choices"])))]
        elif r.get("type") == "int":
            out[name] = int(rng.integers(int(r["low"]), int(r["high"]) + 1))
        else:
            out[name] = float(rng.uniform(float(r["low"]), float(r["high"])))
    return out


def tuning_subset(ds: Dataset, cfg: ExperimentConfig) -> Dataset:
    size = math.ceil(len(ds) / max_submodels(cfg, len(ds)))
    rng = np.random.default_rng(derive_seed(cfg.master_seed, "tuning", "subset"))
    picked = set(rng.choice(ds.ids, size=size, replace=False).tolist())
    return ds.subset(picked)


def _validation_score(fm: ForecastMatrix, ds: Dataset, zero_safe: bool) -> float:
    actual = {s.id: s.values[-ds.horizon :] for s in ds.series}
    final = fm.final()
    return float(np.mean([smape(final[sid], actual[sid], zero_safe) for sid in ds.ids]))


def tune_hyperparameters(ds: Dataset, cfg: ExperimentConfig) -> dict:
    """Seeded random search scored by Baseline validation sMAPE on the tuning subset.

    Discrete search spaces no larger than the budget are enumerated instead.
    """
    budget = int(cfg.tuning.get("budget", 0))
    if budget < 1:
        raise ConfigError("tuning budget must be at least 1")
    ranges = cfg.tuning.get("ranges") or DEFAULT_RANGES[cfg.learner.kind]
    zero_safe = bool(cfg.dataset.get("zero_safe_smape", False))
    sub = tuning_subset(ds, cfg)
    chosen: dict[str, Any] = {}
    if ranges:
        rng = np.random.default_rng(derive_seed(cfg.master_seed, "tuning", "search"))
        grids, _ = _candidate_space(ranges)
        if grids is not None and math.prod(len(g) for g in grids) <= budget:
            candidates = [dict(zip(ranges, combo)) for combo in itertools.product(*grids)]
        else:
            candidates = [_sample(ranges, rng) for _ in range(budget)]
        best, best_score = None, math.inf
        for params in candidates:
            try:
                fm = run_baseline(sub, cfg.learner.with_params(**params), cfg.master_seed, holdout="validation")
                score = _validation_score(fm, sub, zero_safe)
            except (LearnerError, ValueError) as e:
                log.info("tuning candidate %s failed: %s", params, e)
                score = math.inf
            if score < best_score:
                best, best_score = params, score
        chosen.update(best if best is not None else candidates[0])
    if "Ensemble.Specialists" in " ".join(cfg.variants) and cfg.specialists.get("K") is None:
        learner = cfg.learner.with_params(**chosen)
        lo, hi = cfg.specialists["K_range"]
        ks = list(range(lo, min(hi, len(sub)) + 1)) or [1]
        if len(ks) > budget:
            rng = np.random.default_rng(derive_seed(cfg.master_seed, "tuning", "specialists"))
            ks = sorted(rng.choice(ks, size=budget, replace=False).tolist())
        best_k, best_score = ks[0], math.inf
        for K in ks:
            try:
                fm = run_specialists(
                    sub, learner, K, min(cfg.specialists["N"], K), cfg.master_seed, holdout="validation",
                    max_rounds=cfg.specialists["max_rounds"],
                )
                score = _validation_score(fm, sub, zero_safe)
            except (LearnerError, ValueError) as e:
                log.info("specialist count %d failed: %s", K, e)
                score = math.inf
            if score < best_score:
                best_k, best_score = K, score
        chosen["specialists_K"] = int(best_k)
    return chosen


# --------------------------------------------------------------------------
# running


@dataclass
class RunResult:
    forecasts: list[ForecastMatrix]
    metrics: dict[str, MetricResult]
    manifest: dict
    stats: Any = None


def _run_part(part: tuple[str, str], ds: Dataset, cfg: ExperimentConfig, learner: LearnerConfig, K: int) -> ForecastMatrix:
    head, kind = part
    seed = cfg.master_seed
    tag = f"{head}.{kind}" if kind else head
    if head == "Baseline":
        return run_baseline(ds, learner, seed, tag=tag)
    if head in LOCAL_VARIANTS:
        return run_local(ds, LOCAL_VARIANTS[head], nonnegative=learner.nonnegative, tag=tag)
    if head == "Ensemble.Seed":
        seeds = cfg.ensemble_seeds or default_ensemble_seeds(seed)
        return run_seed_ensemble(ds, learner, seeds, tag=tag)
    if head == "Ensemble.Specialists":
        return run_specialists(
            ds, learner, K, min(cfg.specialists["N"], K), seed,
            final_round=cfg.specialists["final_round"], max_rounds=cfg.specialists["max_rounds"], tag=tag,
        )
    method = CLUSTER_VARIANTS[head]
    n = len(ds)
    if kind == "Number":
        k_range = (min(cfg.k_range[0], n), min(cfg.k_range[1], n))
        return run_cluster_number(ds, learner, method, k_range, seed, tag=tag)
    elbow = cfg.elbow_range
    if kind == "Seed":
        return run_cluster_seed(ds, learner, method, cfg.seed_iterations, seed, elbow_range=elbow, tag=tag)
    return run_cluster_oc(ds, learner, method, seed, elbow_range=elbow, tag=tag)


def _run_variant(name: str, ds: Dataset, cfg: ExperimentConfig, learner: LearnerConfig, K: int) -> ForecastMatrix:
    parts = _parse_variant(name)
    mats = [_run_part(p, ds, cfg, learner, K) for p in parts]
    if len(mats) == 1:
        return mats[0]
    return combine_forecasts(mats, tag=name)


def _merge(parts: list[ForecastMatrix], ids: list[str]) -> ForecastMatrix:
    rows, trace = {}, {}
    for p in parts:
        rows.update(p.rows)
        trace.update(p.trace)
    return ForecastMatrix(parts[0].model_tag, parts[0].horizon, {s: rows[s] for s in ids}, {s: trace[s] for s in ids})


def _groups(ds: Dataset, cfg: ExperimentConfig) -> list[Dataset]:
    if not cfg.dataset.get("group_by"):
        return [ds]
    keys = sorted({s.group or "" for s in ds.series})
    return [ds.subset([s.id for s in ds.series if (s.group or "") == g]) for g in keys]


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, workers: int = 1) -> RunResult:
    """Load, split, tune, dispatch variants, evaluate on the test holdout and persist."""
    times: dict[str, float] = {}

    def stage(name, fn, *args):
        t0 = time.perf_counter()
        try:
            return fn(*args)
        except StageError:
            raise
        except Exception as e:
            raise StageError(name, e) from e
        finally:
            times[name] = round(time.perf_counter() - t0, 6)

    ds = stage("load", cfg.load)
    splits = stage("split", split_for_test, ds)
    chosen: dict = {}
    if cfg.tuning.get("enabled"):
        chosen = stage("tune", tune_hyperparameters, ds, cfg)
    K = int(chosen.pop("specialists_K", None) or cfg.specialists.get("K") or 3)
    learner = cfg.learner.with_params(**chosen)
    groups = _groups(ds, cfg)
    tasks = [(v, gi) for v in cfg.variants for gi in range(len(groups))]

    def work(task):
        v, gi = task
        return _run_variant(v, groups[gi], cfg, learner, K)

    def dispatch():
        if workers > 1 and len(tasks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(work, tasks))
        else:
            results = [work(t) for t in tasks]
        by_variant: dict[str, list[ForecastMatrix]] = {}
        for (v, _), fm in zip(tasks, results):
            by_variant.setdefault(v, []).append(fm)
        return [_merge(by_variant[v], ds.ids) for v in cfg.variants]

    forecasts = stage("forecast", dispatch)
    train = {sp.id: sp.train for sp in splits}
    actual = {sp.id: sp.test for sp in splits}
    zero_safe = bool(cfg.dataset.get("zero_safe_smape", False))

    def evaluate():
        return {
            fm.model_tag: evaluate_forecasts(fm.final(), actual, train, ds.seasonal_period, zero_safe)
            for fm in forecasts
        }

    metrics = stage("evaluate", evaluate)
    report = None
    if len(forecasts) >= 2 and len(ds) >= 2:
        tags = [fm.model_tag for fm in forecasts]
        E = np.array([[metrics[t].per_series[sid]["smape"] for t in tags] for sid in sorted(ds.ids)])
        report = stage("stats", statistical_tests, E, tags)

    resolved = cfg.to_dict()
    if "path" in resolved["dataset"]:
        path = Path(resolved["dataset"]["path"])
        resolved["dataset"] = dict(resolved["dataset"], path=str(path if path.is_absolute() else (cfg.base_dir / path).resolve()))
    resolved["learner"] = learner.to_dict()
    resolved["specialists"] = dict(cfg.specialists, K=K)
    resolved["tuning"] = dict(cfg.tuning, enabled=False)
    manifest = {
        "version": __version__,
        "config": resolved,
        "seeds": {
            "master": cfg.master_seed,
            "model": derive_seed(cfg.master_seed, "model"),
            "cluster_number": derive_seed(cfg.master_seed, "cluster"),
            "cluster_seed_iterations": [derive_seed(cfg.master_seed, "cluster", i) for i in range(cfg.seed_iterations)],
            "ensemble": cfg.ensemble_seeds or default_ensemble_seeds(cfg.master_seed),
            "specialists": derive_seed(cfg.master_seed, "specialists"),
        },
        "chosen_hyperparameters": dict(chosen, specialists_K=K),
        "dataset_info": {"name": ds.name, "n_series": len(ds), "horizon": ds.horizon, "seasonal_period": ds.seasonal_period},
        "deviations": DEVIATION_NOTES,
        "provenance": {fm.model_tag: fm.trace for fm in forecasts},
        "wall_times": times,
    }
    result = RunResult(forecasts, metrics, manifest, report)
    if out_dir is not None:
        stage("persist", persist, result, Path(out_dir))
        manifest["wall_times"] = times
        (Path(out_dir) / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default))
    return result


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o)}")


def write_metrics(metrics: dict[str, MetricResult], out: Path) -> None:
    with (out / "metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", "smape", "mase", "model_tag"])
        for tag, m in metrics.items():
            for sid, v in m.per_series.items():
                w.writerow([sid, repr(v["smape"]), repr(v["mase"]), tag])
    agg = {tag: m.aggregates() for tag, m in metrics.items()}
    (out / "aggregates.json").write_text(json.dumps(agg, indent=2))


def write_stats(report, out: Path) -> None:
    (out / "stats.json").write_text(json.dumps(report.to_dict(), indent=2))
    with (out / "ranks.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "average_rank"])
        for model, r in sorted(report.average_ranks.items(), key=lambda kv: kv[1]):
            w.writerow([model, repr(r)])
    with (out / "pairwise_p.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_a", "model_b", "p_raw", "p_holm", "significant"])
        for pair in report.to_dict()["pairwise"]:
            w.writerow([pair["model_a"], pair["model_b"], repr(pair["p_raw"]), repr(pair["p_holm"]), pair["significant"]])


def persist(result: RunResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_forecasts_csv(result.forecasts, out / "forecasts.csv")
    write_forecasts_csv(result.forecasts, out / "final_forecasts.csv", final=True)
    write_metrics(result.metrics, out)
    if result.stats is not None:
        write_stats(result.stats, out)
