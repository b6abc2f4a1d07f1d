"""Localised global models: clustered ensembles, specialists, seed ensembles
and global/local forecast combinations.

Every ``run_*`` function is a pure function of (dataset, learner config,
seed) and returns a :class:`ForecastMatrix` holding one row per series and
ensemble member. The final forecast is the row-wise mean of those rows.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import clustering
from .core import Dataset, split_for_test, split_for_validation
from .evaluation import smape
from .features import feature_matrix, standardize
from .learners import GlobalModel, LearnerConfig, local_forecasts
from .preprocess import input_window_size
from .seeding import derive_seed

DEFAULT_K_RANGE = (2, 7)
DEFAULT_SEED_ITERATIONS = 6
DEFAULT_ENSEMBLE_SEEDS = 5
BASELINE = "baseline"


class EnsembleError(ValueError):
    pass


@dataclass
class ForecastMatrix:
    """Per-series stacks of member forecasts, in original scale."""

    model_tag: str
    horizon: int
    rows: dict[str, np.ndarray]
    trace: dict[str, list] = field(default_factory=dict)

    @property
    def ids(self) -> list[str]:
        return list(self.rows)

    def iteration_count(self, series_id: str) -> int:
        return self.rows[series_id].shape[0]

    def final(self) -> dict[str, np.ndarray]:
        return {sid: r.mean(axis=0) for sid, r in self.rows.items()}

    def write_rows(self, writer) -> None:
        for sid, r in self.rows.items():
            for it, row in enumerate(r):
                writer.writerow([sid, self.model_tag, it] + [repr(float(v)) for v in row])


def write_forecasts_csv(matrices: Sequence[ForecastMatrix], path, final: bool = False) -> None:
    """Persist member rows (``series_id,model_tag,iteration,h1..hH``) or final means."""
    horizon = matrices[0].horizon if matrices else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        hs = [f"h{i + 1}" for i in range(horizon)]
        if final:
            w.writerow(["series_id", "model_tag"] + hs)
            for fm in matrices:
                for sid, row in fm.final().items():
                    w.writerow([sid, fm.model_tag] + [repr(float(v)) for v in row])
        else:
            w.writerow(["series_id", "model_tag", "iteration"] + hs)
            for fm in matrices:
                fm.write_rows(w)


def read_forecasts_csv(path) -> dict[str, ForecastMatrix]:
    """Read either per-iteration or final forecast CSVs back into matrices."""
    out: dict[str, dict[str, list]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        first_h = header.index("h1")
        for row in reader:
            if not row:
                continue
            sid, tag = row[0], row[1]
            out.setdefault(tag, {}).setdefault(sid, []).append([float(v) for v in row[first_h:]])
    return {
        tag: ForecastMatrix(tag, len(next(iter(rows.values()))[0]), {s: np.array(r) for s, r in rows.items()})
        for tag, rows in out.items()
    }


# --------------------------------------------------------------------------
# shared problem setup


@dataclass
class Problem:
    """Training histories plus everything needed to fit one pooled model."""

    ids: list[str]
    histories: list[np.ndarray]
    horizon: int
    seasonal_period: int
    learner: LearnerConfig
    window_size: int
    workers: int = 1
    _baseline: dict | None = field(default=None, repr=False)

    def model(self) -> GlobalModel:
        return GlobalModel(self.learner, self.window_size, self.seasonal_period)

    def index(self, ids: Iterable[str]) -> list[int]:
        pos = {s: i for i, s in enumerate(self.ids)}
        return [pos[s] for s in ids]

    def trainable(self, members: Sequence[int]) -> bool:
        rows = self.model().n_rows([self.histories[i] for i in members])
        return rows >= self.window_size + 1

    def fit(self, members: Sequence[int], seed: int) -> GlobalModel:
        return self.model().fit([self.histories[i] for i in members], seed, [self.ids[i] for i in members])

    def fit_predict(self, members: Sequence[int], seed: int) -> np.ndarray:
        return self.fit(members, seed).predict([self.histories[i] for i in members], self.horizon)

    def baseline(self, seed: int) -> np.ndarray:
        if self._baseline is None:
            self._baseline = {}
        if seed not in self._baseline:
            self._baseline[seed] = self.fit_predict(range(len(self.ids)), seed)
        return self._baseline[seed]


def resolve_window_size(histories: Sequence[np.ndarray], horizon: int, seasonal_period: int, override: int | None = None) -> int:
    """Window heuristic (or override), capped so the shortest history still yields a pair."""
    n = override or input_window_size(horizon, seasonal_period)
    shortest = min(len(h) for h in histories)
    return max(1, min(n, shortest - 1))


def make_problem(ds: Dataset, learner: LearnerConfig, holdout: str = "test", workers: int = 1) -> Problem:
    if holdout == "test":
        splits = split_for_test(ds)
    elif holdout == "validation":
        splits = split_for_validation(ds)
    else:
        raise EnsembleError(f"unknown holdout {holdout!r}")
    hist = [sp.train for sp in splits]
    window = resolve_window_size(hist, ds.horizon, ds.seasonal_period, learner.window_size)
    return Problem([sp.id for sp in splits], hist, ds.horizon, ds.seasonal_period, learner, window, workers)


def model_seed(seed: int) -> int:
    return derive_seed(seed, "model")


# --------------------------------------------------------------------------
# clustering on training portions


def _features(problem: Problem):
    fm = feature_matrix(problem.histories, problem.ids, problem.seasonal_period)
    return standardize(fm) if len(problem.ids) >= 2 else fm


def cluster_series(
    problem: Problem,
    k: int,
    method: str,
    seed: int,
    cache: dict | None = None,
) -> clustering.ClusterAssignment:
    """Partition the problem's series using their training portions only."""
    cache = {} if cache is None else cache
    if method in ("kmeans", "kmeanspp"):
        if "features" not in cache:
            cache["features"] = _features(problem)
        return clustering.kmeans(cache["features"], k, seed, "plusplus" if method == "kmeanspp" else "random")
    if method == "kmedoids_dtw":
        if "dtw" not in cache:
            cache["dtw"] = clustering.dtw_matrix(problem.histories)
        return clustering.kmedoids_dtw(problem.histories, k, seed, cache["dtw"])
    if method == "random":
        return clustering.random_partition(problem.ids, k, seed)
    raise EnsembleError(f"unknown clustering method {method!r}")


def _map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def clustered_iteration(problem: Problem, assignment: clustering.ClusterAssignment, mseed: int) -> tuple[np.ndarray, list]:
    """One GFM per cluster; clusters too small to train fall back to the baseline model."""
    out = np.empty((len(problem.ids), problem.horizon))
    trace: list = [None] * len(problem.ids)
    groups = [g for g in assignment.groups() if len(g)]

    def work(members):
        if not problem.trainable(members):
            return None
        return problem.fit_predict(members, mseed)

    results = _map(work, groups, problem.workers)
    for c, (members, fc) in enumerate(zip(groups, results)):
        label = int(assignment.labels[members[0]])
        if fc is None:
            fc = problem.baseline(mseed)[members]
            label = BASELINE
        out[members] = fc
        for i in members:
            trace[i] = label
    return out, trace


def _assemble(problem: Problem, tag: str, iterations: list[np.ndarray], traces: list[list]) -> ForecastMatrix:
    rows = {sid: np.array([it[i] for it in iterations]) for i, sid in enumerate(problem.ids)}
    trace = {sid: [t[i] for t in traces] for i, sid in enumerate(problem.ids)}
    return ForecastMatrix(tag, problem.horizon, rows, trace)


def _check_range(k_range, n: int) -> list[int]:
    ks = list(range(k_range[0], k_range[1] + 1)) if isinstance(k_range, tuple) else list(k_range)
    if not ks or min(ks) < 1:
        raise EnsembleError(f"invalid cluster range {k_range}")
    if max(ks) > n:
        raise EnsembleError(f"cluster range {k_range} exceeds the number of series ({n})")
    return ks


# --------------------------------------------------------------------------
# variants


def run_baseline(ds: Dataset, learner: LearnerConfig, seed: int, holdout: str = "test", tag: str = "Baseline") -> ForecastMatrix:
    problem = make_problem(ds, learner, holdout)
    fc = problem.baseline(model_seed(seed))
    return _assemble(problem, tag, [fc], [[BASELINE] * len(problem.ids)])


def run_cluster_number(
    ds: Dataset,
    learner: LearnerConfig,
    method: str,
    k_range=DEFAULT_K_RANGE,
    seed: int = 0,
    holdout: str = "test",
    workers: int = 1,
    tag: str | None = None,
) -> ForecastMatrix:
    """Re-cluster at every k in ``k_range`` with one shared seed, one GFM per cluster, then average."""
    problem = make_problem(ds, learner, holdout, workers)
    ks = _check_range(k_range, len(problem.ids))
    cseed = derive_seed(seed, "cluster")
    mseed = model_seed(seed)
    cache: dict = {}
    iterations, traces = [], []
    for k in ks:
        assignment = cluster_series(problem, k, method, cseed, cache)
        fc, tr = clustered_iteration(problem, assignment, mseed)
        iterations.append(fc)
        traces.append(tr)
    return _assemble(problem, tag or f"{method}.Number", iterations, traces)


def optimal_k(problem: Problem, seed: int, k_range: tuple[int, int] | None = None, init: str = "random") -> int:
    n = len(problem.ids)
    lo, hi = k_range or (1, min(10, n))
    return clustering.elbow_optimal_k(_features(problem), (lo, min(hi, n)), derive_seed(seed, "elbow"), init)


def _elbow_init(method: str) -> str:
    return "plusplus" if method == "kmeanspp" else "random"


def run_cluster_seed(
    ds: Dataset,
    learner: LearnerConfig,
    method: str,
    iterations: int = DEFAULT_SEED_ITERATIONS,
    seed: int = 0,
    k: int | None = None,
    elbow_range: tuple[int, int] | None = None,
    holdout: str = "test",
    workers: int = 1,
    tag: str | None = None,
) -> ForecastMatrix:
    """Fixed (elbow-optimal) k, re-clustered under ``iterations`` derived seeds, then averaged."""
    if method == "kmedoids_dtw":
        raise EnsembleError("the seed variant needs an elbow-selectable method (kmeans, kmeanspp, random)")
    if iterations < 1:
        raise EnsembleError("iterations must be positive")
    problem = make_problem(ds, learner, holdout, workers)
    if k is None:
        k = optimal_k(problem, seed, elbow_range, _elbow_init(method))
    mseed = model_seed(seed)
    cache: dict = {}
    its, traces = [], []
    for i in range(iterations):
        assignment = cluster_series(problem, k, method, derive_seed(seed, "cluster", i), cache)
        fc, tr = clustered_iteration(problem, assignment, mseed)
        its.append(fc)
        traces.append(tr)
    return _assemble(problem, tag or f"{method}.Seed", its, traces)


def run_cluster_oc(
    ds: Dataset,
    learner: LearnerConfig,
    method: str,
    seed: int = 0,
    k: int | None = None,
    elbow_range: tuple[int, int] | None = None,
    holdout: str = "test",
    workers: int = 1,
    tag: str | None = None,
) -> ForecastMatrix:
    """Single clustering at the elbow-optimal k (or ``k``), one forecast per series."""
    fm = run_cluster_seed(ds, learner, method, 1, seed, k, elbow_range, holdout, workers, tag or f"{method}.OC")
    return fm


def run_seed_ensemble(
    ds: Dataset,
    learner: LearnerConfig,
    seeds: Sequence[int],
    holdout: str = "test",
    workers: int = 1,
    tag: str = "Ensemble.Seed",
) -> ForecastMatrix:
    if not seeds:
        raise EnsembleError("at least one seed is required")
    problem = make_problem(ds, learner, holdout, workers)
    its = _map(lambda s: problem.baseline(model_seed(s)), list(seeds), workers)
    return _assemble(problem, tag, its, [[f"seed:{s}"] * len(problem.ids) for s in seeds])


def default_ensemble_seeds(seed: int, count: int = DEFAULT_ENSEMBLE_SEEDS) -> list[int]:
    return [derive_seed(seed, "seed_ensemble", i) for i in range(count)]


def run_local(ds: Dataset, kind: str, holdout: str = "test", nonnegative: bool = False, tag: str | None = None) -> ForecastMatrix:
    splits = split_for_test(ds) if holdout == "test" else split_for_validation(ds)
    hist = {sp.id: sp.train for sp in splits}
    fc = local_forecasts(hist, kind, ds.seasonal_period, ds.horizon)
    rows = {sid: (np.maximum(f, 0.0) if nonnegative else f)[None, :] for sid, f in fc.items()}
    return ForecastMatrix(tag or kind, ds.horizon, rows, {sid: [kind] for sid in rows})


def combine_forecasts(matrices: Sequence[ForecastMatrix], tag: str | None = None) -> ForecastMatrix:
    """Equal-weight average of the components' final forecasts."""
    if not matrices:
        raise EnsembleError("nothing to combine")
    ids = matrices[0].ids
    h = matrices[0].horizon
    for m in matrices[1:]:
        if sorted(m.ids) != sorted(ids) or m.horizon != h:
            raise EnsembleError(f"cannot combine {m.model_tag!r}: series ids or horizon differ")
    finals = [m.final() for m in matrices]
    rows = {sid: np.array([f[sid] for f in finals]) for sid in ids}
    tags = [m.model_tag for m in matrices]
    return ForecastMatrix(tag or "+".join(tags), h, rows, {sid: list(tags) for sid in ids})


# --------------------------------------------------------------------------
# ensemble of specialists


def reassign_series(val_errors, N: int) -> list[np.ndarray]:
    """Series indices for each specialist: every series joins its N lowest-error specialists."""
    E = np.asarray(val_errors, dtype=float)
    n, K = E.shape
    if not 1 <= N <= K:
        raise EnsembleError(f"N={N} must lie in [1, {K}]")
    best = np.argsort(E, axis=1, kind="stable")[:, :N]
    return [np.flatnonzero((best == j).any(axis=1)) for j in range(K)]


@dataclass
class SpecialistRound:
    train_sets: list[np.ndarray]
    val_errors: np.ndarray
    mean_best_error: float
    models: list[GlobalModel] = field(repr=False)
    repaired: list[int] = field(default_factory=list)


@dataclass
class SpecialistState:
    rounds: list[SpecialistRound] = field(default_factory=list)
    selected_round: int = 0
    stop_reason: str = ""

    @property
    def avg_val_error_history(self) -> list[float]:
        return [r.mean_best_error for r in self.rounds]


def _membership_counts(train_sets: Sequence[np.ndarray], n: int) -> np.ndarray:
    counts = np.zeros(n, dtype=int)
    for s in train_sets:
        counts[s] += 1
    return counts


def run_specialists(
    ds: Dataset,
    learner: LearnerConfig,
    K: int,
    N: int = 2,
    seed: int = 0,
    holdout: str = "test",
    error_fn: Callable[[np.ndarray, np.ndarray], float] | None = None,
    max_rounds: int = 10,
    final_round: str = "previous",
    workers: int = 1,
    tag: str = "Ensemble.Specialists",
    return_state: bool = False,
    initial_sets: Sequence[Sequence[int]] | None = None,
):
    """Ensemble of specialists.

    Round 1 gives every specialist an independent random half of the series.
    Each round trains all specialists on the validation-split training
    portions, scores every series on the validation holdout and sends each
    series to its N best specialists. Rounds stop once the mean best-specialist
    error grows (then the previous round's models are used unless
    ``final_round="last"``), when the assignment reaches a fixed point, or at
    ``max_rounds``. Test forecasts average each series' N best specialists.
    ``initial_sets`` replaces the random first-round samples (series indices
    per specialist).
    """
    if not 1 <= N <= K:
        raise EnsembleError(f"need 1 <= N <= K, got N={N}, K={K}")
    if final_round not in ("previous", "last"):
        raise EnsembleError(f"final_round must be 'previous' or 'last', got {final_round!r}")
    error_fn = error_fn or smape
    outer = make_problem(ds, learner, holdout, workers)
    h = outer.horizon
    n = len(outer.ids)
    # inner holdout: last h points of every training portion
    inner_hist = [x[:-h] for x in outer.histories]
    if min(len(x) for x in inner_hist) < 2:
        raise EnsembleError("series too short for a validation holdout inside the training portion")
    inner = Problem(
        outer.ids, inner_hist, h, outer.seasonal_period, learner,
        resolve_window_size(inner_hist, h, outer.seasonal_period, learner.window_size), workers,
    )
    actual = [x[-h:] for x in outer.histories]
    rng = np.random.default_rng(derive_seed(seed, "specialists"))
    seeds = [derive_seed(seed, "specialist", j) for j in range(K)]
    train_sets = [np.sort(rng.choice(n, size=math.ceil(n / 2), replace=False)) for _ in range(K)]
    if initial_sets is not None:
        if len(initial_sets) != K:
            raise EnsembleError(f"expected {K} initial sets, got {len(initial_sets)}")
        train_sets = [np.sort(np.asarray(s, dtype=int)) for s in initial_sets]
    state = SpecialistState()

    def repair(sets):
        fixed, repaired = [], []
        for j, s in enumerate(sets):
            size = max(1, math.ceil(0.1 * n))
            while not (len(s) and inner.trainable(s)):
                s = np.sort(rng.choice(n, size=min(size, n), replace=False))
                repaired.append(j)
                if size >= n and not inner.trainable(s):
                    raise EnsembleError("training portions too short to fit any specialist")
                size = min(n, size * 2)
            fixed.append(s)
        return fixed, sorted(set(repaired))

    for r in range(max_rounds):
        train_sets, repaired = repair(train_sets)
        models = _map(lambda j: inner.fit(train_sets[j], seeds[j]), range(K), workers)
        E = np.empty((n, K))
        for j, m in enumerate(models):
            val = m.predict(inner.histories, h)
            E[:, j] = [error_fn(val[i], actual[i]) for i in range(n)]
        mean_best = float(E.min(axis=1).mean())
        state.rounds.append(SpecialistRound([s.copy() for s in train_sets], E, mean_best, models, repaired))
        if r > 0 and mean_best > state.rounds[r - 1].mean_best_error:
            state.stop_reason = "error_growing"
            state.selected_round = r - 1 if final_round == "previous" else r
            break
        new_sets = reassign_series(E, N)
        if all(np.array_equal(a, b) for a, b in zip(new_sets, train_sets)):
            state.stop_reason = "converged"
            state.selected_round = r
            break
        train_sets = new_sets
    else:
        state.stop_reason = "max_rounds"
        state.selected_round = len(state.rounds) - 1

    chosen = state.rounds[state.selected_round]
    tests = np.stack([m.predict(outer.histories, h) for m in chosen.models], axis=1)
    top = np.argsort(chosen.val_errors, axis=1, kind="stable")[:, :N]
    rows = {sid: tests[i, top[i]] for i, sid in enumerate(outer.ids)}
    trace = {sid: [f"specialist:{j}" for j in top[i]] for i, sid in enumerate(outer.ids)}
    fm = ForecastMatrix(tag, h, rows, trace)
    return (fm, state) if return_state else fm
