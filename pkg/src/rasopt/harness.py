"""Experiment driver: build a problem from a config, run an optimizer, record metrics.

Records are ``MetricRecord(iter, elapsed_sec, metric, value)`` rows where
``iter`` counts completed optimizer steps.  With ``clock="none"`` (the
default) ``elapsed_sec`` is written as 0 so identical configs give
byte-identical CSV files; ``clock="wall"`` records wall-clock seconds.
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data
from .errors import AuditError, ConfigError, MissingMetric, ZeroOptimal
from .manifolds import MEMBERSHIP_TOL, make_manifold
from .optim import OPTIMIZERS, make_optimizer
from .problems import IcaProblem, PcaProblem

__all__ = [
    "RunConfig",
    "MetricRecord",
    "Oracle",
    "Prepared",
    "prepare",
    "run_optimizer",
    "run_experiment",
    "optimality_gap",
    "relative_optimality_gap",
    "grid_search_alpha0",
    "emit_csv",
    "read_csv",
    "convergence_diagnostics",
    "Diagnostics",
    "primary_metric",
]

log = logging.getLogger(__name__)

PROBLEMS = ("pca", "ica", "mc")
DEFAULT_MANIFOLD = {"pca": "stiefel", "ica": "stiefel", "mc": "grassmann"}
WEIGHT_BOUND_SLACK = 1e-9
GAP_NOISE = 1e-9


@dataclass(frozen=True)
class MetricRecord:
    iter: int
    elapsed_sec: float
    metric: str
    value: float


@dataclass(frozen=True)
class Oracle:
    optimal_value: float
    source: str  # "eigendecomposition" | "commuting-diagonalizer" | "planted" | "external"

    def __post_init__(self):
        if not math.isfinite(self.optimal_value):
            raise ValueError("oracle value must be finite")


@dataclass(frozen=True)
class RunConfig:
    problem: str
    optimizer: str
    iters: int
    alpha0: tuple = (0.1,)
    manifold: str = None
    beta: float = 0.99
    epsilon: float = 1e-8
    batch_size: int = 10
    seed: int = 0
    lam: float = 0.01
    dataset: str = "synthetic"
    fmt: str = None
    # synthetic instance
    n: int = 50
    N: int = 1000
    rank: int = 5
    condition: float = 10.0
    noise_sd: float = 0.0
    density: float = 0.3
    data_seed: int = 0
    # run control
    record_every: int = None
    clock: str = "none"
    optimal: float = None
    symmetrize: bool = False
    audit: bool = True
    unit_weights: bool = False
    jobs: int = 1

    def __post_init__(self):
        a = self.alpha0
        a = (float(a),) if np.isscalar(a) else tuple(float(x) for x in a)
        object.__setattr__(self, "alpha0", a)
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        man = self.manifold or DEFAULT_MANIFOLD[self.problem]
        object.__setattr__(self, "manifold", man)
        if man not in ("stiefel", "grassmann"):
            raise ConfigError(f"manifold must be stiefel or grassmann, got {man!r}")
        if self.problem == "ica" and man != "stiefel":
            raise ConfigError("ica runs on the stiefel manifold")
        if self.problem == "mc" and man != "grassmann":
            raise ConfigError("mc runs on the grassmann manifold")
        if not isinstance(self.iters, (int, np.integer)) or self.iters < 1:
            raise ConfigError(f"iters must be a positive integer, got {self.iters!r}")
        if not self.alpha0 or any(not (x > 0 and math.isfinite(x)) for x in self.alpha0):
            raise ConfigError(f"alpha0 grid must be nonempty and positive, got {self.alpha0}")
        if not 0 <= self.beta < 1:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if self.record_every is not None and self.record_every < 1:
            raise ConfigError("record_every must be positive")
        if self.clock not in ("none", "wall"):
            raise ConfigError("clock must be 'none' or 'wall'")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")

    def with_alpha(self, alpha0):
        return replace(self, alpha0=(float(alpha0),))


@dataclass
class Prepared:
    problem: object
    oracle: Oracle = None
    holdout: tuple = None
    planted: np.ndarray = None


def _synthetic_spec(cfg, kind):
    try:
        return data.SyntheticSpec(
            kind, cfg.N, cfg.n, cfg.rank, cfg.condition, cfg.noise_sd, cfg.density, cfg.data_seed
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def prepare(cfg: RunConfig) -> Prepared:
    """Load or generate the problem named by ``cfg`` and its oracle."""
    synthetic = cfg.dataset in ("synthetic", "", None)
    if cfg.problem == "pca":
        if synthetic:
            inst = data.gen_pca(_synthetic_spec(cfg, "pca"), cfg.manifold)
            problem, planted = inst.problem, inst.planted
        else:
            Z = data.load_matrix_csv(cfg.dataset)
            if cfg.rank > Z.shape[0]:
                raise ConfigError(f"rank {cfg.rank} exceeds data dimension {Z.shape[0]}")
            problem, planted = PcaProblem(Z, make_manifold(cfg.manifold, Z.shape[0], cfg.rank)), None
        if cfg.optimal is not None:
            oracle = Oracle(cfg.optimal, "external")
        else:
            oracle = Oracle(problem.optimum()[0], "eigendecomposition")
        return Prepared(problem, oracle, planted=planted)
    if cfg.problem == "ica":
        if synthetic:
            inst = data.gen_ica(_synthetic_spec(cfg, "ica"))
            problem = inst.problem
            if cfg.optimal is not None:
                oracle = Oracle(cfg.optimal, "external")
            elif cfg.noise_sd == 0:
                val, idx = data.ica_commuting_optimum(inst.diagonals, cfg.rank)
                oracle = Oracle(val, "commuting-diagonalizer")
                return Prepared(problem, oracle, planted=inst.planted[:, idx])
            else:
                raise ConfigError("noisy synthetic ica needs an explicit --optimal value")
            return Prepared(problem, oracle)
        if cfg.optimal is None:
            raise ConfigError("ica from a file needs an explicit --optimal value")
        C = np.load(cfg.dataset)
        n = C.shape[-1]
        if cfg.rank > n:
            raise ConfigError(f"rank {cfg.rank} exceeds matrix size {n}")
        problem = IcaProblem(C, make_manifold("stiefel", n, cfg.rank), symmetrize=cfg.symmetrize)
        return Prepared(problem, Oracle(cfg.optimal, "external"))
    # mc
    if synthetic:
        inst = data.gen_mc(_synthetic_spec(cfg, "mc"), lam=cfg.lam)
        oracle = Oracle(cfg.optimal, "external") if cfg.optimal is not None else None
        return Prepared(inst.problem, oracle, holdout=inst.holdout, planted=inst.planted)
    ratings = data.parse_ratings(cfg.dataset, cfg.fmt)
    split = data.split_80_20(ratings, cfg.data_seed)
    if cfg.rank > ratings.n_items:
        raise ConfigError(f"rank {cfg.rank} exceeds item count {ratings.n_items}")
    problem, holdout = data.ratings_to_mc(split, cfg.rank, lam=cfg.lam)
    oracle = Oracle(cfg.optimal, "external") if cfg.optimal is not None else None
    return Prepared(problem, oracle, holdout=holdout)


def optimality_gap(cost_value, oracle: Oracle) -> float:
    gap = cost_value - oracle.optimal_value
    if gap < 0:
        if gap < -GAP_NOISE * max(1.0, abs(oracle.optimal_value)):
            log.warning("cost %.17g is below the oracle optimum %.17g", cost_value, oracle.optimal_value)
        gap = 0.0
    return gap


def relative_optimality_gap(cost_value, oracle: Oracle) -> float:
    if oracle.optimal_value == 0:
        raise ZeroOptimal("relative gap undefined for a zero optimum")
    return (cost_value - oracle.optimal_value) / abs(oracle.optimal_value)


def primary_metric(problem_name, records):
    names = {r.metric for r in records}
    for m in ("test_rmse", "relgap", "optgap", "cost") if problem_name == "mc" else (
        ("relgap", "optgap", "cost") if problem_name == "ica" else ("optgap", "relgap", "cost")
    ):
        if m in names:
            return m
    raise MissingMetric("no primary metric recorded")


def run_optimizer(
    prepared: Prepared,
    optimizer,
    iters,
    batch_size=10,
    seed=0,
    record_every=None,
    clock="none",
    audit=True,
    U0=None,
    callback=None,
):
    """Run ``iters`` steps of ``optimizer`` and return the list of records.

    The initial point and the batch stream are derived from ``seed`` only,
    so runs differing in step size share both.  ``callback(k, U, state)``
    is called after every step.
    """
    problem = prepared.problem
    M = problem.manifold
    init_seed, batch_seed = np.random.SeedSequence(seed).spawn(2)
    U = M.random_point(init_seed) if U0 is None else np.array(U0, dtype=float)
    pop = problem.population
    sampler = data.BatchSampler(len(pop), batch_size, batch_seed)
    every = record_every or max(1, iters // 200)
    state = optimizer.init_state(M.n, M.r)
    prev_w = optimizer.weights(state)
    H = 0.0
    records = []
    t0 = time.perf_counter()

    def record(k):
        el = time.perf_counter() - t0 if clock == "wall" else 0.0
        out = []
        cost = problem.cost(U)
        out.append(("cost", cost))
        if prepared.oracle is not None:
            out.append(("optgap", optimality_gap(cost, prepared.oracle)))
            if prepared.oracle.optimal_value != 0:
                out.append(("relgap", relative_optimality_gap(cost, prepared.oracle)))
        g = problem.grad(U)
        out.append(("gradnorm2", float(np.sum(g * g))))
        out.append(("H", H))
        feas = M.orthonormality_error(U)
        out.append(("feas", feas))
        if problem.name == "mc":
            out.append(("train_rmse", problem.rmse(U)))
            if prepared.holdout is not None:
                out.append(("test_rmse", problem.rmse(U, prepared.holdout)))
        records.extend(MetricRecord(k, el, name, float(v)) for name, v in out)
        if audit:
            if not feas <= MEMBERSHIP_TOL:
                raise AuditError(f"iterate left the manifold at step {k}: {feas:.3g}")
            for name, w in optimizer.weights(state).items():
                if w.size and w.max() > H * H + WEIGHT_BOUND_SLACK:
                    raise AuditError(f"{name} exceeds H^2 at step {k}: {w.max():.6g} > {H * H:.6g}")

    for k in range(1, iters + 1):
        batch = pop[next(sampler)]
        G = problem.grad(U, batch)
        H = max(H, float(np.linalg.norm(G)))
        U, state = optimizer.step(M, U, G, state)
        if audit:
            w = optimizer.weights(state)
            for name, arr in w.items():
                if np.any(arr < prev_w[name]):
                    raise AuditError(f"{name} decreased at step {k}")
            prev_w = w
        if callback is not None:
            callback(k, U, state)
        if k == 1 or k % every == 0 or k == iters:
            record(k)
    return records


def _optimizer_for(cfg, alpha0):
    return make_optimizer(
        cfg.optimizer, alpha0, beta=cfg.beta, epsilon=cfg.epsilon, unit_weights=cfg.unit_weights
    )


def run_experiment(cfg: RunConfig, prepared: Prepared = None):
    """Run the first (or only) step size of ``cfg``; deterministic in ``cfg``."""
    prepared = prepared or prepare(cfg)
    return run_optimizer(
        prepared,
        _optimizer_for(cfg, cfg.alpha0[0]),
        cfg.iters,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        record_every=cfg.record_every,
        clock=cfg.clock,
        audit=cfg.audit,
    )


def _run_alpha(args):
    cfg, alpha0 = args
    return run_experiment(cfg.with_alpha(alpha0))


def final_value(records, metric):
    vals = [r for r in records if r.metric == metric]
    if not vals:
        raise MissingMetric(metric)
    v = vals[-1].value
    return v if math.isfinite(v) else math.inf


def grid_search_alpha0(cfg: RunConfig, prepared: Prepared = None):
    """Run every grid value with the same seed and pick the best final primary metric.

    Ties go to the smaller step size.  Returns ``(best_alpha0, {alpha0: records})``.
    """
    grid = list(cfg.alpha0)
    results = {}
    if cfg.jobs > 1 and len(grid) > 1:
        uniq = list(dict.fromkeys(grid))
        with concurrent.futures.ProcessPoolExecutor(max_workers=min(cfg.jobs, len(uniq))) as ex:
            for a, recs in zip(uniq, ex.map(_run_alpha, [(cfg, a) for a in uniq])):
                results[a] = recs
    else:
        prepared = prepared or prepare(cfg)
        for a in grid:
            if a not in results:
                results[a] = run_experiment(cfg.with_alpha(a), prepared)
    metric = primary_metric(cfg.problem, next(iter(results.values())))
    best = min(results, key=lambda a: (final_value(results[a], metric), a))
    return best, results


def _fmt(x):
    return repr(float(x))


def emit_csv(records, path):
    """Write ``iter,elapsed_sec,metric,value`` (UTF-8, LF, shortest round-trip floats)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iter,elapsed_sec,metric,value\n")
        for r in records:
            fh.write(f"{int(r.iter)},{_fmt(r.elapsed_sec)},{r.metric},{_fmt(r.value)}\n")


def read_csv(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "iter,elapsed_sec,metric,value":
        raise ValueError(f"{path}: not a metrics file")
    out = []
    for ln in lines[1:]:
        it, el, name, val = ln.split(",")
        out.append(MetricRecord(int(it), float(el), name, float(val)))
    return out


@dataclass
class Diagnostics:
    """Per-checkpoint monitoring of the ``O(log T / sqrt(T))`` gradient-norm rate.

    ``ratio[k] = running_min[k] * sqrt(iters[k] - 1) / (1 + log iters[k])``.
    """

    iters: np.ndarray
    running_min: np.ndarray
    ratio: np.ndarray
    H: float = field(default=float("nan"))

    def ratio_at(self, it):
        k = int(np.searchsorted(self.iters, it))
        if k >= len(self.iters) or self.iters[k] != it:
            raise MissingMetric(f"no gradnorm2 record at iteration {it}")
        return float(self.ratio[k])


def convergence_diagnostics(records) -> Diagnostics:
    g = [(r.iter, r.value) for r in records if r.metric == "gradnorm2"]
    if not g:
        raise MissingMetric("gradnorm2")
    its = np.array([i for i, _ in g], dtype=np.int64)
    vals = np.array([v for _, v in g])
    run_min = np.minimum.accumulate(vals)
    ratio = run_min * np.sqrt(np.maximum(its - 1, 0)) / (1 + np.log(its))
    hs = [r.value for r in records if r.metric == "H"]
    return Diagnostics(its, run_min, ratio, max(hs) if hs else float("nan"))
