"""Population-based optimizers (GA, DE, PSO) over box-constrained candidates.

All three share the same outer loop: evaluate a batch, scalarize, record the
trace, stop once the normalized population diameter drops below ``epsilon``
or ``max_iter`` iterations have run. Populations are ``(N, D)`` float arrays
in raw parameter units; bounds come from the optimization parameters of the
:class:`~chainopt.params.ParameterSpace`.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .params import (
    Candidate,
    ConfigError,
    MissingObjectiveError,
    ObjectiveSet,
    ParameterSpace,
    SimResult,
    assemble_arguments,
    scalarize,
)

log = logging.getLogger(__name__)

WORST_U = math.inf


class Algorithm(str, Enum):
    GA = "GA"
    DE = "DE"
    PSO = "PSO"


_DEFAULT_MAX_ITER = {Algorithm.GA: 200, Algorithm.DE: 200, Algorithm.PSO: 150}


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: Algorithm = Algorithm.PSO
    population_size: int = 50
    max_iter: int | None = None
    lb: tuple[float, ...] | None = None
    ub: tuple[float, ...] | None = None
    ga_mutation_prob: float = 0.001
    ga_crossover_rate: float = 0.9
    ga_crossover: str = "blend"
    ga_blend_alpha: float = 0.5
    ga_mutation_sigma: float = 0.1
    de_F: float = 0.5
    de_CR: float = 0.3
    pso_omega: float = 0.5
    pso_c1: float = 0.8
    pso_c2: float = 0.8
    epsilon: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if self.max_iter is None:
            object.__setattr__(self, "max_iter", _DEFAULT_MAX_ITER[self.algorithm])
        self.validate()

    def validate(self) -> None:
        n = self.population_size
        if not (isinstance(n, int) and n >= 1):
            raise ConfigError(f"must be a positive integer, got {n!r}", "optimizer.population_size")
        if not (isinstance(self.max_iter, int) and self.max_iter >= 1):
            raise ConfigError(f"must be a positive integer, got {self.max_iter!r}", "optimizer.max_iter")
        if self.algorithm is Algorithm.GA and n % 2:
            raise ConfigError("GA pairs parents, population size must be even", "optimizer.population_size")
        if self.algorithm is Algorithm.DE and n < 4:
            raise ConfigError("DE/rand/1 needs at least 4 individuals", "optimizer.population_size")
        for name in ("ga_mutation_prob", "ga_crossover_rate", "de_CR"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError("must lie in [0, 1]", f"optimizer.{name}")
        if self.ga_crossover not in ("blend", "uniform"):
            raise ConfigError("must be 'blend' or 'uniform'", "optimizer.ga_crossover")
        if self.de_F < 0:
            raise ConfigError("must be non-negative", "optimizer.de_F")
        if not self.epsilon > 0:
            raise ConfigError("must be positive", "optimizer.epsilon")
        if (self.lb is None) != (self.ub is None):
            raise ConfigError("lb and ub must be given together", "optimizer.lb")
        if self.lb is not None:
            lb, ub = np.asarray(self.lb, float), np.asarray(self.ub, float)
            if lb.shape != ub.shape or not np.all(lb < ub):
                raise ConfigError("need lb < ub component-wise", "optimizer.lb")

    def bounds_for(self, space: ParameterSpace) -> tuple[np.ndarray, np.ndarray]:
        space.require_optimizable()
        lb, ub = space.bounds()
        if self.lb is not None:
            if len(self.lb) != len(lb):
                raise ConfigError(f"expected {len(lb)} bounds, got {len(self.lb)}", "optimizer.lb")
            lb, ub = np.asarray(self.lb, float), np.asarray(self.ub, float)
        return lb, ub

    def with_(self, **changes) -> OptimizerConfig:
        if "algorithm" in changes and "max_iter" not in changes:
            changes["max_iter"] = None
        return replace(self, **changes)


# --- operators ---------------------------------------------------------------


def init_population(n: int, lb: np.ndarray, ub: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform sampling ``lb + u * (ub - lb)`` independently per dimension and individual."""
    lb, ub = np.asarray(lb, float), np.asarray(ub, float)
    return lb + rng.random((n, len(lb))) * (ub - lb)


def population_diameter(pop: np.ndarray, lb: np.ndarray, ub: np.ndarray) -> float:
    """Largest per-dimension spread of the population, in units of the box width."""
    pop = np.asarray(pop, float)
    if len(pop) == 0:
        return 0.0
    return float(np.max((pop.max(axis=0) - pop.min(axis=0)) / (np.asarray(ub) - np.asarray(lb))))


def has_converged(pop: np.ndarray, lb: np.ndarray, ub: np.ndarray, epsilon: float = 1e-6) -> bool:
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return population_diameter(pop, lb, ub) < epsilon


def check_pso_stability(omega: float, c1: float, c2: float) -> bool:
    """Whether ``c1 + c2 < 24 (1 - omega**2) / (7 - 5 omega)`` holds for ``-1 < omega < 1``."""
    if 7.0 - 5.0 * omega == 0.0:
        raise ValueError("stability bound undefined at omega = 1.4")
    if not -1.0 < omega < 1.0:
        return False
    return c1 + c2 < 24.0 * (1.0 - omega**2) / (7.0 - 5.0 * omega)


@dataclass
class PsoState:
    x: np.ndarray
    v: np.ndarray
    p: np.ndarray
    p_u: np.ndarray
    g: np.ndarray
    g_u: float
    k: int = 0

    @classmethod
    def start(cls, x: np.ndarray, u: np.ndarray) -> PsoState:
        best = int(np.argmin(u))
        return cls(x=x.copy(), v=np.zeros_like(x), p=x.copy(), p_u=np.asarray(u, float).copy(),
                   g=x[best].copy(), g_u=float(u[best]))


def pso_velocity(x, v, p, g, omega, c1, c2, r1, r2):
    return omega * v + c1 * r1 * (p - x) + c2 * r2 * (g - x)


def pso_step(state: PsoState, config: OptimizerConfig, lb: np.ndarray, ub: np.ndarray,
             rng: np.random.Generator | None = None, r1=None, r2=None) -> PsoState:
    """Move every particle once; bests are updated separately after evaluation.

    ``r1``/``r2`` default to fresh uniform draws per particle per dimension.
    """
    shape = state.x.shape
    if r1 is None:
        r1 = rng.random(shape)
    if r2 is None:
        r2 = rng.random(shape)
    v = pso_velocity(state.x, state.v, state.p, state.g, config.pso_omega, config.pso_c1, config.pso_c2, r1, r2)
    x = np.clip(state.x + v, lb, ub)
    return replace(state, x=x, v=v, k=state.k + 1)


def pso_update_bests(state: PsoState, u: np.ndarray) -> PsoState:
    u = np.asarray(u, float)
    better = u < state.p_u
    p = np.where(better[:, None], state.x, state.p)
    p_u = np.where(better, u, state.p_u)
    best = int(np.argmin(p_u))
    g, g_u = state.g, state.g_u
    if p_u[best] < g_u:
        g, g_u = p[best].copy(), float(p_u[best])
    return replace(state, p=p, p_u=p_u, g=g, g_u=g_u)


def de_mutation(base, diff_a, diff_b, F: float) -> np.ndarray:
    return base + F * (diff_a - diff_b)


def de_trials(pop: np.ndarray, config: OptimizerConfig, lb: np.ndarray, ub: np.ndarray,
              rng: np.random.Generator) -> np.ndarray:
    """DE/rand/1/bin trial vectors, one per target, clamped to the box."""
    n, d = pop.shape
    if n < 4:
        raise ConfigError("DE/rand/1 needs at least 4 individuals", "optimizer.population_size")
    trials = np.empty_like(pop)
    for i in range(n):
        others = np.delete(np.arange(n), i)
        r1, r2, r3 = rng.choice(others, size=3, replace=False)
        donor = de_mutation(pop[r1], pop[r2], pop[r3], config.de_F)
        mask = rng.random(d) < config.de_CR
        mask[rng.integers(d)] = True
        trials[i] = np.where(mask, donor, pop[i])
    return np.clip(trials, lb, ub)


def de_select(pop, u, trials, trial_u):
    keep = np.asarray(trial_u) <= np.asarray(u)
    return np.where(keep[:, None], trials, pop), np.where(keep, trial_u, u)


def tournament(u: np.ndarray, rng: np.random.Generator, size: int = 2) -> int:
    idx = rng.integers(len(u), size=size)
    return int(idx[np.argmin(u[idx])])


def uniform_crossover(p1: np.ndarray, p2: np.ndarray, take_second: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Swap genes where ``take_second`` is set."""
    return np.where(take_second, p2, p1), np.where(take_second, p1, p2)


def blend_crossover(p1, p2, alpha: float, rng: np.random.Generator):
    """BLX-alpha: each child gene uniform on the parents' interval widened by ``alpha`` on both sides."""
    lo, hi = np.minimum(p1, p2), np.maximum(p1, p2)
    span = hi - lo
    a, b = lo - alpha * span, hi + alpha * span
    return a + rng.random(p1.shape) * (b - a), a + rng.random(p1.shape) * (b - a)


def gaussian_mutation(x: np.ndarray, prob: float, sigma: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    hit = rng.random(x.shape) < prob
    if not hit.any():
        return x
    return np.where(hit, x + rng.normal(0.0, 1.0, x.shape) * sigma, x)


def ga_offspring(pop: np.ndarray, u: np.ndarray, config: OptimizerConfig, lb: np.ndarray, ub: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
    """``N - 1`` children from tournament-2 parents; the caller re-inserts the elite."""
    n, d = pop.shape
    sigma = config.ga_mutation_sigma * (ub - lb)
    children = []
    while len(children) < n - 1:
        a, b = pop[tournament(u, rng)], pop[tournament(u, rng)]
        if rng.random() < config.ga_crossover_rate:
            if config.ga_crossover == "uniform":
                a, b = uniform_crossover(a, b, rng.random(d) < 0.5)
            else:
                a, b = blend_crossover(a, b, config.ga_blend_alpha, rng)
        children += [a, b]
    children = np.array(children[: n - 1])
    children = gaussian_mutation(children, config.ga_mutation_prob, sigma, rng)
    return np.clip(children, lb, ub)


# --- run loop ------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    best_u: float
    diversity: float
    evaluations: int
    wall_clock_s: float


@dataclass
class ConvergenceReport:
    algorithm: Algorithm
    converged: bool
    iteration_of_convergence: int | None
    wall_time_to_convergence: float | None
    wall_time_total: float
    best_candidate: Candidate
    best_u: float
    best_result: SimResult | None
    trace: list[TraceRow]
    final_population: list[Candidate]
    final_results: list[SimResult | None]
    final_u: list[float]
    evaluations: int
    failures: list[str] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.trace[-1].iteration if self.trace else 0

    @property
    def time_to_convergence(self) -> float:
        """Wall time to convergence, or the whole run when it never converged."""
        return self.wall_time_to_convergence if self.converged else self.wall_time_total


TRACE_COLUMNS = ("iteration", "best_U", "diversity", "evaluations")


def write_trace_csv(trace: Sequence[TraceRow], path) -> None:
    """Deterministic columns only; wall-clock timings go to :func:`write_timing_csv`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([row.iteration, repr(row.best_u), repr(row.diversity), row.evaluations])


def write_timing_csv(trace: Sequence[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("iteration", "wall_clock_s"))
        for row in trace:
            w.writerow([row.iteration, f"{row.wall_clock_s:.6f}"])


def read_trace_csv(path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"iteration": int(r["iteration"]), "best_U": float(r["best_U"]),
             "diversity": float(r["diversity"]), "evaluations": int(r["evaluations"])} for r in rows]


def iteration_seed(seed: int, iteration: int) -> int:
    """Base evaluation seed for one iteration's batch."""
    return int(np.random.SeedSequence([seed & (2**64 - 1), iteration]).generate_state(1, np.uint64)[0])


BatchFn = Callable[[list, int], list]


class _Evaluator:
    """Turns population rows into argument vectors, evaluates them as one batch and scalarizes."""

    def __init__(self, space, objectives, evaluate_batch: BatchFn, seed: int):
        self.space = space
        self.objectives = objectives
        self.evaluate_batch = evaluate_batch
        self.seed = seed
        self.count = 0
        self.failures: list[str] = []

    def __call__(self, rows: np.ndarray, iteration: int) -> tuple[np.ndarray, list]:
        args = [assemble_arguments(Candidate.clamped(r, self.space), self.space) for r in rows]
        outcomes = self.evaluate_batch(args, iteration_seed(self.seed, iteration))
        if len(outcomes) != len(args):
            raise RuntimeError(f"batch returned {len(outcomes)} results for {len(args)} candidates")
        self.count += len(args)
        u = np.empty(len(args))
        results: list[SimResult | None] = []
        for i, out in enumerate(outcomes):
            if isinstance(out, SimResult):
                try:
                    u[i] = scalarize(out, self.objectives)
                    results.append(out)
                    continue
                except MissingObjectiveError as exc:
                    reason = str(exc)
            else:
                reason = str(out)
            u[i] = WORST_U
            results.append(None)
            self.failures.append(f"iteration {iteration} candidate {i}: {reason}")
            log.warning("evaluation failed (iteration %d, candidate %d): %s", iteration, i, reason)
        return u, results


def _sequential_batch(evaluator):
    from .executor import BatchRequest, evaluate_batch

    def run_batch(args, base_seed):
        return evaluate_batch(BatchRequest(args, base_seed, 1), evaluator)

    return run_batch


def run(config: OptimizerConfig, space: ParameterSpace, objectives: ObjectiveSet, evaluator=None,
        warm_start: Sequence[Candidate] | None = None, evaluate_batch: BatchFn | None = None,
        callback: Callable[[TraceRow], None] | None = None) -> ConvergenceReport:
    """Optimize ``objectives`` over ``space``.

    Parameters
    ----------
    evaluator
        Object with ``evaluate(args, seed) -> SimResult``; evaluated sequentially
        unless ``evaluate_batch`` is given.
    warm_start
        Candidates that replace the random initial population; padded with
        uniform samples when fewer than ``population_size``.
    evaluate_batch
        ``(list[ArgumentVector], base_seed) -> list[SimResult | failure]``,
        typically a bound :meth:`chainopt.executor.WorkerPool.batch_fn`.
    """
    config.validate()
    objectives.require_active()
    lb, ub = config.bounds_for(space)
    if evaluate_batch is None:
        if evaluator is None:
            raise ValueError("need an evaluator or an evaluate_batch function")
        evaluate_batch = _sequential_batch(evaluator)
    rng = np.random.default_rng(config.seed)
    n = config.population_size
    t0 = time.perf_counter()

    pop = _initial_population(config, space, lb, ub, rng, warm_start)
    evaluate = _Evaluator(space, objectives, evaluate_batch, config.seed)
    u, results = evaluate(pop, 0)

    trace: list[TraceRow] = []
    converged_at: int | None = None
    toc: float | None = None
    best_u, best_x, best_res = math.inf, pop[0].copy(), None

    def record(k: int, pop: np.ndarray) -> bool:
        nonlocal converged_at, toc
        diversity = population_diameter(pop, lb, ub)
        elapsed = time.perf_counter() - t0
        row = TraceRow(k, best_u, diversity, evaluate.count, elapsed)
        trace.append(row)
        if callback is not None:
            callback(row)
        if diversity < config.epsilon:
            converged_at, toc = k, elapsed
            return True
        return False

    def track_best(xs, us, rs):
        nonlocal best_u, best_x, best_res
        i = int(np.argmin(us))
        if us[i] < best_u:
            best_u, best_x, best_res = float(us[i]), xs[i].copy(), rs[i]

    track_best(pop, u, results)
    algo = config.algorithm
    if algo is Algorithm.PSO:
        state = PsoState.start(pop, u)
    done = record(0, pop)
    k = 0
    while not done and k < config.max_iter:
        k += 1
        if algo is Algorithm.PSO:
            state = pso_step(state, config, lb, ub, rng)
            u, results = evaluate(state.x, k)
            state = pso_update_bests(state, u)
            pop = state.x
            track_best(pop, u, results)
        elif algo is Algorithm.DE:
            trials = de_trials(pop, config, lb, ub, rng)
            trial_u, trial_res = evaluate(trials, k)
            keep = trial_u <= u
            results = [tr if kp else r for r, tr, kp in zip(results, trial_res, keep)]
            pop, u = de_select(pop, u, trials, trial_u)
            track_best(pop, u, results)
        else:
            elite = int(np.argmin(u))
            children = ga_offspring(pop, u, config, lb, ub, rng)
            child_u, child_res = evaluate(children, k)
            pop = np.vstack([pop[elite : elite + 1], children])
            u = np.concatenate([[u[elite]], child_u])
            results = [results[elite]] + child_res
            track_best(pop, u, results)
        done = record(k, pop)

    total = time.perf_counter() - t0
    return ConvergenceReport(
        algorithm=algo,
        converged=converged_at is not None,
        iteration_of_convergence=converged_at,
        wall_time_to_convergence=toc,
        wall_time_total=total,
        best_candidate=Candidate.clamped(best_x, space),
        best_u=best_u,
        best_result=best_res,
        trace=trace,
        final_population=[Candidate.clamped(r, space) for r in pop],
        final_results=list(results),
        final_u=[float(x) for x in u],
        evaluations=evaluate.count,
        failures=evaluate.failures,
    )


def _initial_population(config, space, lb, ub, rng, warm_start) -> np.ndarray:
    n = config.population_size
    warm = [Candidate.clamped(c.values if isinstance(c, Candidate) else c, space).values
            for c in (warm_start or [])][:n]
    parts = []
    if warm:
        parts.append(np.clip(np.array(warm, dtype=float), lb, ub))
    if len(warm) < n:
        parts.append(init_population(n - len(warm), lb, ub, rng))
    return np.vstack(parts)
