"""Experiment drivers behind the ``optimize`` and ``ablate`` subcommands."""

from __future__ import annotations

import csv
import logging
import statistics
import uuid
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from .config import RunConfig
from .executor import ResourceSampler, ResourceTrace, WorkerPool, write_resources_csv
from .optimizer import Algorithm, ConvergenceReport, run, write_timing_csv, write_trace_csv
from .params import Candidate
from .warmstart import WarmStartRecord, WarmStartStore, record_solutions, select_warm_starts

log = logging.getLogger(__name__)

TRACE_FILE = "trace.csv"
TIMING_FILE = "timing.csv"
RESOURCES_FILE = "resources.csv"
REPORT_FILE = "report.txt"
APPENDED_FILE = "warmstart-appended.txt"

GROUPS = {"A": (False, False), "B": (True, False), "C": (False, True), "D": (True, True)}
# Keys that may differ between ablation groups; everything else must hash identically.
GROUP_FLAGS = ("warmstart.enabled", "cmp.enabled")


@dataclass
class RunOutcome:
    report: ConvergenceReport
    resources: ResourceTrace
    warm_start: list[Candidate]
    appended: list[WarmStartRecord]
    workers: int


def warm_start_candidates(cfg: RunConfig, records: Sequence[WarmStartRecord] | None = None) -> list[Candidate]:
    if not cfg.warmstart.enabled:
        return []
    if records is None:
        records = WarmStartStore(cfg.warmstart.db).load() if cfg.warmstart.db else []
    n = cfg.warmstart.n or cfg.optimizer.population_size
    return select_warm_starts(records, cfg.objectives, cfg.space, n, cfg.warmstart.strict_coverage)


def optimize(cfg: RunConfig, *, pool: WorkerPool | None = None,
             records: Sequence[WarmStartRecord] | None = None, record: bool | None = None) -> RunOutcome:
    """One optimization run without writing artifacts.

    ``records`` replaces reading the store (a snapshot); ``record`` overrides
    ``warmstart.record`` for appending the run's solutions to the store.
    """
    evaluator = cfg.build_evaluator()
    warm = warm_start_candidates(cfg, records)
    workers = cfg.cmp.effective_workers
    own_pool = None
    if workers > 1 and pool is None:
        pool = own_pool = WorkerPool(workers, cfg.cmp.backend).start()
    try:
        batch = pool.batch_fn(evaluator) if workers > 1 else None
        with ResourceSampler(cfg.resource_interval_s) as sampler:
            report = run(cfg.optimizer, cfg.space, cfg.objectives, evaluator, warm_start=warm, evaluate_batch=batch)
    finally:
        if own_pool is not None:
            own_pool.close()
    appended: list[WarmStartRecord] = []
    if (cfg.warmstart.record if record is None else record) and cfg.warmstart.db is not None:
        appended = record_solutions(WarmStartStore(cfg.warmstart.db), report, cfg.space, cfg.objectives,
                                    run_id=uuid.uuid4().hex[:12])
    return RunOutcome(report, sampler.trace, warm, appended, workers)


def format_report(cfg: RunConfig, outcome: RunOutcome) -> str:
    rep = outcome.report
    lines = [
        f"name: {cfg.name}",
        f"algorithm: {rep.algorithm.value}",
        f"seed: {cfg.optimizer.seed}",
        f"converged: {str(rep.converged).lower()}",
        f"iteration_of_convergence: {rep.iteration_of_convergence if rep.converged else 'none'}",
        f"iterations: {rep.iterations}",
        f"time_to_convergence_s: {rep.time_to_convergence:.6f}",
        f"wall_time_total_s: {rep.wall_time_total:.6f}",
        f"evaluations: {rep.evaluations}",
        f"failures: {len(rep.failures)}",
        f"workers: {outcome.workers}",
        f"warm_start_candidates: {len(outcome.warm_start)}",
        f"acru: {_fmt_opt(outcome.resources.acru)}",
        f"best_U: {rep.best_u!r}",
    ]
    for p, v in zip(cfg.space.optimization_params, rep.best_candidate.values):
        lines.append(f"best.{p.name}: {v!r}")
    if rep.best_result is not None:
        for name, v in sorted(rep.best_result.values.items()):
            lines.append(f"metric.{name}: {v!r}")
        lines.append(f"feasible: {str(cfg.objectives.is_feasible(rep.best_result)).lower()}")
    return "\n".join(lines) + "\n"


def read_report(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        key, sep, value = line.partition(": ")
        if sep:
            out[key] = value
    return out


def _fmt_opt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.6f}"


def cmd_optimize(cfg: RunConfig) -> RunOutcome:
    """Run once and write trace, timing, resources, report and appended-record files."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    outcome = optimize(cfg)
    write_trace_csv(outcome.report.trace, out / TRACE_FILE)
    write_timing_csv(outcome.report.trace, out / TIMING_FILE)
    write_resources_csv(outcome.resources, out / RESOURCES_FILE)
    (out / REPORT_FILE).write_text(format_report(cfg, outcome))
    (out / APPENDED_FILE).write_text("".join(r.to_json() + "\n" for r in outcome.appended))
    return outcome


# --- ablation ------------------------------------------------------------------------


@dataclass(frozen=True)
class AblationRun:
    group: str
    algorithm: Algorithm
    seed: int
    iterations: int
    converged: bool
    toc_s: float
    acru: float | None
    best_u: float
    config_hash: str


@dataclass(frozen=True)
class AblationCell:
    """Per (group, algorithm) medians over seeds."""

    group: str
    algorithm: Algorithm
    toc_s: float
    acru: float | None
    iterations: float


@dataclass
class AblationResult:
    runs: list[AblationRun]
    cells: list[AblationCell]

    def group_mean(self, group: str, field: str = "toc_s") -> float | None:
        values = [getattr(c, field) for c in self.cells if c.group == group]
        if not values or any(v is None for v in values):
            return None
        return sum(values) / len(values)

    def cell(self, group: str, algorithm: Algorithm) -> AblationCell:
        return next(c for c in self.cells if c.group == group and c.algorithm is Algorithm(algorithm))


def group_config(cfg: RunConfig, group: str, algorithm: Algorithm, seed: int) -> RunConfig:
    ws, cmp = GROUPS[group]
    return replace(cfg, optimizer=cfg.optimizer.with_(algorithm=algorithm, seed=seed),
                   warmstart=replace(cfg.warmstart, enabled=ws), cmp=replace(cfg.cmp, enabled=cmp))


def prime_store(cfg: RunConfig, seed: int) -> list[WarmStartRecord]:
    """Append the solutions of one converged run (cold start, sequential) to the configured store."""
    if cfg.warmstart.db is None:
        raise ValueError("priming needs warmstart.db")
    prior = replace(cfg, optimizer=cfg.optimizer.with_(seed=seed), warmstart=replace(cfg.warmstart, enabled=False),
                    cmp=replace(cfg.cmp, enabled=False))
    outcome = optimize(prior, record=True)
    if not outcome.report.converged:
        log.warning("priming run (seed %d) did not converge", seed)
    return outcome.appended


def summarize(runs: Sequence[AblationRun]) -> list[AblationCell]:
    cells = []
    for group in GROUPS:
        for algo in dict.fromkeys(r.algorithm for r in runs):
            rows = [r for r in runs if r.group == group and r.algorithm is algo]
            if not rows:
                continue
            acrus = [r.acru for r in rows if r.acru is not None]
            cells.append(AblationCell(group, algo, statistics.median(r.toc_s for r in rows),
                                      statistics.median(acrus) if acrus else None,
                                      statistics.median(r.iterations for r in rows)))
    return cells


def cmd_ablate(cfg: RunConfig, groups: Sequence[str] = tuple(GROUPS),
               progress: Callable[[AblationRun], None] | None = None, write: bool = True) -> AblationResult:
    """Every group × algorithm × seed, with identical seeds and a read-only store snapshot."""
    records = WarmStartStore(cfg.warmstart.db).load() if cfg.warmstart.db else []
    seeds = range(cfg.ablation.seed_start, cfg.ablation.seed_start + cfg.ablation.seeds)
    runs: list[AblationRun] = []
    hashes: dict[tuple[Algorithm, int], str] = {}
    pool = WorkerPool(cfg.cmp.workers, cfg.cmp.backend) if any(GROUPS[g][1] for g in groups) else None
    try:
        if pool is not None:
            pool.start()
        for group in groups:
            for algo in cfg.ablation.algorithms:
                for seed in seeds:
                    gcfg = group_config(cfg, group, algo, seed)
                    digest = gcfg.fingerprint(exclude=GROUP_FLAGS)
                    if hashes.setdefault((algo, seed), digest) != digest:
                        raise RuntimeError(f"group {group} differs from the others beyond WS/CMP flags")
                    outcome = optimize(gcfg, pool=pool if GROUPS[group][1] else None, records=records,
                                       record=False)
                    rep = outcome.report
                    row = AblationRun(group, algo, seed, rep.iterations, rep.converged, rep.time_to_convergence,
                                      outcome.resources.acru, rep.best_u, digest[:16])
                    runs.append(row)
                    if progress is not None:
                        progress(row)
    finally:
        if pool is not None:
            pool.close()
    result = AblationResult(runs, summarize(runs))
    if write:
        write_ablation(result, Path(cfg.output))
    return result


RUN_COLUMNS = ("group", "ws", "cmp", "algorithm", "seed", "iterations", "converged", "toc_s", "acru", "best_U",
               "config_hash")
SUMMARY_COLUMNS = ("group", "ws", "cmp", "avg_toc_s", "avg_acru", "test", "algorithm", "toc_s", "acru",
                   "iterations")


def _onoff(flag: bool) -> str:
    return "on" if flag else "off"


def summary_rows(result: AblationResult) -> list[dict[str, str]]:
    """One row per cell in the group-major layout; the test id is ``<algorithm index><group letter>``."""
    rows = []
    algos = list(dict.fromkeys(c.algorithm for c in result.cells))
    for group, (ws, cmp) in GROUPS.items():
        cells = [c for c in result.cells if c.group == group]
        if not cells:
            continue
        avg_toc, avg_acru = result.group_mean(group), result.group_mean(group, "acru")
        for c in cells:
            rows.append({
                "group": group, "ws": _onoff(ws), "cmp": _onoff(cmp),
                "avg_toc_s": f"{avg_toc:.4f}", "avg_acru": _pct(avg_acru),
                "test": f"{algos.index(c.algorithm) + 1}{group.lower()}", "algorithm": c.algorithm.value,
                "toc_s": f"{c.toc_s:.4f}", "acru": _pct(c.acru), "iterations": f"{c.iterations:g}",
            })
    return rows


def _pct(x: float | None) -> str:
    return "n/a" if x is None else f"{100 * x:.2f}%"


def write_ablation(result: AblationResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RUN_COLUMNS)
        for r in result.runs:
            ws, cmp = GROUPS[r.group]
            w.writerow([r.group, _onoff(ws), _onoff(cmp), r.algorithm.value, r.seed, r.iterations,
                        str(r.converged).lower(), f"{r.toc_s:.6f}", "" if r.acru is None else f"{r.acru:.6f}",
                        repr(r.best_u), r.config_hash])
    rows = summary_rows(result)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    (out / "ablation.txt").write_text(format_ablation_table(rows))


def format_ablation_table(rows: Sequence[dict[str, str]]) -> str:
    headers = ("Group", "WS", "CMP", "Avg ToC (s)", "Avg ACRU", "Test", "Algorithm", "ToC (s)", "ACRU", "Iter")
    keys = ("group", "ws", "cmp", "avg_toc_s", "avg_acru", "test", "algorithm", "toc_s", "acru", "iterations")
    body, last = [], None
    for r in rows:
        first = r["group"] != last
        last = r["group"]
        body.append([r[k] if first or i >= 5 else "" for i, k in enumerate(keys)])
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(headers)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*headers), "  ".join("-" * w for w in widths)]
    lines += [fmt.format(*b) for b in body]
    return "\n".join(lines) + "\n"


def read_ablation_runs(path) -> list[AblationRun]:
    with open(path, newline="") as fh:
        return [AblationRun(r["group"], Algorithm(r["algorithm"]), int(r["seed"]), int(r["iterations"]),
                            r["converged"] == "true", float(r["toc_s"]), float(r["acru"]) if r["acru"] else None,
                            float(r["best_U"]), r["config_hash"])
                for r in csv.DictReader(fh)]
