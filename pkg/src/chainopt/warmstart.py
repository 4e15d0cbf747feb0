"""Warm-start store: prior non-dominated solutions ranked by parameter-range overlap.

Records live in an append-only JSON-lines file, one record per line with a
``version`` field. Selection keeps only records whose active-objective
signature matches the query, scores each by the mean per-dimension interval
Jaccard similarity between the record's ranges and the current ones, and
returns the top ``n`` as candidates clamped into the current box.
"""

from __future__ import annotations

import json
import logging
import math
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from filelock import FileLock

from .params import Candidate, Direction, ObjectiveSet, ParameterSpace, SimResult

log = logging.getLogger(__name__)

STORE_VERSION = 1


@dataclass(frozen=True)
class WarmStartRecord:
    objective_signature: tuple[str, ...]
    param_values: dict[str, float]
    param_ranges: dict[str, tuple[float, float]]
    achieved: dict[str, float]
    directions: dict[str, str] = field(default_factory=dict)
    run_id: str = ""
    created: float = 0.0

    def __post_init__(self):
        if not self.objective_signature:
            raise ValueError("objective signature must be non-empty")
        object.__setattr__(self, "objective_signature", tuple(sorted(self.objective_signature)))
        for name, value in self.param_values.items():
            lo, hi = self.param_ranges[name]
            if not lo <= value <= hi:
                raise ValueError(f"{name}={value} lies outside its range [{lo}, {hi}]")

    def to_json(self) -> str:
        return json.dumps({
            "version": STORE_VERSION,
            "objectives": list(self.objective_signature),
            "params": self.param_values,
            "ranges": {k: list(v) for k, v in self.param_ranges.items()},
            "achieved": self.achieved,
            "directions": self.directions,
            "run_id": self.run_id,
            "created": self.created,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> WarmStartRecord:
        data = json.loads(line)
        if data.get("version") != STORE_VERSION:
            raise ValueError(f"unsupported record version {data.get('version')!r}")
        return cls(
            objective_signature=tuple(data["objectives"]),
            param_values={k: float(v) for k, v in data["params"].items()},
            param_ranges={k: (float(v[0]), float(v[1])) for k, v in data["ranges"].items()},
            achieved={k: float(v) for k, v in data["achieved"].items()},
            directions=dict(data.get("directions", {})),
            run_id=str(data.get("run_id", "")),
            created=float(data.get("created", 0.0)),
        )

    def minimization_vector(self) -> tuple[float, ...]:
        """Achieved values of the signature objectives, negated where maximized."""
        return tuple(
            -self.achieved[name] if self.directions.get(name) == Direction.MAXIMIZE.value else self.achieved[name]
            for name in self.objective_signature
        )


@dataclass(frozen=True)
class SimilarityScore:
    record: WarmStartRecord
    js: float
    index: int


def interval_jaccard(a: Sequence[float], b: Sequence[float]) -> float:
    """Length of the intersection over length of the union of two closed intervals."""
    (a_lo, a_hi), (b_lo, b_hi) = a, b
    if not (a_lo < a_hi and b_lo < b_hi):
        raise ValueError(f"degenerate interval: {tuple(a)} / {tuple(b)}")
    inter = max(0.0, min(a_hi, b_hi) - max(a_lo, b_lo))
    union = (a_hi - a_lo) + (b_hi - b_lo) - inter
    return inter / union


def covers(outer: Sequence[float], inner: Sequence[float]) -> bool:
    return outer[0] <= inner[0] and inner[1] <= outer[1]


def config_similarity(space: ParameterSpace, record: WarmStartRecord, strict_coverage: bool = False) -> float:
    """Mean interval Jaccard over the optimization parameters; fixed ones do not count.

    A record lacking any optimization parameter scores 0, as does one that fails
    full range coverage when ``strict_coverage`` is set.
    """
    scores = []
    for p in space.optimization_params:
        rng = record.param_ranges.get(p.name)
        if rng is None or p.name not in record.param_values:
            return 0.0
        if strict_coverage and not covers(rng, p.range):
            return 0.0
        scores.append(interval_jaccard(p.range, rng))
    return sum(scores) / len(scores) if scores else 0.0


def rank_records(records: Sequence[WarmStartRecord], objectives: ObjectiveSet, space: ParameterSpace,
                 strict_coverage: bool = False) -> list[SimilarityScore]:
    """Signature-matching records by descending similarity, newest first on ties, then file order."""
    signature = objectives.signature()
    scored = [SimilarityScore(r, config_similarity(space, r, strict_coverage), i)
              for i, r in enumerate(records) if r.objective_signature == signature]
    if strict_coverage:
        scored = [s for s in scored if s.js > 0.0]
    return sorted(scored, key=lambda s: (-s.js, -s.record.created, s.index))


def select_warm_starts(records: Sequence[WarmStartRecord], objectives: ObjectiveSet, space: ParameterSpace,
                       n: int, strict_coverage: bool = False) -> list[Candidate]:
    if n < 1:
        raise ValueError("n must be >= 1")
    top = rank_records(records, objectives, space, strict_coverage)[:n]
    return [Candidate.clamped([s.record.param_values[p.name] for p in space.optimization_params], space)
            for s in top]


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """Pareto dominance for minimization."""
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def non_dominated(vectors: Sequence[Sequence[float]]) -> list[int]:
    return [i for i, v in enumerate(vectors)
            if not any(dominates(w, v) for j, w in enumerate(vectors) if j != i)]


def solution_records(candidates: Sequence[Candidate], results: Sequence[SimResult | None], space: ParameterSpace,
                     objectives: ObjectiveSet, run_id: str | None = None,
                     created: float | None = None) -> list[WarmStartRecord]:
    """Records for the non-dominated candidates among ``candidates``.

    Dominance is checked on the raw active-objective values (maximized ones
    negated). When constraints exist and some candidate satisfies them, only
    feasible candidates compete. Identical parameter vectors are kept once.
    """
    run_id = run_id or uuid.uuid4().hex[:12]
    created = time.time() if created is None else created
    active = objectives.active
    pool = [(c, r) for c, r in zip(candidates, results)
            if r is not None and all(o.name in r.values and math.isfinite(r.values[o.name]) for o in active)]
    feasible = [(c, r) for c, r in pool if objectives.is_feasible(r)] if objectives.constraints else pool
    pool = feasible or pool
    unique, seen = [], set()
    for c, r in pool:
        if c.values not in seen:
            seen.add(c.values)
            unique.append((c, r))
    vectors = [tuple(o.sign * r.values[o.name] for o in sorted(active, key=lambda o: o.name)) for _, r in unique]
    opt = space.optimization_params
    out = []
    for i in non_dominated(vectors):
        c, r = unique[i]
        out.append(WarmStartRecord(
            objective_signature=objectives.signature(),
            param_values={p.name: v for p, v in zip(opt, c.values)},
            param_ranges={p.name: p.range for p in opt},
            achieved={o.name: float(r.values[o.name]) for o in active},
            directions={o.name: o.direction.value for o in active},
            run_id=run_id,
            created=created,
        ))
    return out


class WarmStartStore:
    """Append-only record file guarded by an advisory lock for writers."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = FileLock(str(self.path) + ".lock")

    def load(self) -> list[WarmStartRecord]:
        if not self.path.exists():
            return []
        records = []
        for lineno, line in enumerate(self.path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                records.append(WarmStartRecord.from_json(line))
            except (ValueError, KeyError, TypeError) as exc:
                log.warning("%s:%d: skipping corrupt record (%s)", self.path, lineno, exc)
        return records

    def append(self, records: Iterable[WarmStartRecord]) -> int:
        lines = [r.to_json() + "\n" for r in records]
        if not lines:
            return 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock, open(self.path, "a") as fh:
            fh.writelines(lines)
        return len(lines)

    def rewrite(self, records: Iterable[WarmStartRecord]) -> None:
        """Replace the file contents (used by pruning only)."""
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with self._lock:
            tmp.write_text("".join(r.to_json() + "\n" for r in records))
            tmp.replace(self.path)


def record_solutions(store: WarmStartStore, report, space: ParameterSpace, objectives: ObjectiveSet,
                     run_id: str | None = None) -> list[WarmStartRecord]:
    """Append the run's non-dominated final candidates to ``store``.

    A write failure is logged, not raised; the records are returned either way.
    """
    records = solution_records(report.final_population, report.final_results, space, objectives, run_id)
    try:
        store.append(records)
    except OSError as exc:
        log.warning("could not write warm-start records to %s: %s", store.path, exc)
    return records


def prune_dominated(records: Sequence[WarmStartRecord]) -> list[WarmStartRecord]:
    """Drop records dominated by another record with the same objective signature."""
    keep = []
    for i, r in enumerate(records):
        mine = r.minimization_vector()
        if not any(j != i and o.objective_signature == r.objective_signature
                   and dominates(o.minimization_vector(), mine) for j, o in enumerate(records)):
            keep.append(r)
    return keep
