"""Concurrent batch evaluation and CPU-utilization sampling.

A batch is the candidates of one optimizer iteration. Results always come back
in candidate order, each candidate is evaluated exactly once with the seed
``base_seed ^ index``, and a failing candidate yields an
:class:`EvaluationFailure` in its slot instead of aborting the batch.
"""

from __future__ import annotations

import csv
import logging
import multiprocessing
import os
import sys
import threading
import time
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .params import ArgumentVector, SimResult

log = logging.getLogger(__name__)

_SEED_MASK = 2**64 - 1


class BatchError(RuntimeError):
    """The worker pool could not be brought up; nothing was evaluated."""


@dataclass(frozen=True)
class BatchRequest:
    candidates: Sequence[ArgumentVector]
    base_seed: int
    worker_count: int = 1

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")

    def seed_for(self, index: int) -> int:
        return (self.base_seed ^ index) & _SEED_MASK


@dataclass(frozen=True)
class EvaluationFailure:
    kind: str
    message: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.message}"


def _evaluate_one(evaluator, args, seed):
    try:
        result = evaluator.evaluate(args, seed)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a per-candidate outcome
        return EvaluationFailure(getattr(exc, "kind", type(exc).__name__), str(exc))
    if not isinstance(result, SimResult):
        return EvaluationFailure("output", f"evaluator returned {type(result).__name__}, not SimResult")
    return result


def _evaluate_chunk(evaluator, items):
    return [_evaluate_one(evaluator, args, seed) for args, seed in items]


def _ping(_):
    return os.getpid()


def _chunks(items: list, parts: int) -> list[list]:
    size, extra = divmod(len(items), parts)
    out, start = [], 0
    for i in range(parts):
        stop = start + size + (1 if i < extra else 0)
        if stop > start:
            out.append(items[start:stop])
        start = stop
    return out


class WorkerPool:
    """Long-lived pool shared by every batch of a run (or of several runs).

    ``backend="process"`` sidesteps the GIL for CPU-bound evaluators;
    ``"thread"`` suits evaluators that mostly wait on child processes.
    """

    def __init__(self, workers: int, backend: str = "process", start_method: str | None = None):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        if backend not in ("process", "thread"):
            raise ValueError(f"unknown backend {backend!r}")
        self.workers = workers
        self.backend = backend
        self.start_method = start_method or ("forkserver" if sys.platform != "win32" else "spawn")
        self._pool: Executor | None = None

    def start(self) -> WorkerPool:
        if self._pool is not None or self.workers == 1:
            return self
        try:
            if self.backend == "process":
                ctx = multiprocessing.get_context(self.start_method)
                self._pool = ProcessPoolExecutor(max_workers=self.workers, mp_context=ctx)
            else:
                self._pool = ThreadPoolExecutor(max_workers=self.workers)
            # Bring every worker up before the first timed batch.
            list(self._pool.map(_ping, range(self.workers)))
        except Exception as exc:
            self.close()
            raise BatchError(f"could not start {self.workers} {self.backend} workers: {exc}") from exc
        return self

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self) -> WorkerPool:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()

    def map(self, evaluator, items: list) -> list:
        if self.workers == 1 or len(items) == 1:
            return _evaluate_chunk(evaluator, items)
        self.start()
        chunks = _chunks(items, min(self.workers, len(items)))
        futures = [self._pool.submit(_evaluate_chunk, evaluator, chunk) for chunk in chunks]
        out = []
        for fut in futures:
            out.extend(fut.result())
        return out

    def batch_fn(self, evaluator):
        """Adapter for :func:`chainopt.optimizer.run`'s ``evaluate_batch`` argument."""

        def run_batch(args, base_seed):
            return evaluate_batch(BatchRequest(args, base_seed, self.workers), evaluator, pool=self)

        return run_batch


def evaluate_batch(request: BatchRequest, evaluator, pool: WorkerPool | None = None) -> list:
    """Evaluate every candidate of ``request``; results are in candidate order."""
    if not request.candidates:
        raise ValueError("empty batch")
    items = [(args, request.seed_for(i)) for i, args in enumerate(request.candidates)]
    if request.worker_count == 1:
        return _evaluate_chunk(evaluator, items)
    if pool is None:
        with WorkerPool(request.worker_count) as tmp:
            return tmp.map(evaluator, items)
    return pool.map(evaluator, items)


# --- resource sampling -----------------------------------------------------------


@dataclass
class ResourceTrace:
    """CPU utilization samples as a fraction of the whole machine (all CPUs)."""

    samples: list[tuple[float, float]] = field(default_factory=list)
    cpu_count: int = 1
    available: bool = True

    @property
    def acru(self) -> float | None:
        if not self.available or not self.samples:
            return None
        return sum(u for _, u in self.samples) / len(self.samples)


def _process_tree_cpu_seconds(proc) -> float:
    t = proc.cpu_times()
    total = t.user + t.system + t.children_user + t.children_system
    for child in proc.children(recursive=True):
        try:
            c = child.cpu_times()
            total += c.user + c.system
        except Exception:  # noqa: BLE001 - child exited between listing and reading
            continue
    return total


class ResourceSampler:
    """Background thread sampling process-tree CPU use every ``interval_s`` seconds."""

    MIN_TAIL_S = 1e-3

    def __init__(self, interval_s: float = 1.0):
        if not interval_s > 0:
            raise ValueError("sampling interval must be positive")
        self.interval_s = interval_s
        self.trace = ResourceTrace(cpu_count=os.cpu_count() or 1)
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._proc = None
        self._t0 = self._last_t = self._last_cpu = 0.0

    def start(self) -> ResourceSampler:
        try:
            import psutil

            self._proc = psutil.Process()
            self._last_cpu = _process_tree_cpu_seconds(self._proc)
        except Exception as exc:  # noqa: BLE001 - no CPU accounting on this platform
            log.warning("CPU accounting unavailable: %s", exc)
            self.trace.available = False
            return self
        self._t0 = self._last_t = time.perf_counter()
        self._thread = threading.Thread(target=self._loop, name="resource-sampler", daemon=True)
        self._thread.start()
        return self

    def _loop(self) -> None:
        while not self._stop.wait(self.interval_s):
            self._sample()

    def _sample(self, min_dt: float = 0.0) -> None:
        now = time.perf_counter()
        dt = now - self._last_t
        if dt <= min_dt:
            return
        cpu = _process_tree_cpu_seconds(self._proc)
        used = max(0.0, cpu - self._last_cpu)
        util = min(1.0, used / (dt * self.trace.cpu_count))
        self.trace.samples.append((now - self._t0, util))
        self._last_t, self._last_cpu = now, cpu

    def stop(self) -> ResourceTrace:
        if self._thread is not None:
            self._stop.set()
            self._thread.join()
            self._thread = None
            self._sample(min_dt=self.MIN_TAIL_S)
        return self.trace

    def __enter__(self) -> ResourceSampler:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def sample_resources(interval_s: float = 1.0) -> ResourceSampler:
    """Start sampling; call ``stop()`` (or leave the ``with`` block) to get the trace."""
    return ResourceSampler(interval_s).start()


def write_resources_csv(trace: ResourceTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("timestamp_s", "cpu_utilization", "cpu_count"))
        for ts, util in trace.samples:
            w.writerow([f"{ts:.6f}", f"{util:.6f}", trace.cpu_count])


def read_resources_csv(path) -> ResourceTrace:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    count = int(rows[0]["cpu_count"]) if rows else (os.cpu_count() or 1)
    return ResourceTrace([(float(r["timestamp_s"]), float(r["cpu_utilization"])) for r in rows], count)
