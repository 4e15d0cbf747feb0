"""Deterministic surrogate evaluator used in place of a slow simulator.

``ShiftedSphere`` works in box-normalized coordinates ``z = (x - lb) / (ub - lb)``
and reports three metrics:

* ``sphere`` = ``|z - center|^2``
* ``f1``, ``f2`` = squared distances to ``center +/- offset``; the two conflict,
  and their equal-weight sum is a shifted sphere with its minimum at ``center``.

An optional per-evaluation delay stands in for simulator runtime: ``"sleep"``
waits (a simulator running elsewhere), ``"busy"`` burns CPU in the caller.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .params import ArgumentVector, ConfigError, ParameterSpace, SimResult


@dataclass(frozen=True)
class ShiftedSphere:
    names: tuple[str, ...]
    lb: tuple[float, ...]
    ub: tuple[float, ...]
    center: tuple[float, ...]
    offset: tuple[float, ...] | None = None
    delay_s: float = 0.0
    delay_mode: str = "sleep"

    def __post_init__(self):
        d = len(self.names)
        if not (len(self.lb) == len(self.ub) == len(self.center) == d):
            raise ConfigError("names, bounds and center must have equal length", "evaluator")
        if self.offset is None:
            object.__setattr__(self, "offset", tuple([0.05] * d))
        if self.delay_mode not in ("sleep", "busy"):
            raise ConfigError("delay_mode must be 'sleep' or 'busy'", "evaluator.delay_mode")
        if self.delay_s < 0:
            raise ConfigError("delay must be non-negative", "evaluator.delay_s")

    @classmethod
    def for_space(cls, space: ParameterSpace, center=None, **kwargs) -> ShiftedSphere:
        opt = space.optimization_params
        lb, ub = space.bounds()
        if center is None:
            # Off-center so a search biased toward the middle of the box gains nothing.
            center = tuple(0.3 + 0.4 * i / max(1, len(opt) - 1) for i in range(len(opt)))
        return cls(tuple(p.name for p in opt), tuple(lb), tuple(ub), tuple(center), **kwargs)

    def normalized(self, args: ArgumentVector) -> np.ndarray:
        x = np.array([args[name] for name in self.names], dtype=float)
        return (x - np.asarray(self.lb)) / (np.asarray(self.ub) - np.asarray(self.lb))

    def optimum(self) -> np.ndarray:
        """Raw-unit coordinates of the sphere minimum."""
        lb, ub = np.asarray(self.lb), np.asarray(self.ub)
        return lb + np.asarray(self.center) * (ub - lb)

    def evaluate(self, args: ArgumentVector, seed: int = 0) -> SimResult:
        self._delay()
        z = self.normalized(args)
        c, off = np.asarray(self.center), np.asarray(self.offset)
        return SimResult(values={
            "sphere": float(np.sum((z - c) ** 2)),
            "f1": float(np.sum((z - c - off) ** 2)),
            "f2": float(np.sum((z - c + off) ** 2)),
        })

    def _delay(self) -> None:
        if self.delay_s <= 0:
            return
        if self.delay_mode == "sleep":
            time.sleep(self.delay_s)
            return
        end = time.perf_counter() + self.delay_s
        while time.perf_counter() < end:
            pass
