"""Parameter and objective vocabulary shared by the optimizer, simulator bridge and CLI.

A simulator input is either an *optimization* parameter (varied inside a closed
range, indicator 1) or a *fixed* parameter (pinned to a constant, indicator 0).
Objectives are scalarized into a single value ``U`` that is always minimized;
maximized objectives enter with a negative sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

# Additive penalty scale for violated hard constraints.
PENALTY = 1e6


class ConfigError(ValueError):
    """Invalid configuration. ``path`` locates the offending field when known."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ShapeError(ValueError):
    """Candidate length does not match the number of optimization parameters."""


class MissingObjectiveError(KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing objective value: {name}")

    def __str__(self) -> str:
        return self.args[0]


class Role(str, Enum):
    OPTIMIZATION = "optimization"
    FIXED = "fixed"


class Direction(str, Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    role: Role
    range: tuple[float, float] | None = None
    fixed_value: float | None = None
    unit: str = ""

    def __post_init__(self):
        if not self.name:
            raise ConfigError("parameter name must be non-empty")
        object.__setattr__(self, "role", Role(self.role))
        if self.role is Role.OPTIMIZATION:
            if self.range is None or self.fixed_value is not None:
                raise ConfigError("optimization parameter needs a range and no fixed value", self.name)
            lo, hi = (float(v) for v in self.range)
            if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
                raise ConfigError(f"range must satisfy lo < hi, got [{lo}, {hi}]", self.name)
            object.__setattr__(self, "range", (lo, hi))
        else:
            if self.fixed_value is None or self.range is not None:
                raise ConfigError("fixed parameter needs a fixed value and no range", self.name)
            value = float(self.fixed_value)
            if not math.isfinite(value):
                raise ConfigError("fixed value must be finite", self.name)
            object.__setattr__(self, "fixed_value", value)

    @classmethod
    def optimization(cls, name: str, lo: float, hi: float, unit: str = "") -> ParameterSpec:
        return cls(name, Role.OPTIMIZATION, range=(lo, hi), unit=unit)

    @classmethod
    def fixed(cls, name: str, value: float, unit: str = "") -> ParameterSpec:
        return cls(name, Role.FIXED, fixed_value=value, unit=unit)

    @property
    def indicator(self) -> int:
        return 1 if self.role is Role.OPTIMIZATION else 0


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered parameter declarations; argument vectors follow this order.

    An all-fixed space is allowed (it describes a single simulator call); the
    optimizer itself requires at least one optimization parameter.
    """

    params: tuple[ParameterSpec, ...]

    def __post_init__(self):
        params = tuple(self.params)
        names = [p.name for p in params]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"duplicate parameter names: {', '.join(dupes)}")
        object.__setattr__(self, "params", params)

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    @property
    def optimization_params(self) -> tuple[ParameterSpec, ...]:
        return tuple(p for p in self.params if p.role is Role.OPTIMIZATION)

    @property
    def dimension(self) -> int:
        return len(self.optimization_params)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        opt = self.optimization_params
        lb = np.array([p.range[0] for p in opt], dtype=float)
        ub = np.array([p.range[1] for p in opt], dtype=float)
        return lb, ub

    def require_optimizable(self) -> None:
        if self.dimension == 0:
            raise ConfigError("parameter space has no optimization parameters", "parameters")

    def get(self, name: str) -> ParameterSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)


@dataclass(frozen=True)
class Candidate:
    """Optimizer-proposed values, one per optimization parameter, in space order."""

    values: tuple[float, ...]

    @classmethod
    def clamped(cls, values: Iterable[float], space: ParameterSpace) -> Candidate:
        values = [float(v) for v in values]
        opt = space.optimization_params
        if len(values) != len(opt):
            raise ShapeError(
                f"candidate has {len(values)} values but the space has {len(opt)} optimization parameters"
            )
        return cls(tuple(min(max(v, p.range[0]), p.range[1]) for v, p in zip(values, opt)))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ArgumentVector:
    """Full simulator input: one value per parameter of the space, in space order."""

    names: tuple[str, ...]
    values: tuple[float, ...]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))

    def __getitem__(self, item: int | str) -> float:
        if isinstance(item, str):
            return self.values[self.names.index(item)]
        return self.values[item]

    def __len__(self) -> int:
        return len(self.values)


def assemble_arguments(candidate: Candidate | Sequence[float], space: ParameterSpace) -> ArgumentVector:
    """Build the simulator argument vector for ``candidate``.

    Each entry is ``ind * c + (1 - ind) * f`` where ``ind`` is the parameter's
    indicator, ``c`` the candidate value and ``f`` the fixed value.
    """
    values = candidate.values if isinstance(candidate, Candidate) else tuple(candidate)
    n_opt = space.dimension
    if len(values) != n_opt:
        raise ShapeError(f"candidate has {len(values)} values, expected {n_opt}")
    proposed = iter(values)
    out = []
    for p in space.params:
        ind = p.indicator
        c = float(next(proposed)) if ind else 0.0
        f = 0.0 if ind else p.fixed_value
        out.append(ind * c + (1 - ind) * f)
    return ArgumentVector(space.names, tuple(out))


@dataclass(frozen=True)
class ObjectiveSpec:
    name: str
    weight: float = 1.0
    active: bool = True
    direction: Direction = Direction.MINIMIZE

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise ConfigError(f"weight must be positive, got {self.weight}", self.name)

    @property
    def sign(self) -> float:
        return 1.0 if self.direction is Direction.MINIMIZE else -1.0


@dataclass(frozen=True)
class Constraint:
    objective: str
    bound: float
    sense: str = "<="

    def __post_init__(self):
        if self.sense not in ("<=", ">="):
            raise ConfigError(f"constraint sense must be '<=' or '>=', got {self.sense!r}", self.objective)

    def violation(self, value: float) -> float:
        if self.sense == "<=":
            return max(0.0, value - self.bound)
        return max(0.0, self.bound - value)


@dataclass(frozen=True)
class ObjectiveSet:
    objectives: tuple[ObjectiveSpec, ...]
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        objectives = tuple(self.objectives)
        names = [o.name for o in objectives]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate objective names", "objectives")
        object.__setattr__(self, "objectives", objectives)
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @property
    def active(self) -> tuple[ObjectiveSpec, ...]:
        return tuple(o for o in self.objectives if o.active)

    def require_active(self) -> None:
        # An all-inactive set scalarizes to 0; only optimizing over it is meaningless.
        if not self.active:
            raise ConfigError("at least one objective must be active", "objectives")

    def signature(self) -> tuple[str, ...]:
        return tuple(sorted(o.name for o in self.active))

    def required_metrics(self) -> tuple[str, ...]:
        names = [o.name for o in self.active]
        names += [c.objective for c in self.constraints if c.objective not in names]
        return tuple(names)

    def is_feasible(self, result: SimResult) -> bool:
        return all(c.violation(result.values[c.objective]) == 0.0 for c in self.constraints)


@dataclass(frozen=True)
class SimResult:
    values: Mapping[str, float]
    diagnostics: Mapping[str, float] = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return self.values[name]


def scalarize(result: SimResult, objectives: ObjectiveSet) -> float:
    """Weighted, direction-signed sum of the active objectives plus constraint penalties."""
    u = 0.0
    for obj in objectives.objectives:
        if not obj.active:
            continue
        if obj.name not in result.values:
            raise MissingObjectiveError(obj.name)
        u += obj.weight * obj.sign * float(result.values[obj.name])
    for con in objectives.constraints:
        if con.objective not in result.values:
            raise MissingObjectiveError(con.objective)
        excess = con.violation(float(result.values[con.objective]))
        if excess > 0.0:
            u += PENALTY * excess / (abs(con.bound) or 1.0)
    return u
