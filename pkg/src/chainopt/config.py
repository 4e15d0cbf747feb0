"""Run configuration: a YAML document describing one optimization experiment.

Numbers may carry unit suffixes (``50MB``, ``600s``, ``1ms``); see
:mod:`chainopt.units`. Validation errors name the offending field path, e.g.
``parameters[1].range``. Relative paths resolve against the config file's
directory.

Top-level sections::

    parameters:   list of {name, range: [lo, hi]} or {name, fixed: value}, optional unit
    objectives:   list of {name, direction, weight, active}
    constraints:  list of {objective, sense: "<=" | ">=", bound}
    optimizer:    OptimizerConfig fields (algorithm, population_size, max_iter, seed, ...)
    evaluator:    {kind: chainsim | external | surrogate, ...}
    warmstart:    {enabled, db, n, strict_coverage, record}
    cmp:          {enabled, workers, backend}
    resources:    {interval}
    ablation:     {algorithms, seeds, seed_start}
    output:       directory for artifacts
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .benchmarks import ShiftedSphere
from .bridge import ChainSimEvaluator, ExternalEvaluator, ExternalSimSpec, SIM_FIELDS
from .chainsim import NetworkModel, SimConfig
from .optimizer import Algorithm, OptimizerConfig
from .params import (
    ConfigError,
    Constraint,
    Direction,
    ObjectiveSet,
    ObjectiveSpec,
    ParameterSpace,
    ParameterSpec,
)
from .units import parse_quantity

_SECTIONS = {"name", "parameters", "objectives", "constraints", "optimizer", "evaluator", "warmstart", "cmp",
             "resources", "ablation", "output"}


@dataclass(frozen=True)
class WarmStartSettings:
    enabled: bool = False
    db: Path | None = None
    n: int | None = None
    strict_coverage: bool = False
    record: bool = True


@dataclass(frozen=True)
class CmpSettings:
    enabled: bool = False
    workers: int = 4
    backend: str = "process"

    @property
    def effective_workers(self) -> int:
        return self.workers if self.enabled else 1


@dataclass(frozen=True)
class AblationSettings:
    algorithms: tuple[Algorithm, ...] = (Algorithm.DE, Algorithm.GA, Algorithm.PSO)
    seeds: int = 20
    seed_start: int = 0


@dataclass(frozen=True)
class RunConfig:
    space: ParameterSpace
    objectives: ObjectiveSet
    optimizer: OptimizerConfig
    evaluator: dict
    warmstart: WarmStartSettings = WarmStartSettings()
    cmp: CmpSettings = CmpSettings()
    resource_interval_s: float = 1.0
    ablation: AblationSettings = AblationSettings()
    output: Path = Path("out")
    name: str = "run"
    base_dir: Path = field(default=Path("."), compare=False)

    def build_evaluator(self):
        return build_evaluator(self.evaluator, self.space, self.base_dir)

    def effective(self) -> dict[str, Any]:
        """JSON-able view of every setting after overrides."""
        return {
            "name": self.name,
            "parameters": [
                {"name": p.name, "role": p.role.value, "range": list(p.range) if p.range else None,
                 "fixed": p.fixed_value, "unit": p.unit}
                for p in self.space
            ],
            "objectives": [{"name": o.name, "weight": o.weight, "active": o.active, "direction": o.direction.value}
                           for o in self.objectives.objectives],
            "constraints": [{"objective": c.objective, "bound": c.bound, "sense": c.sense}
                            for c in self.objectives.constraints],
            "optimizer": {f.name: _jsonable(getattr(self.optimizer, f.name)) for f in fields(self.optimizer)},
            "evaluator": _jsonable(self.evaluator),
            "warmstart": {f.name: _jsonable(getattr(self.warmstart, f.name)) for f in fields(self.warmstart)},
            "cmp": {f.name: _jsonable(getattr(self.cmp, f.name)) for f in fields(self.cmp)},
            "resources": {"interval": self.resource_interval_s},
        }

    def fingerprint(self, exclude: tuple[str, ...] = ()) -> str:
        """SHA-256 of the effective config minus the dotted keys in ``exclude``."""
        data = copy.deepcopy(self.effective())
        for key in exclude:
            section, _, leaf = key.partition(".")
            if leaf:
                data.get(section, {}).pop(leaf, None)
            else:
                data.pop(section, None)
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (Algorithm, Direction)):
        return value.value
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


# --- parsing helpers ---------------------------------------------------------------


def _mapping(value, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError("expected a mapping", path)
    return value


def _check_keys(data: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}", path)


def _number(value, path: str) -> float:
    try:
        return parse_quantity(value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path) from None


def _int(value, path: str, minimum: int = 1) -> int:
    number = _number(value, path)
    if number != int(number) or number < minimum:
        raise ConfigError(f"expected an integer >= {minimum}, got {value!r}", path)
    return int(number)


def _bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"expected true/false, got {value!r}", path)
    return value


def _path(value, base: Path, path: str) -> Path:
    if not isinstance(value, (str, os.PathLike)):
        raise ConfigError("expected a path", path)
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


def _check_creatable(p: Path, path: str) -> None:
    probe = p
    while not probe.exists():
        if probe.parent == probe:
            break
        probe = probe.parent
    if not (probe.is_dir() and os.access(probe, os.W_OK)):
        raise ConfigError(f"{p} cannot be created", path)


def _parameters(data, path="parameters") -> ParameterSpace:
    if not isinstance(data, list) or not data:
        raise ConfigError("expected a non-empty list", path)
    specs = []
    for i, item in enumerate(data):
        p = f"{path}[{i}]"
        item = _mapping(item, p)
        _check_keys(item, {"name", "range", "fixed", "unit"}, p)
        name = item.get("name")
        if not isinstance(name, str) or not name:
            raise ConfigError("missing name", f"{p}.name")
        unit = str(item.get("unit", ""))
        try:
            if "range" in item:
                if "fixed" in item:
                    raise ConfigError("give either range or fixed, not both", p)
                rng = item["range"]
                if not isinstance(rng, list) or len(rng) != 2:
                    raise ConfigError("expected [lo, hi]", f"{p}.range")
                specs.append(ParameterSpec.optimization(name, _number(rng[0], f"{p}.range[0]"),
                                                        _number(rng[1], f"{p}.range[1]"), unit))
            elif "fixed" in item:
                specs.append(ParameterSpec.fixed(name, _number(item["fixed"], f"{p}.fixed"), unit))
            else:
                raise ConfigError("needs a range or a fixed value", p)
        except ConfigError as exc:
            if exc.path and exc.path.startswith(path):
                raise
            raise ConfigError(str(exc).split(": ", 1)[-1], p) from None
    try:
        space = ParameterSpace(tuple(specs))
    except ConfigError as exc:
        raise ConfigError(str(exc), path) from None
    space.require_optimizable()
    return space


def _objectives(data, constraints, path="objectives") -> ObjectiveSet:
    if not isinstance(data, list) or not data:
        raise ConfigError("expected a non-empty list", path)
    objs = []
    for i, item in enumerate(data):
        p = f"{path}[{i}]"
        item = _mapping(item, p)
        _check_keys(item, {"name", "weight", "active", "direction"}, p)
        if not isinstance(item.get("name"), str):
            raise ConfigError("missing name", f"{p}.name")
        direction = str(item.get("direction", "minimize")).lower()
        if direction not in ("minimize", "maximize"):
            raise ConfigError("direction must be minimize or maximize", f"{p}.direction")
        try:
            objs.append(ObjectiveSpec(item["name"], _number(item.get("weight", 1.0), f"{p}.weight"),
                                      _bool(item.get("active", True), f"{p}.active"), Direction(direction)))
        except ConfigError as exc:
            if exc.path and exc.path.startswith(p):
                raise
            raise ConfigError(str(exc).split(": ", 1)[-1], f"{p}.weight") from None
    cons = []
    for i, item in enumerate(constraints or []):
        p = f"constraints[{i}]"
        item = _mapping(item, p)
        _check_keys(item, {"objective", "bound", "sense"}, p)
        if not isinstance(item.get("objective"), str):
            raise ConfigError("missing objective", f"{p}.objective")
        sense = item.get("sense", "<=")
        if sense not in ("<=", ">="):
            raise ConfigError("sense must be '<=' or '>='", f"{p}.sense")
        cons.append(Constraint(item["objective"], _number(item.get("bound"), f"{p}.bound"), sense))
    try:
        out = ObjectiveSet(tuple(objs), tuple(cons))
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], path) from None
    out.require_active()
    return out


_OPT_INTS = {"population_size", "max_iter", "seed"}
_OPT_FLOATS = {"ga_mutation_prob", "ga_crossover_rate", "ga_blend_alpha", "ga_mutation_sigma", "de_F", "de_CR",
               "pso_omega", "pso_c1", "pso_c2", "epsilon"}


def _optimizer(data, path="optimizer") -> OptimizerConfig:
    data = _mapping(data, path)
    allowed = {f.name for f in fields(OptimizerConfig)}
    _check_keys(data, allowed, path)
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        p = f"{path}.{key}"
        if key == "algorithm":
            try:
                kwargs[key] = Algorithm(str(value).upper())
            except ValueError:
                raise ConfigError("algorithm must be GA, DE or PSO", p) from None
        elif key in _OPT_INTS:
            kwargs[key] = _int(value, p, minimum=0 if key == "seed" else 1)
        elif key in _OPT_FLOATS:
            kwargs[key] = _number(value, p)
        elif key in ("lb", "ub"):
            kwargs[key] = tuple(_number(v, f"{p}[{i}]") for i, v in enumerate(value))
        else:
            kwargs[key] = value
    return OptimizerConfig(**kwargs)


def _evaluator(data, space: ParameterSpace, base: Path, path="evaluator") -> dict:
    data = dict(_mapping(data, path))
    kind = data.get("kind", "chainsim")
    if kind == "chainsim":
        _check_keys(data, {"kind", "replicates", "common_random_numbers", "network", "sim"}, path)
        if "network" in data:
            net = _path(data["network"], base, f"{path}.network")
            if not net.exists():
                raise ConfigError(f"{net} does not exist", f"{path}.network")
            data["network"] = str(net)
        sim = _mapping(data.get("sim"), f"{path}.sim")
        _check_keys(sim, set(SIM_FIELDS) | {"seed"}, f"{path}.sim")
        data["sim"] = {k: _number(v, f"{path}.sim.{k}") for k, v in sim.items()}
        data["replicates"] = _int(data.get("replicates", 1), f"{path}.replicates")
        data["common_random_numbers"] = _bool(data.get("common_random_numbers", False),
                                              f"{path}.common_random_numbers")
    elif kind == "surrogate":
        _check_keys(data, {"kind", "center", "offset", "delay", "delay_mode"}, path)
        if "delay" in data:
            data["delay"] = _number(data["delay"], f"{path}.delay")
        for key in ("center", "offset"):
            if key in data:
                if not isinstance(data[key], list) or len(data[key]) != space.dimension:
                    raise ConfigError(f"expected {space.dimension} numbers", f"{path}.{key}")
                data[key] = [_number(v, f"{path}.{key}") for v in data[key]]
        if data.get("delay_mode", "sleep") not in ("sleep", "busy"):
            raise ConfigError("must be sleep or busy", f"{path}.delay_mode")
    elif kind == "external":
        _check_keys(data, {"kind", "executable", "args", "timeout", "metrics"}, path)
        if not isinstance(data.get("executable"), str):
            raise ConfigError("missing executable", f"{path}.executable")
        if "timeout" in data:
            data["timeout"] = _number(data["timeout"], f"{path}.timeout")
        data["args"] = [str(a) for a in data.get("args", [])]
        data["metrics"] = [str(m) for m in data.get("metrics", [])]
    else:
        raise ConfigError(f"unknown evaluator kind {kind!r}", f"{path}.kind")
    data["kind"] = kind
    build_evaluator(data, space, base)  # surfaces construction errors now
    return data


def build_evaluator(data: dict, space: ParameterSpace, base: Path = Path(".")):
    kind = data.get("kind", "chainsim")
    if kind == "chainsim":
        network = NetworkModel.from_file(data["network"]) if data.get("network") else NetworkModel()
        sim = dict(data.get("sim", {}))
        seed = int(sim.pop("seed", 0))
        for k in ("block_height", "node_count"):
            if k in sim:
                sim[k] = int(sim[k])
        base_cfg = SimConfig(network=network, **sim)
        unknown = [n for n in space.names if n not in SIM_FIELDS]
        if unknown:
            raise ConfigError(f"unmapped simulator parameter(s): {', '.join(unknown)}", "parameters")
        fixed_seed = seed if data.get("common_random_numbers") else None
        return ChainSimEvaluator(base_cfg, int(data.get("replicates", 1)), fixed_seed)
    if kind == "surrogate":
        return ShiftedSphere.for_space(
            space, center=data.get("center"),
            **({"offset": tuple(data["offset"])} if data.get("offset") else {}),
            delay_s=float(data.get("delay", 0.0)), delay_mode=data.get("delay_mode", "sleep"))
    spec = ExternalSimSpec(data["executable"], tuple(data.get("args", ())), float(data.get("timeout", 300.0)),
                           tuple(data.get("metrics", ())))
    spec.validate(space)
    return ExternalEvaluator(spec)


def parse_config(data: dict, base_dir: Path = Path("."), source: str = "<config>") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping", source)
    _check_keys(data, _SECTIONS, "<root>")
    space = _parameters(data.get("parameters"))
    objectives = _objectives(data.get("objectives"), data.get("constraints"))
    try:
        optimizer = _optimizer(data.get("optimizer"))
        optimizer.bounds_for(space)
    except ConfigError as exc:
        if exc.path and exc.path.startswith("optimizer"):
            raise
        raise ConfigError(str(exc).split(": ", 1)[-1], "optimizer") from None
    evaluator = _evaluator(data.get("evaluator"), space, base_dir)

    ws = _mapping(data.get("warmstart"), "warmstart")
    _check_keys(ws, {"enabled", "db", "n", "strict_coverage", "record"}, "warmstart")
    warm = WarmStartSettings(
        enabled=_bool(ws.get("enabled", False), "warmstart.enabled"),
        db=_path(ws["db"], base_dir, "warmstart.db") if ws.get("db") else None,
        n=_int(ws["n"], "warmstart.n") if ws.get("n") is not None else None,
        strict_coverage=_bool(ws.get("strict_coverage", False), "warmstart.strict_coverage"),
        record=_bool(ws.get("record", True), "warmstart.record"),
    )
    cm = _mapping(data.get("cmp"), "cmp")
    _check_keys(cm, {"enabled", "workers", "backend"}, "cmp")
    if cm.get("backend", "process") not in ("process", "thread"):
        raise ConfigError("backend must be process or thread", "cmp.backend")
    cmp = CmpSettings(_bool(cm.get("enabled", False), "cmp.enabled"), _int(cm.get("workers", 4), "cmp.workers"),
                      cm.get("backend", "process"))
    res = _mapping(data.get("resources"), "resources")
    _check_keys(res, {"interval"}, "resources")
    interval = _number(res.get("interval", 1.0), "resources.interval")
    if not interval > 0:
        raise ConfigError("must be positive", "resources.interval")
    ab = _mapping(data.get("ablation"), "ablation")
    _check_keys(ab, {"algorithms", "seeds", "seed_start"}, "ablation")
    try:
        algos = tuple(Algorithm(str(a).upper()) for a in ab.get("algorithms", ["DE", "GA", "PSO"]))
    except ValueError:
        raise ConfigError("algorithms must be among GA, DE, PSO", "ablation.algorithms") from None
    ablation = AblationSettings(algos, _int(ab.get("seeds", 20), "ablation.seeds"),
                                _int(ab.get("seed_start", 0), "ablation.seed_start", minimum=0))
    output = _path(data.get("output", "out"), base_dir, "output")
    cfg = RunConfig(space=space, objectives=objectives, optimizer=optimizer, evaluator=evaluator, warmstart=warm,
                    cmp=cmp, resource_interval_s=interval, ablation=ablation, output=output,
                    name=str(data.get("name", "run")), base_dir=base_dir)
    validate_paths(cfg)
    return cfg


def validate_paths(cfg: RunConfig) -> None:
    _check_creatable(cfg.output, "output")
    if cfg.warmstart.db is not None and not cfg.warmstart.db.exists():
        _check_creatable(cfg.warmstart.db.parent, "warmstart.db")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", str(path)) from None
    return parse_config(data, path.resolve().parent, str(path))


def with_overrides(cfg: RunConfig, *, seed: int | None = None, workers: int | None = None,
                   warmstart_db: str | Path | None = None, out: str | Path | None = None) -> RunConfig:
    """Apply the CLI's global flags on top of a loaded config."""
    from dataclasses import replace

    if seed is not None:
        cfg = replace(cfg, optimizer=cfg.optimizer.with_(seed=seed))
    if workers is not None:
        if workers < 1:
            raise ConfigError("must be >= 1", "--workers")
        cfg = replace(cfg, cmp=replace(cfg.cmp, workers=workers, enabled=workers > 1))
    if warmstart_db is not None:
        cfg = replace(cfg, warmstart=replace(cfg.warmstart, db=Path(warmstart_db), enabled=True))
    if out is not None:
        cfg = replace(cfg, output=Path(out))
    validate_paths(cfg)
    return cfg
