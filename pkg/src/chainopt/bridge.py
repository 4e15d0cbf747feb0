"""Evaluator adapters between the optimizer and a blockchain simulator.

Every adapter exposes ``evaluate(args, seed) -> SimResult``. The in-process
adapter calls the built-in simulator directly; the external adapter launches
one child process per evaluation and reads ``metric:<name>=<decimal>`` lines
from its standard output, ignoring everything else.

Numbers are rendered into child-process arguments with 17 significant digits,
so a float survives the round trip bit-for-bit.
"""

from __future__ import annotations

import math
import re
import subprocess
from dataclasses import dataclass, fields
from typing import Mapping, Protocol, Sequence

import numpy as np

from .chainsim import NetworkModel, SimConfig, run_simulation
from .params import ArgumentVector, ConfigError, ParameterSpace, SimResult


class Evaluator(Protocol):
    def evaluate(self, args: ArgumentVector, seed: int) -> SimResult: ...


class SimulatorFailure(RuntimeError):
    """An external evaluation that produced no usable result.

    ``kind`` is one of ``launch``, ``timeout``, ``exit``, ``output``, ``missing-metric``.
    """

    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(message)


def format_number(value: float) -> str:
    return format(float(value), ".17g")


# --- in-process adapter ----------------------------------------------------------

_INT_FIELDS = {"block_height", "node_count"}
SIM_FIELDS = tuple(f.name for f in fields(SimConfig) if f.name not in ("network", "seed"))


@dataclass(frozen=True)
class ChainSimEvaluator:
    """Runs the built-in simulator for each argument vector.

    ``replicates`` runs are averaged per evaluation. With ``fixed_seed`` set,
    replicate ``r`` always uses seed ``fixed_seed + r`` whatever seed the
    caller passes (common random numbers across candidates); otherwise the
    caller's seed is used as the base.
    """

    base: SimConfig = SimConfig()
    replicates: int = 1
    fixed_seed: int | None = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1", "evaluator.replicates")

    def sim_config(self, args: ArgumentVector, seed: int) -> SimConfig:
        unknown = [n for n in args.names if n not in SIM_FIELDS]
        if unknown:
            raise ConfigError(f"unmapped simulator parameter(s): {', '.join(unknown)}", "parameters")
        values = {}
        for name, value in zip(args.names, args.values):
            values[name] = int(round(value)) if name in _INT_FIELDS else float(value)
        return self.base.with_values(seed=int(seed), **values)

    def evaluate(self, args: ArgumentVector, seed: int) -> SimResult:
        base_seed = self.fixed_seed if self.fixed_seed is not None else seed
        cfg = self.sim_config(args, base_seed)
        if self.replicates == 1:
            return run_simulation(cfg)
        runs = [run_simulation(cfg.with_values(seed=(base_seed + r) & (2**64 - 1))) for r in range(self.replicates)]
        return SimResult(
            values={k: float(np.mean([r.values[k] for r in runs])) for k in runs[0].values},
            diagnostics={k: float(np.mean([r.diagnostics[k] for r in runs])) for k in runs[0].diagnostics},
        )


def evaluate_in_process(args: ArgumentVector, seed: int, network: NetworkModel | None = None) -> SimResult:
    base = SimConfig() if network is None else SimConfig(network=network)
    return ChainSimEvaluator(base).evaluate(args, seed)


# --- external child-process adapter -------------------------------------------------

_PLACEHOLDER = re.compile(r"\{(seed|param:([^{}]+))\}")
_METRIC_LINE = re.compile(r"^metric:([A-Za-z_][A-Za-z0-9_.\-]*)=([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)$")


def parse_metrics(text: str) -> dict[str, float]:
    """Collect every ``metric:<name>=<decimal>`` line; other lines are ignored."""
    out = {}
    for line in text.splitlines():
        m = _METRIC_LINE.match(line.strip())
        if m:
            value = float(m.group(2))
            if math.isfinite(value):
                out[m.group(1)] = value
    return out


def format_metrics(values: Mapping[str, float]) -> str:
    return "".join(f"metric:{name}={format_number(v)}\n" for name, v in values.items())


@dataclass(frozen=True)
class ExternalSimSpec:
    executable: str
    args: tuple[str, ...] = ()
    timeout: float = 300.0
    metrics: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        object.__setattr__(self, "metrics", tuple(self.metrics))
        if not self.timeout > 0:
            raise ConfigError("timeout must be positive", "evaluator.external.timeout")

    def referenced_params(self) -> list[str]:
        return [m.group(2) for a in self.args for m in _PLACEHOLDER.finditer(a) if m.group(2)]

    def validate(self, space: ParameterSpace) -> None:
        unknown = sorted(set(self.referenced_params()) - set(space.names))
        if unknown:
            raise ConfigError(f"template references unknown parameter(s): {', '.join(unknown)}",
                              "evaluator.external.args")

    def render(self, args: ArgumentVector, seed: int) -> list[str]:
        values = args.as_dict()

        def sub(m: re.Match) -> str:
            if m.group(1) == "seed":
                return str(int(seed))
            name = m.group(2)
            if name not in values:
                raise ConfigError(f"template references unknown parameter: {name}", "evaluator.external.args")
            return format_number(values[name])

        return [self.executable] + [_PLACEHOLDER.sub(sub, a) for a in self.args]


def evaluate_external(spec: ExternalSimSpec, args: ArgumentVector, seed: int) -> SimResult:
    argv = spec.render(args, seed)
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=spec.timeout)
    except subprocess.TimeoutExpired:
        raise SimulatorFailure("timeout", f"timeout after {spec.timeout:g} s") from None
    except OSError as exc:
        raise SimulatorFailure("launch", f"could not launch {argv[0]}: {exc}") from None
    if proc.returncode != 0:
        tail = proc.stderr.strip().splitlines()[-1:] or [""]
        raise SimulatorFailure("exit", f"exit status {proc.returncode} {tail[0]}".rstrip())
    values = parse_metrics(proc.stdout)
    for name in spec.metrics:
        if name not in values:
            raise SimulatorFailure("missing-metric", f"missing metric: {name}")
    if not values:
        raise SimulatorFailure("output", "no metric lines in simulator output")
    return SimResult(values=values)


@dataclass(frozen=True)
class ExternalEvaluator:
    spec: ExternalSimSpec

    def evaluate(self, args: ArgumentVector, seed: int) -> SimResult:
        return evaluate_external(self.spec, args, seed)


def chainsim_command(python: str, params: Sequence[str], extra: Sequence[str] = ()) -> ExternalSimSpec:
    """Command line that runs this package's ``simulate`` subcommand as the external simulator."""
    flag = {"block_size_bytes": "--block-size-bytes", "expected_mining_interval_s": "--interval-s",
            "node_count": "--nodes", "block_height": "--blocks", "avg_hash_rate": "--hash-rate",
            "tx_size_bytes": "--tx-size-bytes"}
    args = ["-m", "chainopt", "simulate"]
    for name in params:
        args += [flag[name], f"{{param:{name}}}"]
    args += ["--seed", "{seed}", *extra]
    return ExternalSimSpec(python, tuple(args), metrics=("fork_rate", "throughput_tps"))
