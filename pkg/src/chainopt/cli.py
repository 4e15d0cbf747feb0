"""Command-line entry point.

Exit status: 0 success, 1 invalid input or configuration, 2 failure while running.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .bridge import format_metrics
from .chainsim import DEFAULT_TX_SIZE_BYTES, NetworkModel, SimConfig, run_simulation
from .config import RunConfig, load_config, with_overrides
from .executor import BatchError
from .params import ConfigError
from .units import parse_quantity
from .warmstart import WarmStartRecord, WarmStartStore, config_similarity, prune_dominated

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("chainopt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # Bad usage is invalid input, so it shares exit status 1 with config errors.
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _quantity(text: str) -> float:
    try:
        return parse_quantity(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _count(text: str) -> int:
    value = _quantity(text)
    if value != value or value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(round(value))


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an unsigned 64-bit integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed out of range: {text}")
    return value


def _add_global_flags(p: argparse.ArgumentParser, default) -> None:
    # Subcommands use SUPPRESS so they do not reset flags given before the subcommand name.
    p.add_argument("--config", type=Path, default=default, help="run configuration (YAML)")
    p.add_argument("--seed", type=_u64, default=default, help="optimizer seed (overrides the config)")
    p.add_argument("--workers", type=_count, default=default, help="parallel evaluation workers; >1 enables CMP")
    p.add_argument("--warmstart-db", type=Path, default=default, help="warm-start store; enables warm starting")
    p.add_argument("--out", type=Path, default=default, help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=0 if default is None else default)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    _add_global_flags(common, argparse.SUPPRESS)

    parser = _Parser(prog="chainopt", description="Simulation-driven blockchain parameter optimization.")
    _add_global_flags(parser, None)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("optimize", parents=[common], help="run one optimization")

    ab = sub.add_parser("ablate", parents=[common], help="WS x CMP ablation over GA, DE and PSO")
    ab.add_argument("--seeds", type=_count, help="seeds per cell (overrides ablation.seeds)")
    ab.add_argument("--prime-seed", type=_u64,
                    help="first record one converged cold-start run into the store with this seed")

    sim = sub.add_parser("simulate", parents=[common], help="run the built-in simulator once")
    sim.add_argument("--block-size-bytes", type=_quantity, default=SimConfig.block_size_bytes)
    sim.add_argument("--interval-s", type=_quantity, default=SimConfig.expected_mining_interval_s)
    sim.add_argument("--nodes", type=_count, default=SimConfig.node_count)
    sim.add_argument("--blocks", type=_count, default=SimConfig.block_height)
    sim.add_argument("--hash-rate", type=_quantity, default=SimConfig.avg_hash_rate)
    sim.add_argument("--tx-size-bytes", type=_quantity, default=DEFAULT_TX_SIZE_BYTES)
    sim.add_argument("--network", type=Path, help="latency/bandwidth model (YAML or JSON)")

    db = sub.add_parser("warmstart-db", parents=[common], help="inspect or maintain the warm-start store")
    db_sub = db.add_subparsers(dest="db_command", required=True, parser_class=_Parser)
    db_sub.add_parser("list", parents=[common], help="print records; scored when --config is given")
    db_sub.add_parser("prune", parents=[common], help="drop dominated records")
    imp = db_sub.add_parser("import", parents=[common], help="merge records from another store file")
    imp.add_argument("source", type=Path)
    return parser


def _load(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("this command needs --config", "--config")
    cfg = load_config(args.config)
    return with_overrides(cfg, seed=args.seed, workers=args.workers, warmstart_db=args.warmstart_db, out=args.out)


def cmd_simulate(args, out=None) -> int:
    out = out or sys.stdout
    if args.network is not None and not args.network.is_file():
        raise ConfigError(f"{args.network} does not exist", "--network")
    network = NetworkModel.from_file(args.network) if args.network else NetworkModel()
    cfg = SimConfig(block_height=args.blocks, block_size_bytes=args.block_size_bytes,
                    expected_mining_interval_s=args.interval_s, avg_hash_rate=args.hash_rate,
                    node_count=args.nodes, network=network, tx_size_bytes=args.tx_size_bytes,
                    seed=args.seed if args.seed is not None else 0)
    out.write(format_metrics(run_simulation(cfg).values))
    return EXIT_OK


def cmd_optimize(args, out=None) -> int:
    out = out or sys.stdout
    from .experiment import REPORT_FILE, cmd_optimize as run_optimize

    cfg = _load(args)
    outcome = run_optimize(cfg)
    print((Path(cfg.output) / REPORT_FILE).read_text(), end="", file=out)
    return EXIT_OK if outcome.report.best_result is not None else EXIT_RUNTIME


def cmd_ablate(args, out=None) -> int:
    out = out or sys.stdout
    from dataclasses import replace

    from .experiment import cmd_ablate as run_ablate, prime_store

    cfg = _load(args)
    if args.seeds is not None:
        cfg = replace(cfg, ablation=replace(cfg.ablation, seeds=args.seeds))
    if args.prime_seed is not None:
        added = prime_store(cfg, args.prime_seed)
        log.info("primed %s with %d record(s)", cfg.warmstart.db, len(added))

    def progress(row):
        log.info("group %s %s seed %d: %d iterations, ToC %.3f s", row.group, row.algorithm.value, row.seed,
                 row.iterations, row.toc_s)

    run_ablate(cfg, progress=progress)
    print((Path(cfg.output) / "ablation.txt").read_text(), end="", file=out)
    return EXIT_OK


def _db_path(args) -> Path:
    if args.warmstart_db is not None:
        return args.warmstart_db
    if args.config is not None:
        cfg = load_config(args.config)
        if cfg.warmstart.db is not None:
            return cfg.warmstart.db
    raise ConfigError("no warm-start store given (use --warmstart-db or warmstart.db)", "--warmstart-db")


def _describe(r: WarmStartRecord) -> str:
    params = ",".join(f"{k}={v:.6g}" for k, v in sorted(r.param_values.items()))
    achieved = ",".join(f"{k}={v:.6g}" for k, v in sorted(r.achieved.items()))
    return f"{'+'.join(r.objective_signature)}\t{params}\t{achieved}\t{r.run_id}"


def cmd_warmstart_db(args, out=None) -> int:
    out = out or sys.stdout
    store = WarmStartStore(_db_path(args))
    if args.db_command == "list":
        records = store.load()
        query = load_config(args.config) if args.config is not None else None
        print("index\tscore\tobjectives\tparams\tachieved\trun_id", file=out)
        for i, r in enumerate(records):
            score = "-"
            if query is not None and r.objective_signature == query.objectives.signature():
                score = f"{config_similarity(query.space, r, query.warmstart.strict_coverage):.4f}"
            print(f"{i}\t{score}\t{_describe(r)}", file=out)
        return EXIT_OK
    if args.db_command == "prune":
        records = store.load()
        kept = prune_dominated(records)
        store.rewrite(kept)
        print(f"removed {len(records) - len(kept)} dominated record(s), kept {len(kept)}", file=out)
        return EXIT_OK
    if not args.source.exists():
        raise ConfigError(f"{args.source} does not exist", "source")
    added = store.append(WarmStartStore(args.source).load())
    print(f"imported {added} record(s)", file=out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "optimize": cmd_optimize, "ablate": cmd_ablate,
            "warmstart-db": cmd_warmstart_db}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (BatchError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
