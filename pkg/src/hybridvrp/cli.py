"""Command-line entry point: ``hybridvrp <subcommand> ...``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import yaml

from .core import VRPError

log = logging.getLogger("hybridvrp")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SEARCH_COMMANDS = ("solve", "benchmark", "trace")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# Argument groups


def _add_seed(p):
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")


def _add_solve_args(p):
    p.add_argument("--mode", default="greedy+ls", choices=["neural", "neural+ls", "greedy+ls", "random+ls"])
    p.add_argument("--checkpoint", help="policy checkpoint for the neural modes")
    p.add_argument("--no-augment", dest="augment", action="store_false", help="decode the original image only")
    p.add_argument("--max-starts", type=int, default=200, help="cap on multi-start trajectories")
    p.add_argument("--iters", type=int, default=50, help="local search iterations")
    p.add_argument("--x-max", type=int, default=3, help="largest segment length in exchange moves")
    p.add_argument("--gamma", type=int, default=20, help="granular neighbourhood size")
    p.add_argument("--time-budget", type=float, help="search wall-clock budget in seconds")
    _add_seed(p)


def _add_train_args(p, variant_default="mdvrp"):
    p.add_argument("--variant", default=variant_default)
    p.add_argument("--n", type=int, default=20, help="customers per training instance")
    p.add_argument("--m", type=int, help="depots (multi-depot variants)")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--steps", type=int, default=100, help="steps per epoch")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--starts", type=int, help="trajectories per instance (default g - 1)")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--optimizer", default="adam", choices=["adam", "ascent"])
    p.add_argument("--eval-size", type=int, default=512, help="held-out instances per evaluation")
    p.add_argument("--full", dest="desk", action="store_false", help="use full-size network dimensions")
    p.add_argument("--curve", help="CSV path for the per-epoch curve")
    p.add_argument("--out", required=True, help="output checkpoint path")
    _add_seed(p)


def build_parser() -> Parser:
    parser = Parser(prog="hybridvrp", description="Neural construction plus local search for vehicle routing.")
    parser.add_argument("--config", help="YAML or JSON document whose keys set flag defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write random instances")
    p.add_argument("--variant", default="cvrp")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--m", type=int)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", help="file (count 1) or directory; stdout when omitted")
    _add_seed(p)

    _add_train_args(sub.add_parser("train", help="train a policy from scratch"))

    p = sub.add_parser("finetune", help="continue training a checkpoint on another variant")
    p.add_argument("--checkpoint", required=True)
    _add_train_args(p, variant_default="cvrp")

    p = sub.add_parser("adapt-tsp", help="convert a routing checkpoint to the TSP architecture")
    p.add_argument("--checkpoint", required=True)
    _add_train_args(p, variant_default="tsp")
    p.set_defaults(epochs=0)

    p = sub.add_parser("solve", help="solve one instance file")
    p.add_argument("instance")
    _add_solve_args(p)
    p.add_argument("--out", help="write the solution file here")
    p.add_argument("--trace", help="write the convergence CSV here")

    p = sub.add_parser("benchmark", help="solve a directory of instances and report RPD")
    p.add_argument("directory")
    p.add_argument("--references", required=True, help="JSON or 'name value' file of best-known objectives")
    p.add_argument("--out", default="benchmark-out", help="report and solution directory")
    p.add_argument("--workers", type=int, help="parallel worker processes (default from HYBRIDVRP_THREADS)")
    _add_solve_args(p)

    p = sub.add_parser("trace", help="write the local-search convergence CSV for one instance")
    p.add_argument("instance")
    _add_solve_args(p)
    p.add_argument("--out", required=True, help="CSV path")
    return parser


# ---------------------------------------------------------------------------
# Config documents


def load_config_document(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML/JSON: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must be a mapping")
    return doc


def config_defaults(doc: dict, command: str) -> dict:
    """Flatten a config document into argparse defaults for ``command``.

    Top-level scalars apply to every subcommand, a section named after the
    subcommand applies to it alone and the ``ls`` section holds search settings
    for the commands that run the search.
    """
    out = {}
    for key, value in doc.items():
        if not isinstance(value, dict):
            out[key] = value
    sections = ("ls", command) if command in SEARCH_COMMANDS else (command,)
    for section in sections:
        block = doc.get(section) or {}
        if not isinstance(block, dict):
            raise UsageError(f"config section {section!r} must be a mapping")
        out.update(block)
    return {k.replace("-", "_"): v for k, v in out.items()}


def _config_path(argv) -> str | None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    return known.config


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    path = _config_path(argv)
    if path:
        doc = load_config_document(path)
        subparsers = parser._subparsers._group_actions[0].choices
        for name, sub in subparsers.items():
            defaults = config_defaults(doc, name)
            actions = {a.dest: a for a in sub._actions}
            for key, value in defaults.items():
                if key in actions:
                    actions[key].required = False
                    sub.set_defaults(**{key: value})
        args = parser.parse_args(argv)
        sub = subparsers[args.command]
        unknown = sorted(set(config_defaults(doc, args.command)) - {a.dest for a in sub._actions})
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        return args
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# Commands


def _solve_config(args):
    from .search.engine import LSConfig
    from .solver import SolveConfig

    if args.mode.startswith("neural") and not args.checkpoint:
        raise UsageError(f"--mode {args.mode} needs --checkpoint")
    if args.iters < 0:
        raise UsageError("--iters must be non-negative")
    ls = LSConfig(iterations=args.iters, x_max=args.x_max, gamma=args.gamma, seed=args.seed)
    return SolveConfig(args.mode, args.checkpoint, args.augment, args.max_starts, ls, args.time_budget, args.seed)


def cmd_generate(args) -> int:
    from .instances import GenConfig, generate_instance, instance_to_json

    if args.count < 1:
        raise UsageError("--count must be positive")
    texts = [
        instance_to_json(generate_instance(GenConfig(args.variant, args.n, args.m, seed=args.seed + k))) + "\n"
        for k in range(args.count)
    ]
    if args.out is None:
        sys.stdout.write("".join(texts))
    elif args.count == 1 and not Path(args.out).is_dir():
        Path(args.out).write_text(texts[0])
    else:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for k, text in enumerate(texts):
            (out / f"{args.variant}{args.n}-s{args.seed + k}.json").write_text(text)
    return EXIT_OK


def _train_config(args):
    from .trainer import TrainConfig

    try:
        return TrainConfig(
            epochs=args.epochs, steps=args.steps, batch_size=args.batch_size, starts=args.starts, lr=args.lr,
            variant=args.variant, n=args.n, m=args.m, seed=args.seed, desk=args.desk, optimizer=args.optimizer,
            eval_size=args.eval_size,
        )
    except (ValueError, VRPError) as exc:
        raise UsageError(str(exc)) from exc


def _report_training(result) -> None:
    print(f"initial objective {result.initial_objective:.6f}")
    for epoch, obj, secs in result.curve:
        print(f"epoch {epoch} objective {obj:.6f} ({secs:.1f}s)")


def cmd_train(args) -> int:
    from .policy import save_checkpoint
    from .trainer import train

    config = _train_config(args)
    result = train(config, curve_path=args.curve)
    save_checkpoint(result.model, args.out, [config.variant], {"seed": config.seed, "epochs": config.epochs})
    _report_training(result)
    return EXIT_OK


def cmd_finetune(args) -> int:
    from .policy import load_checkpoint, save_checkpoint
    from .trainer import finetune

    base = load_checkpoint(args.checkpoint)
    # The checkpoint defines the architecture.
    config = dataclasses.replace(_train_config(args), policy=base.config)
    result = finetune(base, config, curve_path=args.curve)
    save_checkpoint(result.model, args.out, list(getattr(base, "trained_on", [])) + [config.variant],
                    {"seed": config.seed, "epochs": config.epochs})
    _report_training(result)
    return EXIT_OK


def cmd_adapt_tsp(args) -> int:
    from .policy import load_checkpoint, save_checkpoint
    from .trainer import adapt_for_tsp, finetune

    config = _train_config(replace_ns(args, variant="tsp"))
    base = load_checkpoint(args.checkpoint)
    model = adapt_for_tsp(base)
    if config.epochs > 0:
        result = finetune(model, dataclasses.replace(config, policy=model.config), curve_path=args.curve)
        model = result.model
        _report_training(result)
    save_checkpoint(model, args.out, list(getattr(base, "trained_on", [])) + ["tsp"], {"seed": config.seed})
    return EXIT_OK


def replace_ns(ns: argparse.Namespace, **changes) -> argparse.Namespace:
    out = argparse.Namespace(**vars(ns))
    for k, v in changes.items():
        setattr(out, k, v)
    return out


def _load(path):
    from .instances import load_instance

    if not Path(path).is_file():
        raise UsageError(f"instance file {path} not found")
    return load_instance(path)


def cmd_solve(args) -> int:
    from .instances import write_solution
    from .search.engine import write_trace
    from .solver import solve

    config = _solve_config(args)
    instance = _load(args.instance)
    result = solve(instance, config)
    if args.out:
        write_solution(result.solution, result.cost, args.out)
    if args.trace:
        write_trace(result.trace, args.trace)
    for k, route in enumerate(r for r in result.solution.routes if r.customers):
        print(f"Route #{k + 1} (depot {route.depot}): {' '.join(map(str, route.customers))}")
    print(f"construction cost {result.construction_cost:.6f}")
    print(f"cost {result.cost:.6f}")
    if not result.feasible:
        print("warning: the returned solution violates constraints", file=sys.stderr)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .solver import benchmark

    if not Path(args.references).is_file():
        raise UsageError(f"references file {args.references} not found")
    if not Path(args.directory).is_dir():
        raise UsageError(f"{args.directory} is not a directory")
    config = _solve_config(args)
    report = benchmark(args.directory, args.references, config, args.out, args.workers)
    for row in report.rows:
        rpd = "n/a" if row.rpd is None else f"{row.rpd:.3f}%"
        print(f"{row.name}: {row.objective:.3f} (rpd {rpd}, {row.wall_clock_s:.1f}s)")
    for name, reason in report.skipped:
        print(f"{name}: skipped ({reason})")
    mean = report.mean_rpd
    print("mean rpd undefined" if mean is None else f"mean rpd {mean:.3f}%")
    return EXIT_OK


def cmd_trace(args) -> int:
    from .search.engine import write_trace
    from .solver import solve

    config = _solve_config(args)
    if not config.with_search:
        raise UsageError("trace needs a mode with local search")
    result = solve(_load(args.instance), config)
    write_trace(result.trace, args.out)
    print(f"cost {result.cost:.6f} after {result.iterations} iterations")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "adapt-tsp": cmd_adapt_tsp,
    "solve": cmd_solve,
    "benchmark": cmd_benchmark,
    "trace": cmd_trace,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (VRPError, OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"hybridvrp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
