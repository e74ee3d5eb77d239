"""Command line: ``eaprune {search,flops,ablate,export,report}``.

Exit codes: 0 success, 2 configuration error, 3 data/format error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import (
    BoundsError, ConfigError, DimensionError, EmptySpaceError, FormatError, NumericError,
)
from .harness import experiments
from .harness.config import RunConfig, config_fields, load_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _json(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from exc


def _arg_type(f):
    hint = str(f.type)
    if "dict" in hint:
        return _json
    if "bool" in hint:
        return _bool
    if "int" in hint:
        return int
    if "float" in hint:
        return float
    return str


def _add_run_options(p, skip=()):
    p.add_argument("--config", help="JSON file with RunConfig fields")
    for name, f in config_fields().items():
        if name in skip:
            continue
        flag = "--" + name.replace("_", "-")
        kw = {"dest": name, "type": _arg_type(f), "default": None}
        if name == "threads":
            kw["help"] = "evaluator threads (default: machine parallelism)"
        p.add_argument(flag, **kw)


def _overrides(args):
    return {name: getattr(args, name, None) for name in config_fields()}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eaprune", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="evolutionary pruning search")
    _add_run_options(p)

    p = sub.add_parser("flops", help="MAC count of a model, optionally pruned by a genome")
    p.add_argument("model", help="built-in name (resnet50, mobilenet_v1, deit_base, toy_cnn, "
                                 "toy_transformer) or model spec JSON")
    p.add_argument("--genome", help="kept widths, comma or semicolon separated")
    p.add_argument("--space-mode", default="cnn-channels")
    p.add_argument("--model-args", type=_json, default=None)

    p = sub.add_parser("ablate", help="paired comparison runs")
    p.add_argument("mode", choices=experiments.ABLATIONS)
    _add_run_options(p)

    p = sub.add_parser("export", help="write one Pareto member as model spec + EAPW weights")
    p.add_argument("run_dir")
    p.add_argument("index", type=int, help="row of pareto.csv (0 = fewest FLOPs)")
    p.add_argument("--output")

    p = sub.add_parser("report", help="per-block retention table of a transformer run")
    p.add_argument("run_dir")
    return parser


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config, _overrides(args))
    return cfg.check(need_seed=True)


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "search":
        print(json.dumps(experiments.cmd_search(_run_config(args)), indent=2))
    elif args.command == "flops":
        n = experiments.cmd_flops(args.model, args.genome, args.space_mode, args.model_args)
        print(f"{n} MACs ({n / 1e6:.2f}M)")
    elif args.command == "ablate":
        print(json.dumps(experiments.cmd_ablate(_run_config(args), args.mode), indent=2))
    elif args.command == "export":
        print(json.dumps(experiments.cmd_export(args.run_dir, args.index, args.output), indent=2))
    elif args.command == "report":
        print(experiments.cmd_report(args.run_dir), end="")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except (ConfigError, BoundsError, EmptySpaceError) as exc:
        print(f"eaprune: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DimensionError, FileNotFoundError) as exc:
        print(f"eaprune: data/format error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"eaprune: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
