"""Command-line front end.

    decaylab modulus check   --config cfg.yaml --out runs/x
    decaylab coeff gen       --config cfg.yaml --out runs/x
    decaylab weights build   --config cfg.yaml --out runs/x
    decaylab carleman verify --config cfg.yaml --out runs/x
    decaylab evolve run      --config cfg.yaml --out runs/x
    decaylab pipeline run    --config cfg.yaml --out runs/x

Without --config the built-in divergent-modulus demo runs. Exit codes:
0 success (or expected breakdown), 1 failed assertions, 2 bad config.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import (ConfigError, default_experiment, load_config, save_config)
from .pipeline import run_pipeline

_STAGE_OF_COMMAND = {
    ("modulus", "check"): ("modulus",),
    ("coeff", "gen"): ("modulus", "coefficient"),
    ("weights", "build"): ("modulus", "coefficient", "weights"),
    ("carleman", "verify"): ("modulus", "coefficient", "weights", "carleman"),
    ("evolve", "run"): ("modulus", "coefficient", "weights", "evolution"),
    ("pipeline", "run"): ("modulus", "coefficient", "weights", "carleman",
                          "evolution"),
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="YAML experiment config (default: built-in demo)")
    p.add_argument("--out", type=Path, default=Path("runs/latest"),
                   help="output directory for artifacts")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for the field suites")
    p.add_argument("--strict", action="store_true",
                   help="treat inconclusive classifications as failures")
    p.add_argument("--dump-config", action="store_true",
                   help="write the resolved config next to the artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decaylab",
        description="Desk-scale checks of weighted parabolic lower bounds")
    sub = parser.add_subparsers(dest="group", required=True)
    groups: dict[str, argparse._SubParsersAction] = {}
    for (group, verb) in _STAGE_OF_COMMAND:
        if group not in groups:
            gp = sub.add_parser(group)
            groups[group] = gp.add_subparsers(dest="verb", required=True)
        _add_common(groups[group].add_parser(verb))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_experiment()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        if args.strict:
            cfg.strict = True
        wanted = _STAGE_OF_COMMAND[(args.group, args.verb)]
        cfg.stages = {name: (name in wanted and cfg.stages.get(name, True))
                      for name in ("modulus", "coefficient", "weights",
                                   "carleman", "evolution")}
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    args.out.mkdir(parents=True, exist_ok=True)
    if args.dump_config:
        save_config(cfg, args.out / "resolved_config.yaml")
    code = run_pipeline(cfg, args.out)
    status = "ok" if code == 0 else "FAILED"
    print(f"decaylab {args.group} {args.verb}: {status} "
          f"(artifacts in {args.out})")
    return code


if __name__ == "__main__":
    sys.exit(main())
