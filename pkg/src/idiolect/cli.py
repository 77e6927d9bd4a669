"""Command-line entry point: seeded, config-driven experiment stages.

Exit codes: 0 success, 1 completed with recorded partial failures (attack
stage), 2 usage or configuration errors (including missing upstream stages).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiment
from .adversary import ChatError
from .corpus import CorpusError
from .experiment import ExperimentConfig, StageError

log = logging.getLogger(__name__)

_STAGE_RUNNERS = {
    "ingest": experiment.run_ingest,
    "attack": experiment.run_attacks,
    "verify": experiment.run_verify,
    "calibrate": experiment.run_calibrate,
    "evaluate": experiment.run_evaluate,
    "report": experiment.run_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idiolect",
        description="Authorship verification under LLM impersonation: "
                    "ingest, attack, verify, calibrate, evaluate, report.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*_STAGE_RUNNERS, "run"):
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "run"
                           else "run every stage in order")
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", help="override the config's output directory")
        p.add_argument("--stub", metavar="DIR",
                       help="offline mode: serve chat replies from a transcript directory")
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if args.out:
        cfg.output_dir = args.out
    if args.stub:
        cfg.endpoint = {"mode": "stub", "dir": args.stub}
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _load_config(args)
        if args.command == "run":
            results = experiment.run_all(cfg)
        else:
            results = {args.command: _STAGE_RUNNERS[args.command](cfg)}
    except (StageError, CorpusError, ChatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(results, indent=2, sort_keys=True, default=str))
    failed = sum(
        stage.get("failed", 0) for stage in results.values() if isinstance(stage, dict)
    )
    if failed:
        print(f"completed with {failed} recorded attack failures", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
