"""Command-line surface for the reproduction pipeline.

Exit codes: 0 success, 1 stage failure, 2 usage error (argparse default).
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import PipelineError, ResumePrereqMissing
from .pipeline import PipelineConfig, run_pipeline
from .workspace import STAGES, init_workspace

STAGE_COMMANDS = STAGES  # each stage is also a subcommand


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivrepro",
        description="Reproduce instrumental-variable analyses from "
                    "replication packages and rate their diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--workspace", required=True,
                       help="workspace directory (one per study)")
        p.add_argument("--study-id", default=None,
                       help="study identifier (default: workspace dir name)")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--iters", type=int, default=1000,
                       help="bootstrap iterations")
        p.add_argument("--max-obs", type=int, default=100000,
                       help="row cap for resampling diagnostics")
        p.add_argument("--timeout", type=float, default=600,
                       help="hard timeout (seconds) for external scripts")
        p.add_argument("--cluster-limit", type=int, default=2000,
                       help="max clusters for the cluster jackknife")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel workers for bootstrap replicates")
        p.add_argument("--paper-text", default=None,
                       help="path to the extracted paper text")
        p.add_argument("--package-dir", default=None,
                       help="manually supplied replication package directory")
        p.add_argument("--direct", action="store_true",
                       help="skip external interpreters; estimate from "
                            "tabular data directly")

    for name in STAGE_COMMANDS + ("all",):
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "all"
                           else "run the full pipeline")
        add_common(p)

    p = sub.add_parser("resume", help="resume from a stage, reusing earlier artifacts")
    p.add_argument("--stage", required=True, choices=STAGES)
    add_common(p)
    return parser


def config_from_args(args) -> PipelineConfig:
    interpreter_paths = {}
    if os.environ.get("STATA_BIN"):
        interpreter_paths["stata_batch"] = os.environ["STATA_BIN"]
    if os.environ.get("RSCRIPT_BIN"):
        interpreter_paths["r_script"] = os.environ["RSCRIPT_BIN"]
    return PipelineConfig(
        seed=args.seed, iters=args.iters, max_obs=args.max_obs,
        timeout=args.timeout, cluster_limit=args.cluster_limit,
        workers=args.workers, direct=args.direct,
        paper_text=args.paper_text, package_dir=args.package_dir,
        interpreter_paths=interpreter_paths)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    root = Path(args.workspace)
    study_id = args.study_id or root.name or "study"
    try:
        ws = init_workspace(study_id, root)
        config = config_from_args(args)
        if args.command == "all":
            records = run_pipeline(ws, config)
        elif args.command == "resume":
            records = run_pipeline(ws, config, from_stage=args.stage)
        else:
            records = run_pipeline(ws, config, from_stage=args.command,
                                   to_stage=args.command)
    except (ResumePrereqMissing, PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    failed = [r for r in records if r.status == "failed"]
    for rec in records:
        line = f"[{rec.status:>7}] {rec.stage}"
        if rec.error:
            line += f"  ({rec.error})"
        print(line)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
