"""Command-line entry point: ``bailfair <stage> --config cfg.yaml``."""

from __future__ import annotations

import argparse
import logging
import sys

from .pipeline import STAGES, ConfigError, Pipeline, PipelineConfig, PipelineError, emit_report

SUBCOMMANDS = (*STAGES, "run-all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bailfair",
        description="Train an LDA-feature bail classifier and audit it with counterfactual name swaps.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "run-all" else "run every stage")
        p.add_argument("--config", required=True, help="pipeline YAML config")
        p.add_argument("--seed", type=int, default=None, help="override the config's global seed")
        p.add_argument("--out", default=None, help="output directory (default: paths.output_dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads; never changes outputs")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error [config]: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = PipelineConfig.from_file(args.config, seed=args.seed, out=args.out)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return 2
    pipe = Pipeline(cfg, threads=args.threads)
    try:
        if args.command == "run-all":
            out = pipe.run_all()
            print(f"report bundle written to {out}")
        else:
            pipe.run_stage(args.command)
            if args.command == "audit":
                print(f"report bundle written to {emit_report(cfg)}")
    except PipelineError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
