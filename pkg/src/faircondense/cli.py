"""Command-line entry point: ``faircondense <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import metrics, pipeline
from .config import PipelineConfig
from .errors import FairCondenseError
from .store import dumps


def _config(args) -> PipelineConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "nodes", None):
        overrides.append(f"data.nodes={args.nodes}")
    if getattr(args, "edges", None):
        overrides.append(f"data.edges={args.edges}")
    if getattr(args, "disable_fairness", False):
        overrides.append("train.disable_fairness=true")
    if getattr(args, "random_coreset", False):
        overrides.append("condense.random_coreset=true")
    return PipelineConfig.load(args.config, overrides).validate()


def _common(p):
    p.add_argument("--config", help="INI-style configuration file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    p.add_argument("--seed", type=int)
    p.add_argument("--nodes", help="node table CSV (overrides data.nodes)")
    p.add_argument("--edges", help="edge list (overrides data.edges)")
    p.add_argument("--disable-fairness", action="store_true", help="plain MLP, no spectral term, no curriculum")
    p.add_argument("--random-coreset", action="store_true", help="uniform node sampling instead of condensation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faircondense", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("condense", help="distil the dataset into a condensed graph")
    _common(p)
    p.add_argument("--out", required=True, help="output directory for the condensed graph")

    p = sub.add_parser("train", help="train the classifier on a condensed graph")
    _common(p)
    p.add_argument("--condensed", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--cache-dir", help="spectral basis cache (default $FAIRCONDENSE_CACHE_DIR)")

    p = sub.add_parser("evaluate", help="report accuracy and fairness gaps on the test split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--condensed", help="condensed graph to check the checkpoint against")
    p.add_argument("--json", dest="json_out", help="write the report JSON here")

    p = sub.add_parser("audit", help="compare condensed and source label/group distributions")
    _common(p)
    p.add_argument("--condensed", required=True)

    p = sub.add_parser("make-synthetic", help="generate an SBM benchmark dataset")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--gamma", type=float, default=0.6, help="label/sensitive correlation strength")
    p.add_argument("--homophily", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "make-synthetic":
            paths = pipeline.cmd_make_synthetic(args.n, args.gamma, args.homophily, args.seed, args.out)
            print(json.dumps(paths, indent=2))
        elif args.command == "condense":
            out = pipeline.cmd_condense(_config(args), args.out)
            print(f"condensed graph: {out['manifest']['num_syn']} nodes -> {args.out}")
            print(metrics.render_audit(out["audit"]))
        elif args.command == "train":
            out = pipeline.cmd_train(_config(args), args.condensed, args.out, args.cache_dir)
            print(f"trained {len(out['log'].records)} epochs, selected epoch {out['log'].selected_epoch} "
                  f"({out['log'].selection_rule}) -> {args.out}")
        elif args.command == "evaluate":
            report = pipeline.cmd_evaluate(_config(args), args.checkpoint, args.condensed)
            if args.json_out:
                Path(args.json_out).write_text(report.to_json() + "\n", encoding="utf-8")
            print(metrics.render_table(report))
        elif args.command == "audit":
            audit = pipeline.cmd_audit(_config(args), args.condensed)
            print(metrics.render_audit(audit))
            print(dumps(audit), end="")
            return 0 if not audit["violations"] else 1
    except FairCondenseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
