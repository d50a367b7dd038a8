"""Command line entry point: ``crossattn <command> --config run.cfg [overrides]``.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..label_graph import MalformedAnnotations
from .config import ConfigError, load_config
from .synthetic import SpecError
from . import workflow

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; route it to our validation code instead
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


COMMANDS = {
    "gen-synth": "generate the planted synthetic dataset",
    "build-graph": "count label co-occurrence and write the conditional graph",
    "train-embeddings": "fit label embeddings to the symmetrized graph",
    "train": "train backbone and attention head",
    "eval": "score a checkpoint on the test split",
    "export-attention": "write attention heatmaps and localization statistics",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crossattn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="config or manifest file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help=f"output directory (overrides paths.{workflow.OUTPUT_KEY[name]})")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key; repeatable")
        if name == "train":
            p.add_argument("--resume", help="continue from this checkpoint file")
    return parser


def _resolve_config(args):
    cfg = load_config(args.config)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    if args.out is not None:
        cfg.set(f"paths.{workflow.OUTPUT_KEY[args.command]}", args.out)
    cfg.validate()
    return cfg


def run(args) -> str:
    cfg = _resolve_config(args)
    cmd = args.command
    if cmd == "gen-synth":
        return f"dataset written to {workflow.gen_synth(cfg)}"
    if cmd == "build-graph":
        return f"label graph written to {workflow.build_label_graph(cfg)}"
    if cmd == "train-embeddings":
        return f"embeddings written to {workflow.train_embeddings(cfg)}"
    if cmd == "train":
        return f"checkpoint written to {workflow.train_classifier(cfg, args.resume)}"
    if cmd == "eval":
        report = workflow.evaluate(cfg)
        return " ".join(f"{k}={v:.4f}" for k, v in report.items() if k != "examples")
    return f"attention maps written to {workflow.export_attention(cfg)}"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        print(run(args))
    except (ConfigError, SpecError, MalformedAnnotations) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        sys.stderr.write(f"failed: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
