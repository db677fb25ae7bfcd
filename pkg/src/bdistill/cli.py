"""Command-line entry point: bdistill <command> --config job.json --output-dir out/"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

log = logging.getLogger("bdistill")


def _threads_limit():
    raw = os.environ.get("BD_THREADS")
    if raw is None or raw == "":
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"BD_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"BD_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def cmd_gen_synthetic(cfg, out: Path, args) -> None:
    from .experiment import generate_synthetic
    written = generate_synthetic(cfg, out)
    for lang, paths in written.items():
        print(f"{lang}: " + " ".join(str(p) for p in paths))


def cmd_train_tokenizer(cfg, out: Path, args) -> None:
    from .experiment import Layout, train_tokenizer
    vocab = train_tokenizer(cfg, out)
    print(f"wrote {Layout(out).vocab} ({len(vocab)} tokens)")


def cmd_run_experiment(cfg, out: Path, args) -> None:
    from .experiment import run_experiment
    manifest = run_experiment(cfg, out, args.only)
    for name, entry in sorted(manifest["stages"].items()):
        print(f"{name}: {entry['checkpoint']} epochs={entry['epochs_run']} best={entry['best_epoch']}")


def cmd_evaluate(cfg, out: Path, args) -> None:
    from .report import balanced_table, evaluate, probe_table, write_report
    report = evaluate(cfg, out)
    paths = write_report(report, out)
    sys.stdout.write(balanced_table(report) + "\n" + probe_table(report))
    print("wrote " + ", ".join(str(p) for p in paths.values()))


COMMANDS = {
    "gen-synthetic": (cmd_gen_synthetic, "write synthetic sentence and CoNLL files per language"),
    "train-tokenizer": (cmd_train_tokenizer, "learn the shared WordPiece vocabulary"),
    "run-experiment": (cmd_run_experiment, "train teachers, HL, HL-balanced and the distilled student"),
    "evaluate": (cmd_evaluate, "score checkpoints and write the metrics report, tables and figures"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdistill", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="job config JSON")
        p.add_argument("--output-dir", required=True, type=Path, help="directory for all outputs")
        if name == "run-experiment":
            p.add_argument("--only", default=None,
                           help="comma-separated subset of stages: teachers,hl,hl_balanced,student")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .config import load_config
    try:
        cfg = load_config(args.config)
        args.output_dir.mkdir(parents=True, exist_ok=True)
        with _threads_limit():
            COMMANDS[args.command][0](cfg, args.output_dir, args)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"bdistill {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
