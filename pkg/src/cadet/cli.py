"""Command line over the harness: train, eval, gradcheck, dump-attn, ablate.

Every run that produces artifacts echoes its fully-resolved
configuration to ``effective.cfg`` in the output directory, so a run
can always be reproduced from what it left behind. Checkpoint-driven
subcommands (eval, dump-attn) rebuild their configuration from the
checkpoint header first, then apply any --override pairs on top.

Exit codes: 0 success, 1 bad arguments / bad config / failed check,
2 numerical abort (training loss left the finite range). Set
CADET_LOG=info for progress lines on standard error (debug for more).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import config as run_config
from .ablation import VARIANTS, ablation_suite
from .checks import run_suite
from .config import ConfigError
from .model import ActionDetector
from .pgm import dump_attention
from .serial import FormatError, load_checkpoint, read_dataset
from .synthetic import make_dataset
from .training import NumericalAbort, evaluate_model, train

__all__ = ["run", "main"]

_LOG_ENV = "CADET_LOG"


class UsageError(Exception):
    """Raised instead of argparse's sys.exit so run() can return 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _logger() -> logging.Logger:
    log = logging.getLogger("cadet.cli")
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(handler)
        log.propagate = False
    level = os.environ.get(_LOG_ENV, "warning").upper()
    log.setLevel(getattr(logging, level, logging.WARNING))
    return log


def _add_run_flags(p, config_required: bool = False):
    p.add_argument("--config", required=config_required, metavar="PATH",
                   help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None,
                   help="override model.seed")
    p.add_argument("--out", default=None, metavar="DIR",
                   help="output directory (default runs/<subcommand>)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for data generation (default 1)")
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE", help="config override, repeatable")


def _add_checkpoint_flags(p):
    p.add_argument("--checkpoint", required=True, metavar="PATH",
                   help="checkpoint written by train")
    p.add_argument("--data", default=None, metavar="PATH",
                   help="dataset file to read instead of generating clips")
    p.add_argument("--seed", type=int, default=None,
                   help="seed for generated clips (default: the stored "
                        "model seed's validation stream)")
    p.add_argument("--out", default=None, metavar="DIR")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cadet",
                     description="video action detector harness")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train", help="train a detector and write artifacts")
    _add_run_flags(p, config_required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint, print EvalReport JSON")
    _add_checkpoint_flags(p)
    p.add_argument("--clips", type=int, default=16,
                   help="clips to generate when --data is not given")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("gradcheck", help="run the gradient battery")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("dump-attn",
                       help="export per-class attention maps as PGM files")
    _add_checkpoint_flags(p)
    p.add_argument("--clip", type=int, default=0,
                   help="clip index to render")
    p.set_defaults(fn=_cmd_dump_attn)

    p = sub.add_parser("ablate", help="train flag-flipped variants and report")
    _add_run_flags(p, config_required=True)
    p.add_argument("--variants", default=None, metavar="NAMES",
                   help=f"comma list from: {', '.join(VARIANTS)}")
    p.set_defaults(fn=_cmd_ablate)
    return parser


def _out_dir(args) -> str:
    out = args.out or os.path.join("runs", args.subcommand)
    os.makedirs(out, exist_ok=True)
    return out


def _echo_config(run, out: str):
    with open(os.path.join(out, "effective.cfg"), "w") as fh:
        fh.write(run_config.effective_text(run))


def _restore(args):
    """Model + run config from a checkpoint, overrides applied on top."""
    arrays, step, stored = load_checkpoint(args.checkpoint)
    pairs = tuple(f"{key}={value}" for key, value in sorted(stored.items()))
    run = run_config.load_run_config(None, pairs + tuple(args.override),
                                     seed=args.seed, threads=args.threads)
    model = ActionDetector(run.model)
    model.load_parameters(arrays)
    return model, run, step


def _clips_for(args, run, n_clips: int):
    """Clips from --data, or generated from the validation stream."""
    if args.data is not None:
        return read_dataset(args.data)
    if args.seed is not None:
        seed = args.seed
    else:
        seed = int(np.random.SeedSequence(run.model.seed).generate_state(2)[1])
    return make_dataset(run.task, n_clips, seed=seed,
                        threads=run.train.threads)


def _cmd_train(args, log) -> int:
    run = run_config.load_run_config(args.config, args.override,
                                     seed=args.seed, threads=args.threads)
    out = _out_dir(args)
    _echo_config(run, out)
    result = train(run.model, run.task, run.train, out,
                   flat_config=run_config.flat_dict(run), log=log.info)
    print(json.dumps({
        "checkpoint": result.checkpoint_path,
        "metrics": result.metrics_path,
        "steps": result.steps_run,
        "final_loss": result.final_loss,
        "fmap": result.report.fmap,
    }, sort_keys=True))
    return 0


def _cmd_eval(args, log) -> int:
    model, run, step = _restore(args)
    clips = _clips_for(args, run, args.clips)
    log.info(f"evaluating checkpoint (step {step}) on {len(clips)} clips")
    report = evaluate_model(model, clips, run.model.n_classes,
                            run.model.label_mode,
                            iou_thresh=run.train.iou_thresh)
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(payload)
    if args.out is not None:
        out = _out_dir(args)
        _echo_config(run, out)
        with open(os.path.join(out, "eval.json"), "w") as fh:
            fh.write(payload + "\n")
    return 0


def _cmd_gradcheck(args, log) -> int:
    result = run_suite(args.seed)
    for line in result.lines():
        print(line)
    return 0 if result.passed else 1


def _cmd_dump_attn(args, log) -> int:
    model, run, _ = _restore(args)
    clips = _clips_for(args, run, args.clip + 1)
    if not 0 <= args.clip < len(clips):
        raise ValueError(
            f"clip index {args.clip} out of range for {len(clips)} clips")
    out = _out_dir(args)
    _echo_config(run, out)
    output = model(clips[args.clip].frames)
    written = dump_attention(out, output.class_attention.data, output.grid)
    print(json.dumps({"out": out, "files": len(written)}, sort_keys=True))
    return 0


def _cmd_ablate(args, log) -> int:
    run = run_config.load_run_config(args.config, args.override,
                                     seed=args.seed, threads=args.threads)
    out = _out_dir(args)
    _echo_config(run, out)
    names = None
    if args.variants is not None:
        names = [name.strip() for name in args.variants.split(",") if name.strip()]
    report = ablation_suite(run.model, run.task, run.train, out,
                            variants=names, log=log.info)
    print(json.dumps({
        "report": report.path,
        "fmap": {name: row["fmap"]
                 for name, row in report.summary["variants"].items()},
        "actor_confusion": {name: row["actor_confusion"]
                            for name, row in report.summary["variants"].items()},
        "deltas_vs_full": report.summary["deltas_vs_full"],
    }, sort_keys=True))
    return 0


def run(argv=None) -> int:
    log = _logger()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.fn(args, log)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
