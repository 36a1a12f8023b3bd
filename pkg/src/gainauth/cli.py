"""Command line entry point.

Exit codes: 0 success, 1 invalid configuration or missing inputs,
2 data or runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .events import TraceFormatError

PLOT_HELP = """\
score writes two tab-separated files into <out>/timelines:
  <trace>.timeline.tsv  t, g_<feature>..., score, trigger, decision
  <trace>.plot.tsv      hour (local, decimal 0-24), score, bad_call (1 marks
                        a call or SMS to a number outside the contact book)
"""


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (default: built-in two-user demo)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gainauth", description="Implicit authentication experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate synthetic traces and contact books")
    sub.add_parser("fit", parents=[common], help="fit per-user models on the training split")
    sub.add_parser("wedge", parents=[common], help="generate the wedged attack suite")
    sub.add_parser("train", parents=[common], help="train combiner weights and thresholds")
    score = sub.add_parser("score", parents=[common], help="score one trace and export plot data",
                           epilog=PLOT_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    score.add_argument("--user", help="score <out>/traces/<user>.jsonl with that user's model")
    score.add_argument("--trace", help="trace file to score")
    score.add_argument("--model", help="model file (default: the trace user's model)")
    score.add_argument("--book", help="contact book (default: the trace user's book)")
    score.add_argument("--start", type=int, help="first second of the scored window (UTC epoch)")
    score.add_argument("--end", type=int, help="end of the scored window, exclusive")
    sub.add_parser("eval", parents=[common], help="compute held-out metrics")
    sub.add_parser("pipeline", parents=[common], help="run synth, fit, wedge, train and eval")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = pipeline.load_config(args.config, args.seed, args.out)
        if args.command == "synth":
            result = pipeline.cmd_synth(cfg)
        elif args.command == "fit":
            result = pipeline.cmd_fit(cfg)
        elif args.command == "wedge":
            result = pipeline.cmd_wedge(cfg)
        elif args.command == "train":
            result = pipeline.cmd_train(cfg)
        elif args.command == "score":
            result = pipeline.cmd_score(cfg, args.user, args.trace, args.model, args.book, args.start, args.end)
        elif args.command == "eval":
            result = pipeline.cmd_eval(cfg)
        else:
            result = pipeline.cmd_pipeline(cfg)
    except pipeline.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (pipeline.PipelineError, TraceFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
