"""Command-line frontend: ``sessrank <command> [flags]``.

Exit status is 0 on success, 1 on validation or configuration errors
(including unknown commands and flags) and 2 on numeric failures.
Diagnostics go to stderr; data goes to files.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import stages
from .errors import ConfigError, NumericError, ValidationError
from .evaluation import read_ratio_report
from .runconfig import load_config

log = logging.getLogger("sessrank")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _set_pair(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def _config(args):
    return load_config(args.config, dict(args.set or []))


def _add_config(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", type=_set_pair, metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def cmd_gen(args):
    stages.run_gen(_config(args), args.out)


def cmd_aggregate(args):
    stages.run_aggregate(args.sessions, args.shards, args.out)


def cmd_featurize(args):
    stages.run_featurize(args.sessions, args.stats, args.catalog, args.users, args.out)


def cmd_train(args):
    cfg = _config(args)
    stages.run_train(args.data, cfg, args.out, args.cv_report)


def cmd_predict(args):
    stages.run_predict(args.model, args.data, args.out)


def cmd_rerank(args):
    stages.run_rerank(args.model, args.candidates, args.out)


def cmd_evaluate(args):
    stats = args.stats
    if stats is None:
        stats = Path(args.out) / "stats"
        stages.aggregate_excluding(Path(args.corpus), args.sessions, stats)
    stages.run_evaluate(args.model, args.sessions, args.corpus, stats, args.out,
                        args.per_engine_total, args.seed)


def cmd_report(args):
    before = read_ratio_report(args.before)
    after = read_ratio_report(args.after)
    stages.write_report(before, after, args.out)


def cmd_pipeline(args):
    stages.run_pipeline(_config(args), args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sessrank", description="Session-outcome ranking batch tool.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", help="generate a synthetic session corpus")
    _add_config(p)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("aggregate", help="map/reduce link and user statistics")
    p.add_argument("--sessions", required=True)
    p.add_argument("--shards", type=int, default=4)
    p.add_argument("--out", required=True, help="output stats directory")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("featurize", help="build the labeled feature dataset")
    p.add_argument("--sessions", required=True)
    p.add_argument("--stats", required=True, help="stats directory from aggregate")
    p.add_argument("--catalog", required=True)
    p.add_argument("--users", required=True)
    p.add_argument("--out", required=True, help="output dataset CSV")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="fit preprocessing and the four-model ensemble")
    _add_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--cv-report", help="also run repeated k-fold CV and write its report here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict session labels for a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output predictions CSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("rerank", help="order candidate links by predicted P(OnceSearch)")
    p.add_argument("--model", required=True)
    p.add_argument("--candidates", required=True, help="CSV: group,link_id,<model input features>")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("evaluate", help="replay sessions over re-ranked lists and report ratios")
    p.add_argument("--model", required=True)
    p.add_argument("--sessions", required=True, help="held-out sessions to replay")
    p.add_argument("--corpus", required=True, help="corpus directory (catalog, users)")
    p.add_argument("--stats", help="stats directory; default aggregates the corpus minus --sessions")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--per-engine-total", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="combine Before and After ratio files into a report")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="run every stage end to end on one config")
    _add_config(p)
    p.add_argument("--out", required=True, help="output root directory")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except (ValidationError, ConfigError) as exc:
        print(f"sessrank: error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"sessrank: numeric error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"sessrank: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
