"""Command-line interface.

    trainlab run --config cfg.txt [--mode scheduled] [--seed 0] [--out DIR] [--key=value ...]
    trainlab summarize --log metrics_seed0.csv --out summary.csv

Exit codes: 0 success, 2 configuration error, 3 numeric abort in some seed.
"""

from __future__ import annotations

import argparse
import os
import re
import sys

from .config import build_run_config, config_lines, parse_config_text
from .errors import ConfigError, DegenerateDataError, FormatError, TrainlabError
from .runner import format_accuracy, read_log, run, summarize, write_log, write_summary

_OVERRIDE_RE = re.compile(r"^--([A-Za-z0-9_.]+)=(.*)$")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trainlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment")
    p_run.add_argument("--config", help="path to a key=value config file")
    p_run.add_argument("--mode", help="vanilla | reset | scheduled")
    p_run.add_argument("--seed", type=int, help="run a single seed (overrides the config list)")
    p_run.add_argument("--out", default="runs", help="output directory")

    p_sum = sub.add_parser("summarize", help="summarize a metric log")
    p_sum.add_argument("--log", required=True, help="metric log path")
    p_sum.add_argument("--out", required=True, help="summary output path")
    return parser


def _collect_overrides(extras: list[str]) -> dict[str, str]:
    values: dict[str, str] = {}
    for arg in extras:
        m = _OVERRIDE_RE.match(arg)
        if not m:
            raise ConfigError(f"unrecognized argument {arg!r} (expected --key=value)")
        values[m.group(1)] = m.group(2)
    return values


def _cmd_run(args, extras: list[str]) -> int:
    values: dict[str, str] = {}
    if args.config:
        try:
            with open(args.config, "r") as fh:
                values.update(parse_config_text(fh.read()))
        except OSError as err:
            raise ConfigError(f"cannot read config {args.config}: {err}") from None
    values.update(_collect_overrides(extras))
    if args.mode is not None:
        values["mode"] = args.mode
    if args.seed is not None:
        values["seeds"] = str(args.seed)
    cfg = build_run_config(values)

    result = run(cfg)
    os.makedirs(args.out, exist_ok=True)
    meta = config_lines(cfg) + [
        f"data.mean={result.base.mean!r}",
        f"data.std={result.base.std!r}",
        "normalization=global-scalar",
    ]
    for sr in result.seed_results:
        write_log(sr.records, sr.layer_ids, os.path.join(args.out, f"metrics_seed{sr.seed}.csv"))
        with open(os.path.join(args.out, f"accuracy_seed{sr.seed}.csv"), "w", newline="\n") as fh:
            fh.write(format_accuracy(sr))
        status = f"aborted: {sr.abort_message}" if sr.aborted else "ok"
        final = sr.per_task_accuracy[-1] if sr.per_task_accuracy else float("nan")
        print(f"seed {sr.seed}: {status}, tasks={len(sr.per_task_accuracy)}, final_accuracy={final:.4f}")
        if sr.aborted:
            meta.append(f"aborted.seed{sr.seed}={sr.abort_message}")
    with open(os.path.join(args.out, "meta.txt"), "w", newline="\n") as fh:
        fh.write("\n".join(meta) + "\n")
    return EXIT_NUMERIC if result.aborted else EXIT_OK


def _cmd_summarize(args) -> int:
    rows, layer_ids = read_log(args.log)
    summary = summarize(rows, layer_ids)
    write_summary(summary, args.out)
    print(f"wrote {args.out}: {len(summary.per_task)} tasks, rho_hat={summary.rho_hat:.6f}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    args, extras = parser.parse_known_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args, extras)
        return _cmd_summarize(args)
    except (ConfigError, FormatError, DegenerateDataError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainlabError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
