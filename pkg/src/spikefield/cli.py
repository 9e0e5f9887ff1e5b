"""Command-line entry point: ``spikefield <command> --config spec.json``."""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from .experiments import (
    EXPERIMENTS,
    ConfigError,
    NumericalFailure,
    parse_spec,
    apply_overrides,
    render,
    render_json,
    resolve_threads,
    run_experiment,
    schema_json,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikefield", description=__doc__)
    p.add_argument("command", nargs="?", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON spec, or a previous CSV output whose header echoes one")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--threads", type=int, help="worker processes (fallback: SPIKEFIELD_THREADS)")
    p.add_argument("--print-schema", action="store_true", help="print the JSON schema and exit")
    return p


def _summary_path(out: str) -> str:
    stem = out[:-4] if out.endswith(".csv") else out
    return stem + ".summary.json"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.print_schema:
        print(schema_json())
        return EXIT_OK
    if args.command is None or args.config is None:
        print("spikefield: a command and --config are required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"spikefield: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        spec = apply_overrides(parse_spec(text), args.seed, args.replicas)
        if spec.experiment != args.command:
            raise ConfigError(f"line 1: experiment: config is for {spec.experiment!r}, "
                              f"command is {args.command!r}")
        threads = resolve_threads(args.threads)
    except ConfigError as exc:
        print(f"spikefield: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    start = time.perf_counter()
    code = EXIT_OK
    try:
        with np.errstate(all="ignore"):
            result = run_experiment(spec, threads)
    except (NumericalFailure, ArithmeticError) as exc:
        print(f"spikefield: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not result.passed:
        code = EXIT_NUMERIC
    elapsed = time.perf_counter() - start

    try:
        body = render(result)
        if args.out:
            with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(body)
            if result.is_table and result.summary:
                with open(_summary_path(args.out), "w", encoding="utf-8", newline="\n") as fh:
                    fh.write(render_json(result))
        else:
            sys.stdout.write(body)
    except OSError as exc:
        print(f"spikefield: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    # wall-clock stays out of the data files so reruns are byte-identical
    print(json.dumps({"command": spec.experiment, "wall_clock_s": round(elapsed, 3),
                      "passed": result.passed}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
