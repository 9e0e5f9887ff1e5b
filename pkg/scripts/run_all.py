"""Run every shipped experiment config and write the outputs to one directory.

usage: python3 scripts/run_all.py [--out-dir results] [--threads N] [--only NAME ...]
"""
import argparse
import json
import os
import sys

from spikefield.cli import main as cli_main

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")
TABLES = {"phase-affine", "extinction-scaling", "bistability-quadratic", "simulate"}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", default="results")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--only", nargs="*", default=None,
                        help="config file stems to run, e.g. phase_affine")
    args = parser.parse_args(argv)
    os.makedirs(args.out_dir, exist_ok=True)
    worst = 0
    for name in sorted(os.listdir(CONFIG_DIR)):
        stem, _ = os.path.splitext(name)
        if args.only and stem not in args.only:
            continue
        path = os.path.join(CONFIG_DIR, name)
        with open(path) as fh:
            command = json.load(fh)["experiment"]
        suffix = ".csv" if command in TABLES else ".json"
        out = os.path.join(args.out_dir, stem + suffix)
        cli = [command, "--config", path, "--out", out]
        if args.threads is not None:
            cli += ["--threads", str(args.threads)]
        code = cli_main(cli)
        print(f"{stem}: exit {code} -> {out}", file=sys.stderr)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
