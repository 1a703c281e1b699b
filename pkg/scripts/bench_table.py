"""Benchmark MLA against concrete value iteration on the generated models.

Prints a markdown table (states, transitions, time, memory, regions) and
optionally appends the JSON report rows to a file.

    python3 scripts/bench_table.py
    python3 scripts/bench_table.py --case planning:n=128 --case machine:n=127,tm=127
"""
import argparse
import json
import logging

from mla.cli import bench_compare, build_model, parse_params, solve_report_emit
from mla.discounted import DiscountedConfig

DEFAULT_CASES = ["planning:n=64", "machine:n=63,tm=63", "inventory:n_max=63,t_max=63",
                 "network:n_comp=2,M=7,t_max=63"]


def parse_case(text):
    name, _, rest = text.partition(":")
    return name, parse_params([kv for kv in rest.split(",") if kv])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--case", action="append", default=None, metavar="MODEL:K=V,...")
    ap.add_argument("--beta", type=float, default=0.9)
    ap.add_argument("--eps-abs", type=float, default=0.01)
    ap.add_argument("--eps-float", type=float, default=1e-4)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--report", default=None, help="append JSON report rows here")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = DiscountedConfig(beta=args.beta, eps_abs=args.eps_abs, eps_float=args.eps_float,
                           threads=args.threads)
    header = ("| model | states | transitions | vi ms | mla ms | vi memory | mla memory "
              "| regions | max violation |")
    print(header)
    print("|" + "---|" * header.count(" | ") + "---|")
    for case in args.case or DEFAULT_CASES:
        name, params = parse_case(case)
        graph = build_model(name, params)
        vi_row, mla_row, cmp = bench_compare(graph, cfg, case)
        print(f"| {case} | {cmp['states']} | {cmp['transitions']} | {cmp['vi_time_ms']:.0f} "
              f"| {cmp['mla_time_ms']:.0f} | {cmp['vi_memory']} | {cmp['mla_memory']} "
              f"| {cmp['mla_regions']} | {cmp['max_violation']:.2e} |")
        if args.report:
            with open(args.report, "a", encoding="utf-8") as fh:
                for row in (vi_row, mla_row):
                    fh.write(solve_report_emit(row) + "\n")
                fh.write(json.dumps({"comparison": cmp}) + "\n")


if __name__ == "__main__":
    main()
