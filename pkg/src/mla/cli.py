"""Command-line front end: generate, solve, bench, check.

Reports are JSON lines, one object per run, always with the keys in
``REPORT_KEYS``.  Exit codes: 0 success, 2 invalid input, 3 solver did not
converge (a partial report with ``status`` is still written).
"""
from __future__ import annotations

import argparse
import inspect
import json
import logging
import sys

import numpy as np

from . import models
from .discounted import DiscountedConfig, mla_discounted, vi_discounted_report
from .errors import (CrossCheckFailed, MLAError, NoConvergence, NotAnMdp, ParamOutOfRange,
                     ParseError, ProbeBudgetExceeded, RoundLimitExceeded, ValidationError)
from .game import GameGraph, StateKind, load_game, save_game, validate
from .longrun import (LongRunConfig, check_uniform_value, mec_decomposition, mla_longrun,
                      solve_mdp_longrun, vi_longrun)
from .partition import dump_partition

log = logging.getLogger("mla")

REPORT_KEYS = ("model", "objective", "engine", "states", "transitions", "time_ms",
               "space_metric", "regions", "rounds", "bounds_gap_max", "peak_concrete",
               "c_lo", "c_hi", "probes", "mecs", "status", "bounds_dump")

EXIT_OK, EXIT_INVALID, EXIT_NO_CONVERGENCE = 0, 2, 3
_SOLVER_FAILURES = (NoConvergence, RoundLimitExceeded, ProbeBudgetExceeded)


def empty_report(**fields) -> dict:
    row = dict.fromkeys(REPORT_KEYS)
    unknown = set(fields) - set(REPORT_KEYS)
    if unknown:
        raise KeyError(f"unknown report keys {sorted(unknown)}")
    row.update(fields)
    return row


def solve_report_emit(report) -> str:
    """One JSON line; ``report`` is a dict over ``REPORT_KEYS``."""
    return json.dumps({k: report.get(k) for k in REPORT_KEYS}, sort_keys=False)


def _discounted_row(rep, model, dump_path=None) -> dict:
    row = empty_report(model=model, objective="discounted", engine=rep.engine, states=rep.states,
                       transitions=rep.transitions, time_ms=round(rep.time_ms, 3),
                       space_metric=int(rep.space_metric), regions=rep.regions,
                       rounds=int(rep.rounds), bounds_gap_max=rep.bounds_gap_max,
                       peak_concrete=int(rep.peak_concrete), status=rep.status)
    if dump_path and rep.tree is not None:
        with open(dump_path, "w", encoding="utf-8") as fh:
            fh.write(dump_partition(rep.tree, rep.u_minus, rep.u_plus))
        row["bounds_dump"] = str(dump_path)
    return row


def _is_mdp(graph: GameGraph) -> bool:
    return not graph.has_kind(StateKind.PLAYER2)


def solve(graph: GameGraph, args, model=None) -> dict:
    """Run one engine on one objective and return its report row."""
    if args.objective == "discounted":
        cfg = DiscountedConfig(beta=args.beta, eps_abs=args.eps_abs, eps_float=args.eps_float,
                               initial_depth=args.init_depth, max_outer_rounds=args.max_rounds)
        if args.engine == "vi":
            rep, _ = vi_discounted_report(graph, cfg.beta, cfg.eps_float)
        else:
            rep = mla_discounted(graph, cfg)
        return _discounted_row(rep, model, getattr(args, "dump", None))
    cfg = LongRunConfig(eps_abs=args.eps_abs, k=args.k, ratio=args.ratio,
                        initial_depth=args.init_depth)
    base = dict(model=model, objective="average", engine=args.engine, states=graph.n_states,
                transitions=graph.n_transitions, status="ok")
    if args.engine == "mla" and _is_mdp(graph) and not check_uniform_value(graph)[0]:
        rep = solve_mdp_longrun(graph, cfg)
        return empty_report(**base, time_ms=round(rep.time_ms, 3), space_metric=None,
                            regions=None, rounds=None, bounds_gap_max=rep.width,
                            c_lo=float(rep.lo[0]), c_hi=float(rep.hi[0]), probes=rep.probes,
                            mecs=rep.mecs)
    holds, _ = check_uniform_value(graph)
    if not holds:
        raise ValueError("average objective: no uniform-value witness; only MDPs with the mla "
                         "engine are solved per state")
    rep = vi_longrun(graph, cfg) if args.engine == "vi" else mla_longrun(graph, cfg)
    mla = args.engine == "mla"
    return empty_report(**base, time_ms=round(rep.time_ms, 3),
                        space_metric=int(rep.space_metric) if mla else graph.n_states,
                        regions=rep.regions if mla else None, rounds=rep.refinements,
                        bounds_gap_max=rep.width, peak_concrete=rep.peak_concrete,
                        c_lo=rep.c_lo, c_hi=rep.c_hi, probes=rep.probes, mecs=None)


def bench_compare(graph: GameGraph, config: DiscountedConfig, model=None, sample: int = 10_000,
                  seed: int = 0):
    """Run vi and mla on the discounted objective and cross-check them.

    Each vi value must lie in the mla interval of its region widened by the
    solvers' own float slack; raises CrossCheckFailed otherwise.  Returns
    (vi_row, mla_row, comparison).
    """
    vi_rep, v = vi_discounted_report(graph, config.beta, config.eps_float)
    mla_rep = mla_discounted(graph, config)
    lo, hi = mla_rep.state_bounds()
    vi_err = float(vi_rep.u_plus[0] - v[0]) if graph.n_states else 0.0
    tol = config.delta + vi_err
    idx = np.arange(graph.n_states)
    if graph.n_states > sample:
        idx = np.sort(np.random.default_rng(seed).choice(graph.n_states, sample, replace=False))
    below = lo[idx] - tol - v[idx]
    above = v[idx] - hi[idx] - tol
    worst = float(max(below.max(initial=-np.inf), above.max(initial=-np.inf)))
    if worst > 0:
        s = int(idx[np.argmax(np.maximum(below, above))])
        raise CrossCheckFailed(f"state {s}: vi {v[s]!r} outside mla [{lo[s]!r}, {hi[s]!r}] "
                               f"by {worst:.3e}")
    comparison = {"model": model, "states": graph.n_states, "transitions": graph.n_transitions,
                  "vi_time_ms": round(vi_rep.time_ms, 3), "mla_time_ms": round(mla_rep.time_ms, 3),
                  "vi_memory": graph.n_states, "mla_memory": int(mla_rep.space_metric),
                  "mla_regions": mla_rep.regions, "checked_states": int(idx.shape[0]),
                  "max_violation": worst}
    return _discounted_row(vi_rep, model), _discounted_row(mla_rep, model), comparison


# ---------------------------------------------------------------------------
# argument handling


def _coerce(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def parse_params(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ParamOutOfRange(f"--param expects k=v, got {item!r}")
        out[key.strip().replace("-", "_")] = _coerce(value.strip())
    return out


def build_model(name: str, params: dict, seed=None) -> GameGraph:
    gen = models.GENERATORS.get(name)
    if gen is None:
        raise ParamOutOfRange(f"unknown model {name!r}; known: {sorted(models.GENERATORS)}")
    if seed is not None and "seed" in inspect.signature(gen).parameters:
        params = {**params, "seed": seed}
    try:
        return gen(**params)
    except TypeError as exc:
        raise ParamOutOfRange(f"{name}: {exc}") from None


def _add_solver_flags(p):
    p.add_argument("--objective", choices=("discounted", "average"), default="discounted")
    p.add_argument("--beta", type=float, default=0.9)
    p.add_argument("--eps-abs", type=float, default=0.01)
    p.add_argument("--eps-float", type=float, default=1e-4)
    p.add_argument("--k", type=int, default=100, help="steps per divergence probe")
    p.add_argument("--ratio", type=float, default=0.5, help="share of regions split per refinement")
    p.add_argument("--init-depth", type=int, default=None)
    p.add_argument("--max-rounds", type=int, default=None)
    p.add_argument("--report", default=None, help="append JSON lines here (default stdout)")


def _add_model_flags(p, required=False):
    p.add_argument("--model", required=required, default=None)
    p.add_argument("--param", action="append", default=[], metavar="K=V")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mla", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a benchmark model in the game file format")
    _add_model_flags(g, required=True)
    g.add_argument("--out", required=True)

    s = sub.add_parser("solve", help="solve a game file or a generated model")
    s.add_argument("input", nargs="?", default=None)
    _add_model_flags(s)
    _add_solver_flags(s)
    s.add_argument("--engine", choices=("vi", "mla"), default="mla")
    s.add_argument("--dump", default=None, help="write per-region bounds to this path")

    b = sub.add_parser("bench", help="compare vi and mla on generated models")
    b.add_argument("--model", default="planning", help="comma-separated model names")
    b.add_argument("--param", action="append", default=[], metavar="K=V")
    b.add_argument("--seed", type=int, default=None)
    _add_solver_flags(b)
    b.add_argument("--engine", default="vi,mla", help="comma-separated engines")

    c = sub.add_parser("check", help="structural checks on a game file")
    c.add_argument("input")
    c.add_argument("--what", choices=("validate", "uniform-value", "mec"), default="validate")
    return ap


def _write_rows(rows, path):
    text = "".join(solve_report_emit(r) + "\n" for r in rows)
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(text)


def _load_input(args) -> tuple[GameGraph, str | None]:
    if args.input is not None:
        return load_game(args.input), None
    if args.model is None:
        raise ParamOutOfRange("solve needs an input file or --model")
    return build_model(args.model, parse_params(args.param), args.seed), args.model


def _cmd_generate(args) -> int:
    graph = build_model(args.model, parse_params(args.param), args.seed)
    save_game(graph, args.out)
    gen = graph.meta.get("generator", {})
    print(json.dumps({"out": args.out, "states": graph.n_states, "transitions": graph.n_transitions,
                      "core_states": gen.get("core_states")}))
    return EXIT_OK


def _cmd_solve(args) -> int:
    graph, model = _load_input(args)
    try:
        row = solve(graph, args, model)
    except _SOLVER_FAILURES as exc:
        row = empty_report(model=model, objective=args.objective, engine=args.engine,
                           states=graph.n_states, transitions=graph.n_transitions,
                           status=f"no-convergence: {exc}")
        _write_rows([row], args.report)
        log.error("mla.solve: %s", exc)
        return EXIT_NO_CONVERGENCE
    _write_rows([row], args.report)
    return EXIT_OK


def _cmd_bench(args) -> int:
    engines = [e.strip() for e in args.engine.split(",") if e.strip()]
    bad = set(engines) - {"vi", "mla"}
    if bad:
        raise ParamOutOfRange(f"unknown engines {sorted(bad)}")
    params = parse_params(args.param)
    cfg = DiscountedConfig(beta=args.beta, eps_abs=args.eps_abs, eps_float=args.eps_float,
                           initial_depth=args.init_depth, max_outer_rounds=args.max_rounds)
    status = EXIT_OK
    for name in (m.strip() for m in args.model.split(",") if m.strip()):
        graph = build_model(name, params, args.seed)
        if args.objective == "discounted" and set(engines) == {"vi", "mla"}:
            try:
                vi_row, mla_row, comparison = bench_compare(graph, cfg, name)
            except _SOLVER_FAILURES as exc:
                log.error("mla.bench %s: %s", name, exc)
                _write_rows([empty_report(model=name, objective="discounted", engine="mla",
                                          states=graph.n_states, transitions=graph.n_transitions,
                                          status=f"no-convergence: {exc}")], args.report)
                status = EXIT_NO_CONVERGENCE
                continue
            _write_rows([vi_row, mla_row], args.report)
            out = sys.stderr if args.report is None else sys.stdout
            print(json.dumps({"comparison": comparison}), file=out)
            continue
        for engine in engines:
            args.engine = engine
            try:
                row = solve(graph, args, name)
            except _SOLVER_FAILURES as exc:
                row = empty_report(model=name, objective=args.objective, engine=engine,
                                   states=graph.n_states, transitions=graph.n_transitions,
                                   status=f"no-convergence: {exc}")
                status = EXIT_NO_CONVERGENCE
            _write_rows([row], args.report)
    return status


def _cmd_check(args) -> int:
    if args.what == "validate":
        # parsing validates, and its error carries every violation in state order
        try:
            graph = load_game(args.input)
        except ValidationError as exc:
            print(json.dumps({"ok": False, "violations": [str(v) for v in exc.violations]}))
            return EXIT_INVALID
        result = validate(graph)
        print(json.dumps({"ok": result.ok, "violations": [str(v) for v in result.violations]}))
        return EXIT_OK if result.ok else EXIT_INVALID
    graph = load_game(args.input)
    if args.what == "uniform-value":
        holds, witness = check_uniform_value(graph)
        print(json.dumps({"uniform_value": holds, "witness": witness}))
        return EXIT_OK
    comps = mec_decomposition(graph)
    print(json.dumps({"mecs": [sorted(ec.states.tolist()) for ec in comps]}))
    return EXIT_OK


COMMANDS = {"generate": _cmd_generate, "solve": _cmd_solve, "bench": _cmd_bench,
            "check": _cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, ParseError, ParamOutOfRange, NotAnMdp, ValueError) as exc:
        print(f"mla.{args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CrossCheckFailed as exc:
        print(f"mla.bench: cross-check failed: {exc}", file=sys.stderr)
        return 1
    except MLAError as exc:
        print(f"mla.{args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
