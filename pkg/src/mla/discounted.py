"""Abstraction-refinement solver for discounted objectives.

The outer loop keeps a lower and an upper value per region.  Each round
re-solves both on the current partition by region-level Jacobi sweeps
(``global_val_iter``); every region update is a magnified iteration that
solves the region's concrete states exactly while reading other regions
through their single abstract value.  Regions whose bounds are still more
than ``eps_abs`` apart are split and the round repeats.
"""
from __future__ import annotations

import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numba
import numpy as np

from . import _kernels as K
from .errors import CannotRefine, NoConvergence, RoundLimitExceeded
from .game import GameGraph, residual_tolerance, value_iteration_discounted
from .mpre import HMode
from .partition import (PartitionTree, initial_partition, space_metric, split_regions_all)


def env_threads() -> int:
    """Intra-sweep worker count from MLA_THREADS (default 1)."""
    raw = os.environ.get("MLA_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, min(n, numba.config.NUMBA_NUM_THREADS))


@dataclass
class DiscountedConfig:
    beta: float = 0.9
    eps_abs: float = 0.01
    eps_float: float = 1e-4
    initial_depth: int | None = None
    max_outer_rounds: int | None = None
    max_global_sweeps: int = 100_000
    max_mag_sweeps: int = 10_000_000
    # skip regions none of whose successor regions moved since their last update
    skip_unchanged: bool = True
    fallback: bool = True
    threads: int = field(default_factory=env_threads)

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if not self.eps_abs > 0:
            raise ValueError("eps_abs must be positive")
        if self.eps_float < 0:
            raise ValueError("eps_float must be >= 0")
        if self.eps_float > 0 and self.eps_abs < 10 * self.eps_float:
            raise ValueError("eps_abs must be at least 10 * eps_float")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def delta(self) -> float:
        """Bracketing slack eps_float * beta / (1 - beta)."""
        return self.eps_float * self.beta / (1.0 - self.beta)


class SpaceTracker:
    """Counts live concrete-valuation entries (state-indexed floats).

    ``limit`` is the allowance of the current partition (max |x| per
    worker); ``excess`` records the worst overshoot of it.
    """

    def __init__(self):
        self.live = 0
        self.peak = 0
        self.limit: int | None = None
        self.excess = 0

    @contextmanager
    def hold(self, entries: int):
        self.live += int(entries)
        self.peak = max(self.peak, self.live)
        if self.limit is not None:
            self.excess = max(self.excess, self.live - self.limit)
        try:
            yield
        finally:
            self.live -= int(entries)


class RegionIndex:
    """Per-partition arrays the compiled loops need."""

    def __init__(self, graph: GameGraph, tree: PartitionTree):
        self.tree = tree
        lay = tree.layout
        self.starts = tree.starts
        self.order = lay.order
        self.pos = lay.pos
        reg = tree.state_region
        self.edge_region = np.ascontiguousarray(reg[graph.targets])
        src = np.repeat(reg, np.diff(graph.indptr))
        cross = src != self.edge_region
        R = len(tree)
        pairs = np.unique(self.edge_region[cross] * R + src[cross])
        dst = pairs // R
        self.pred_idx = np.ascontiguousarray(pairs % R)
        self.pred_ptr = np.zeros(R + 1, dtype=np.int64)
        np.add.at(self.pred_ptr, dst + 1, 1)
        self.pred_ptr = np.cumsum(self.pred_ptr)


@dataclass
class GlobalStats:
    mag_calls: int = 0
    mag_sweeps: int = 0
    global_sweeps: int = 0

    def add(self, other: "GlobalStats"):
        self.mag_calls += other.mag_calls
        self.mag_sweeps += other.mag_sweeps
        self.global_sweeps += other.global_sweeps


def _tolerances(graph: GameGraph, beta: float, eps_float: float):
    eps = residual_tolerance(graph, beta, eps_float)
    # inner solves must be much tighter than eps so that their error stays
    # negligible next to the beta * eps of the outer stopping rule
    floor = 1e-2 * eps * (1.0 - beta) ** 2
    floor = max(floor, 4 * np.finfo(float).eps * max(graph.max_abs_reward, 1.0))
    first = max(floor, 1e-4 * max(graph.max_abs_reward, eps))
    return eps, floor, first


def _skip_tolerance(beta: float) -> float:
    # a skipped region lags its inputs by at most this much, which moves the
    # fixpoint by at most skip_tol * beta / (1 - beta) <= 1e-13; skipping is
    # also held back until inner solves run at the tolerance floor
    return 1e-13 * (1.0 - beta)


def mag_iter(graph: GameGraph, tree: PartitionTree, x: int, u, beta: float, h: HMode,
             eps_float: float = 0.0, max_mag_sweeps: int = 10_000_000,
             index: RegionIndex | None = None) -> float:
    """Solve region x's concrete states against frozen u; return h over them."""
    index = index or RegionIndex(graph, tree)
    u = np.ascontiguousarray(u, dtype=np.float64)
    tol = residual_tolerance(graph, beta, eps_float)
    buf = np.empty(int(tree.sizes[x]))
    val, sweeps, res = K.mag_iter_region(
        int(x), index.starts, index.order, index.pos, graph.indptr, graph.targets, graph.probs,
        graph.kinds, graph.rewards, index.edge_region, u, beta, h is HMode.MAX, tol,
        max_mag_sweeps, buf)
    if res > tol:
        raise NoConvergence(f"magnified iteration on region {x}: {sweeps} sweeps", res, region=int(x))
    return float(val)


def global_val_iter(graph: GameGraph, tree: PartitionTree, u, beta: float, h: HMode,
                    eps_float: float = 0.0, max_global_sweeps: int = 100_000,
                    max_mag_sweeps: int = 10_000_000, skip_unchanged: bool = True,
                    threads: int = 1, index: RegionIndex | None = None,
                    tracker: SpaceTracker | None = None, stats: GlobalStats | None = None):
    """Region-level Jacobi sweeps until no region moves by more than eps_float."""
    index = index or RegionIndex(graph, tree)
    tracker = tracker or SpaceTracker()
    u = np.array(u, dtype=np.float64)
    if u.shape[0] != len(tree):
        raise ValueError("u must have one entry per region")
    eps, floor, first = _tolerances(graph, beta, eps_float)
    width = tree.max_region_size
    threads = max(1, min(threads, len(tree)))
    with tracker.hold(width * threads):
        if threads == 1:
            counters = np.zeros(7)
            counters[2] = -1
            buf = np.empty(width)
            K.global_val_iter_kernel(
                index.starts, index.order, index.pos, graph.indptr, graph.targets, graph.probs,
                graph.kinds, graph.rewards, index.edge_region, index.pred_ptr, index.pred_idx,
                u, beta, h is HMode.MAX, eps, floor, first, max_global_sweeps, max_mag_sweeps,
                skip_unchanged, _skip_tolerance(beta), buf, counters)
            del buf
        else:
            counters = _global_parallel(graph, index, u, beta, h, eps, floor, first,
                                        max_global_sweeps, max_mag_sweeps, skip_unchanged,
                                        threads, width)
    if stats is not None:
        stats.add(GlobalStats(int(counters[0]), int(counters[1]), int(counters[4])))
    status = int(counters[6])
    if status == 1:
        raise NoConvergence("magnified iteration did not reach its tolerance",
                            float(counters[3]), region=int(counters[2]))
    if status == 2:
        raise NoConvergence(f"global iteration: {int(counters[4])} sweeps", float(counters[5]))
    return u


def _chunk_bounds(tree: PartitionTree, threads: int) -> np.ndarray:
    """Region ranges holding roughly equal numbers of states."""
    cuts = np.searchsorted(tree.starts, np.linspace(0, tree.starts[-1], threads + 1)[1:-1])
    return np.unique(np.concatenate(([0], cuts, [len(tree)]))).astype(np.int64)


def _global_parallel(graph, index, u, beta, h, eps, floor, first, max_global, max_mag,
                     skip, threads, width):
    bounds = _chunk_bounds(index.tree, threads)
    chunks = bounds.shape[0] - 1
    prev_threads = numba.get_num_threads()
    # chunking follows the request; actual workers are capped by numba's pool
    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    R = u.shape[0]
    stale = np.zeros(R)
    tol_used = np.full(R, np.inf)
    u_hat = np.empty(R)
    bufs = np.empty((chunks, width))
    totals = np.zeros(7)
    prev = np.inf
    try:
        while True:
            u_hat[:] = u
            tol = max(floor, first) if prev == np.inf else max(floor, 1e-4 * prev)
            part = np.zeros((chunks, 4))
            part[:, 2] = -1
            K.sweep_regions_parallel(bounds, index.starts, index.order, index.pos, graph.indptr,
                                     graph.targets, graph.probs, graph.kinds, graph.rewards,
                                     index.edge_region, u_hat, u, beta, h is HMode.MAX, tol,
                                     max_mag, bufs, skip and tol <= floor, stale,
                                     _skip_tolerance(beta), tol_used, part)
            totals[0] += part[:, 0].sum()
            totals[1] += part[:, 1].sum()
            totals[4] += 1
            failed = np.flatnonzero(part[:, 2] >= 0)
            if failed.size:
                totals[2], totals[3], totals[6] = part[failed[0], 2], part[failed[0], 3], 1
                return totals
            res = K.propagate_changes(u, u_hat, index.pred_ptr, index.pred_idx, stale)
            totals[5] = res
            if res <= eps:
                return totals
            if totals[4] >= max_global:
                totals[6] = 2
                return totals
            prev = res
    finally:
        numba.set_num_threads(prev_threads)


@dataclass
class SolveReport:
    engine: str
    states: int
    transitions: int
    time_ms: float
    space_metric: int
    regions: int | None
    rounds: int
    u_minus: np.ndarray
    u_plus: np.ndarray
    tree: PartitionTree | None = None
    mag_calls: int = 0
    mag_sweeps: int = 0
    global_sweeps: int = 0
    peak_concrete: int = 0
    space_excess: int = 0
    certified: bool = True
    fallback: bool = False
    status: str = "ok"

    @property
    def bounds_gap_max(self) -> float:
        if self.u_plus.shape[0] == 0:
            return 0.0
        return float(np.max(self.u_plus - self.u_minus))

    def state_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-state lower and upper bounds, u-([s]) and u+([s])."""
        if self.tree is None:
            return self.u_minus.copy(), self.u_plus.copy()
        reg = self.tree.state_region
        return self.u_minus[reg], self.u_plus[reg]


def mla_discounted(graph: GameGraph, config: DiscountedConfig | None = None,
                   tracker: SpaceTracker | None = None) -> SolveReport:
    config = config or DiscountedConfig()
    tracker = tracker or SpaceTracker()
    t0 = time.perf_counter()
    tree = initial_partition(graph, config.initial_depth)
    max_rounds = config.max_outer_rounds
    if max_rounds is None:
        max_rounds = graph.layout.total_bits + 2
    stats = GlobalStats()
    u_minus = np.zeros(len(tree))
    u_plus = np.zeros(len(tree))
    rounds = 0
    fallback = False
    common = dict(eps_float=config.eps_float, max_global_sweeps=config.max_global_sweeps,
                  max_mag_sweeps=config.max_mag_sweeps, skip_unchanged=config.skip_unchanged,
                  threads=config.threads, tracker=tracker, stats=stats)
    while True:
        rounds += 1
        if rounds > max_rounds:
            raise RoundLimitExceeded(f"gap still {np.max(u_plus - u_minus):.3g} after {max_rounds} rounds")
        index = RegionIndex(graph, tree)
        tracker.limit = tree.max_region_size * max(1, min(config.threads, len(tree)))
        u_plus = u_minus.copy()
        u_plus = global_val_iter(graph, tree, u_plus, config.beta, HMode.MAX, index=index, **common)
        u_minus = global_val_iter(graph, tree, u_minus, config.beta, HMode.MIN, index=index, **common)
        if np.all(u_plus - u_minus <= config.eps_abs):
            break
        try:
            tree, u_minus, u_plus = split_regions_all(tree, u_minus, u_plus, config.eps_abs)
        except CannotRefine:
            if not config.fallback:
                raise
            u_minus, u_plus = _concrete_fallback(graph, tree, u_minus, u_plus, config, tracker)
            fallback = True
            break
    elapsed = (time.perf_counter() - t0) * 1000.0
    return SolveReport(
        engine="mla", states=graph.n_states, transitions=graph.n_transitions, time_ms=elapsed,
        space_metric=space_metric(tree), regions=len(tree), rounds=rounds, u_minus=u_minus,
        u_plus=u_plus, tree=tree, mag_calls=stats.mag_calls, mag_sweeps=stats.mag_sweeps,
        global_sweeps=stats.global_sweeps, peak_concrete=tracker.peak,
        space_excess=tracker.excess, certified=config.eps_float > 0, fallback=fallback)


def _concrete_fallback(graph, tree, u_minus, u_plus, config, tracker):
    """Exact bounds for singleton regions the abstraction could not close."""
    eps = residual_tolerance(graph, config.beta, config.eps_float) * 1e-2
    with tracker.hold(2 * graph.n_states):
        v, _ = value_iteration_discounted(graph, config.beta, eps)
        err = config.beta / (1.0 - config.beta) * eps
        over = np.flatnonzero(u_plus - u_minus > config.eps_abs)
        u_minus = u_minus.copy()
        u_plus = u_plus.copy()
        for x in over:
            members = tree.layout.order[tree.starts[x]:tree.starts[x + 1]]
            u_minus[x] = v[members].min() - err
            u_plus[x] = v[members].max() + err
    return u_minus, u_plus


def vi_discounted_report(graph: GameGraph, beta: float, eps_float: float,
                         max_sweeps: int = 1_000_000) -> tuple[SolveReport, np.ndarray]:
    """Plain value iteration wrapped in the common report (bounds from the residual)."""
    t0 = time.perf_counter()
    v, sweeps = value_iteration_discounted(graph, beta, eps_float, max_sweeps)
    err = beta / (1.0 - beta) * residual_tolerance(graph, beta, eps_float)
    elapsed = (time.perf_counter() - t0) * 1000.0
    rep = SolveReport(engine="vi", states=graph.n_states, transitions=graph.n_transitions,
                      time_ms=elapsed, space_metric=graph.n_states, regions=None, rounds=sweeps,
                      u_minus=v - err, u_plus=v + err, peak_concrete=2 * graph.n_states)
    return rep, v
