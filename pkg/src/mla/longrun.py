"""Long-run average objectives.

``mla_longrun`` brackets the uniform value of a game by bisection over a
candidate gain c.  A probe runs relative value iteration v <- r - c + Pre(v)
on the abstraction: with min-summaries a uniform upward drift proves c is
below the value, with max-summaries a uniform downward drift proves it is
above.  Undecided probes refine the partition.  Once every region is a
singleton the search continues on the concrete graph with growing probe
lengths and the averaged / one-step increment bounds of the iterates.

For MDPs whose values differ between states, ``solve_mdp_longrun`` solves
each maximal end component separately and propagates the component values
through the quotient graph.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import _kernels as K
from .errors import CannotRefine, NoConvergence, NotAnMdp, ProbeBudgetExceeded
from .game import DivergenceVerdict, GameGraph, StateKind, verdict_of
from .mpre import HMode
from .partition import PartitionTree, initial_partition, space_metric, split_regions_ratio
from .discounted import RegionIndex, SpaceTracker


@dataclass
class LongRunConfig:
    eps_abs: float = 0.01
    k: int = 100
    ratio: float = 0.5
    initial_depth: int | None = None
    # largest relative-value-iteration run, in steps, the concrete phase may use
    max_bisection_steps: int = 1 << 20

    def __post_init__(self):
        if not self.eps_abs > 0:
            raise ValueError("eps_abs must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("ratio must lie in [0, 1]")
        if self.max_bisection_steps < self.k:
            raise ValueError("max_bisection_steps must be >= k")


@dataclass
class LongRunReport:
    c_lo: float
    c_hi: float
    regions: int
    space_metric: int
    probes: int = 0
    refinements: int = 0
    concrete_probes: int = 0
    fallback: bool = False
    time_ms: float = 0.0
    peak_concrete: int = 0
    tree: PartitionTree | None = None
    history: list = field(default_factory=list)
    status: str = "ok"

    @property
    def width(self) -> float:
        return self.c_hi - self.c_lo


def mag_iter2(graph: GameGraph, tree: PartitionTree, x: int, u, c: float, h: HMode, k: int,
              index: RegionIndex | None = None) -> float:
    """k+1 steps of v <- r - c + MPrex(v, R, u) on region x from v = u(x); h-summary."""
    if k < 1:
        raise ValueError("k must be >= 1")
    index = index or RegionIndex(graph, tree)
    size = int(tree.sizes[x])
    return float(K.mag_iter2_region(
        int(x), index.starts, index.order, index.pos, graph.indptr, graph.targets, graph.probs,
        graph.kinds, graph.rewards, index.edge_region, np.ascontiguousarray(u, dtype=float),
        float(c), h is HMode.MAX, int(k), np.empty(size), np.empty(size)))


def check_divergence(graph: GameGraph, tree: PartitionTree, c: float, h: HMode, k: int,
                     index: RegionIndex | None = None, tracker: SpaceTracker | None = None):
    """k+1 region sweeps of mag_iter2 from v = c; verdict on the final region values."""
    if k < 1:
        raise ValueError("k must be >= 1")
    index = index or RegionIndex(graph, tree)
    tracker = tracker or SpaceTracker()
    width = tree.max_region_size
    v = np.empty(len(tree))
    with tracker.hold(2 * width):
        K.check_divergence_kernel(index.starts, index.order, index.pos, graph.indptr,
                                  graph.targets, graph.probs, graph.kinds, graph.rewards,
                                  index.edge_region, float(c), h is HMode.MAX, int(k),
                                  np.empty(width), np.empty(width), v)
    return verdict_of(v, c), v


def rvi_bounds(graph: GameGraph, c: float, steps: int):
    """Bounds on the uniform value from ``steps`` iterations of v <- r - c + Pre(v), v0 = c.

    With w = v_n - c and d = v_n - v_{n-1}, the value lies in
    [c + max(min w / n, min d), c + min(max w / n, max d)].
    """
    v = np.empty(graph.n_states)
    w = np.empty(graph.n_states)
    K.rvi_run(graph.indptr, graph.targets, graph.probs, graph.kinds, graph.rewards,
              float(c), int(steps), v, w)
    drift = v - c
    incr = v - w
    lo = c + max(drift.min() / steps, incr.min())
    hi = c + min(drift.max() / steps, incr.max())
    return lo, hi


def _midpoint(lo: float, hi: float) -> float:
    return lo + (hi - lo) / 2.0


def mla_longrun(graph: GameGraph, config: LongRunConfig | None = None,
                tracker: SpaceTracker | None = None) -> LongRunReport:
    """Interval of width <= eps_abs around the uniform long-run value."""
    config = config or LongRunConfig()
    tracker = tracker or SpaceTracker()
    t0 = time.perf_counter()
    c_hi = float(graph.rewards.max())
    c_lo = float(graph.rewards.min())
    tree = initial_partition(graph, config.initial_depth)
    index = RegionIndex(graph, tree)
    rep = LongRunReport(c_lo, c_hi, len(tree), space_metric(tree))
    while c_hi - c_lo > config.eps_abs:
        c = _midpoint(c_lo, c_hi)
        d_minus, v_minus = check_divergence(graph, tree, c, HMode.MIN, config.k, index, tracker)
        rep.probes += 1
        if d_minus is DivergenceVerdict.PLUS:
            c_lo = c
            rep.history.append((c_lo, c_hi))
            continue
        d_plus, v_plus = check_divergence(graph, tree, c, HMode.MAX, config.k, index, tracker)
        rep.probes += 1
        if d_plus is DivergenceVerdict.MINUS:
            c_hi = c
            rep.history.append((c_lo, c_hi))
            continue
        try:
            tree = split_regions_ratio(tree, v_minus, v_plus, config.ratio)
        except CannotRefine:
            rep.fallback = True
            c_lo, c_hi = _concrete_bisection(graph, c_lo, c_hi, config, rep, tracker)
            break
        index = RegionIndex(graph, tree)
        rep.refinements += 1
    rep.c_lo, rep.c_hi = c_lo, c_hi
    rep.regions = len(tree)
    rep.space_metric = space_metric(tree)
    rep.tree = tree
    rep.peak_concrete = tracker.peak
    rep.time_ms = (time.perf_counter() - t0) * 1000.0
    return rep


def vi_longrun(graph: GameGraph, config: LongRunConfig | None = None) -> LongRunReport:
    """Concrete baseline: bisection on relative value iteration over all of S."""
    config = config or LongRunConfig()
    t0 = time.perf_counter()
    tracker = SpaceTracker()
    rep = LongRunReport(float(graph.rewards.min()), float(graph.rewards.max()), graph.n_states,
                        graph.n_states)
    rep.c_lo, rep.c_hi = _concrete_bisection(graph, rep.c_lo, rep.c_hi, config, rep, tracker)
    rep.peak_concrete = tracker.peak
    rep.time_ms = (time.perf_counter() - t0) * 1000.0
    return rep


def _concrete_bisection(graph, c_lo, c_hi, config, rep, tracker):
    steps = config.k + 1
    with tracker.hold(2 * graph.n_states):
        while c_hi - c_lo > config.eps_abs:
            c = _midpoint(c_lo, c_hi)
            lo, hi = rvi_bounds(graph, c, steps)
            rep.concrete_probes += 1
            rep.probes += 1
            decided = lo > c or hi < c
            c_lo, c_hi = max(c_lo, lo), min(c_hi, hi)
            if c_lo > c_hi:
                # only reachable through rounding when both bounds meet
                c_lo = c_hi = _midpoint(c_hi, c_lo)
            rep.history.append((c_lo, c_hi))
            if not decided and c_hi - c_lo > config.eps_abs:
                steps *= 2
                if steps > config.max_bisection_steps:
                    raise ProbeBudgetExceeded(
                        f"[{c_lo}, {c_hi}] still wider than {config.eps_abs} "
                        f"after probes of {steps // 2} steps")
    return c_lo, c_hi


# ---------------------------------------------------------------------------
# uniform value


def _reverse_csr(graph: GameGraph):
    src = np.repeat(np.arange(graph.n_states), np.diff(graph.indptr))
    order = np.argsort(graph.targets, kind="stable")
    rptr = np.zeros(graph.n_states + 1, dtype=np.int64)
    np.add.at(rptr, graph.targets + 1, 1)
    return np.cumsum(rptr), src[order]


def _reach_mask(graph: GameGraph, player: int, t: int, rev=None) -> np.ndarray:
    rptr, rsrc = rev if rev is not None else _reverse_csr(graph)
    own = StateKind.PLAYER1 if player == 1 else StateKind.PLAYER2
    opp = StateKind.PLAYER2 if player == 1 else StateKind.PLAYER1
    missing = np.diff(graph.indptr).copy()
    inside = np.zeros(graph.n_states, dtype=bool)
    inside[t] = True
    stack = [t]
    while stack:
        y = stack.pop()
        for s in rsrc[rptr[y]:rptr[y + 1]].tolist():
            if inside[s]:
                continue
            if graph.kinds[s] == opp:
                missing[s] -= 1
                if missing[s] > 0:
                    continue
            elif graph.kinds[s] != own and graph.kinds[s] != StateKind.PROBABILISTIC:
                continue
            inside[s] = True
            stack.append(s)
    return inside


def positive_reach_set(graph: GameGraph, player: int, t: int) -> frozenset:
    """States from which ``player`` can make reaching t have positive probability.

    Least set containing t closed under: own or probabilistic state with some
    successor inside, opponent state with all successors inside.
    """
    if player not in (1, 2):
        raise ValueError("player must be 1 or 2")
    if not 0 <= t < graph.n_states:
        raise ValueError(f"state {t} out of range")
    return frozenset(np.flatnonzero(_reach_mask(graph, player, t)).tolist())


def check_uniform_value(graph: GameGraph):
    """Sufficient test for all states sharing one long-run value.

    With A = {t : player 1 positively reaches t from everywhere} every state's
    value is at least the value of any t in A, and symmetrically for player 2
    with B.  The value is uniform if A and B meet, or if either is all of S.
    Returns (holds, witness) with the smallest witness state.
    """
    n = graph.n_states
    rev = _reverse_csr(graph)
    a = [bool(_reach_mask(graph, 1, t, rev).all()) for t in range(n)]
    b = [bool(_reach_mask(graph, 2, t, rev).all()) for t in range(n)]
    for t in range(n):
        if a[t] and b[t]:
            return True, t
    if n and (all(a) or all(b)):
        return True, 0
    return False, None


# ---------------------------------------------------------------------------
# MDP pipeline


@dataclass(frozen=True)
class EndComponent:
    states: np.ndarray

    def __len__(self):
        return int(self.states.shape[0])

    def subgraph(self, graph: GameGraph):
        return graph.subgraph(self.states)


def _require_mdp(graph: GameGraph):
    if graph.has_kind(StateKind.PLAYER2):
        raise NotAnMdp("graph has player-2 states")


def mec_decomposition(mdp: GameGraph) -> list[EndComponent]:
    """Maximal end components by repeated SCC decomposition and pruning."""
    _require_mdp(mdp)
    n = mdp.n_states
    src = np.repeat(np.arange(n), np.diff(mdp.indptr))
    dst = mdp.targets
    active = np.ones(n, dtype=bool)
    while True:
        keep = active[src] & active[dst]
        adj = csr_matrix((np.ones(int(keep.sum())), (src[keep], dst[keep])), shape=(n, n))
        _, label = connected_components(adj, directed=True, connection="strong")
        label = np.where(active, label, -1)
        internal = (label[src] == label[dst]) & active[src]
        n_internal = np.bincount(src[internal], minlength=n)
        deg = np.diff(mdp.indptr)
        is_prob = mdp.kinds == StateKind.PROBABILISTIC
        bad = active & ((n_internal == 0) | (is_prob & (n_internal < deg)))
        if not bad.any():
            break
        active &= ~bad
    comps = {}
    for s in np.flatnonzero(active).tolist():
        comps.setdefault(int(label[s]), []).append(s)
    out = [EndComponent(np.array(sorted(c), dtype=np.int64)) for c in comps.values()]
    out.sort(key=lambda ec: int(ec.states[0]))
    return out


def quotient_reach_value(graph: GameGraph, terminal, eps: float = 1e-9,
                         v0=None, max_sweeps: int = 1_000_000) -> np.ndarray:
    """Max-expected terminal value; ``terminal`` maps pinned states to their values.

    Iterates v <- Pre(v) with pinned states held fixed, from v0 (default the
    smallest terminal value), until the sup-norm step is at most eps.
    """
    _require_mdp(graph)
    idx = np.fromiter(terminal.keys(), dtype=np.int64)
    vals = np.fromiter(terminal.values(), dtype=float)
    if v0 is None:
        v = np.full(graph.n_states, vals.min() if vals.size else 0.0)
    else:
        v = np.array(v0, dtype=float)
    v[idx] = vals
    out = np.empty_like(v)
    for _ in range(max_sweeps):
        K.reduce_edges(graph.indptr, graph.kinds, graph.probs, v[graph.targets], out)
        out[idx] = vals
        res = float(np.max(np.abs(out - v))) if v.size else 0.0
        v, out = out, v
        if res <= eps:
            return v
    raise NoConvergence("quotient iteration", res)


@dataclass
class MdpLongRunReport:
    lo: np.ndarray
    hi: np.ndarray
    mecs: list
    probes: int = 0
    time_ms: float = 0.0
    quotient_sweeps: int = 0
    status: str = "ok"

    @property
    def width(self) -> float:
        return float(np.max(self.hi - self.lo)) if self.lo.size else 0.0


def _quotient(mdp: GameGraph, comps: list[EndComponent]):
    """Collapse every component into a player-1 node that either stays (terminal
    node pinned to the component's value) or takes one of its exit edges."""
    n = mdp.n_states
    comp_of = np.full(n, -1, dtype=np.int64)
    for i, ec in enumerate(comps):
        comp_of[ec.states] = i
    transient = np.flatnonzero(comp_of < 0)
    q_id = np.empty(n, dtype=np.int64)
    q_id[transient] = np.arange(transient.shape[0])
    base = transient.shape[0]
    for i, ec in enumerate(comps):
        q_id[ec.states] = base + i
    term0 = base + len(comps)
    kinds, edges, probs = [], [], []
    for s in transient.tolist():
        kinds.append(int(mdp.kinds[s]))
        tg = q_id[mdp.successors(s)]
        if mdp.kinds[s] == StateKind.PROBABILISTIC:
            merged = {}
            for t, p in zip(tg.tolist(), mdp.edge_probs(s).tolist()):
                merged[t] = merged.get(t, 0.0) + p
            edges.append(list(merged))
            probs.append(list(merged.values()))
        else:
            edges.append(sorted(set(tg.tolist())))
            probs.append(None)
    for i, ec in enumerate(comps):
        exits = {term0 + i}
        for s in ec.states.tolist():
            if mdp.kinds[s] == StateKind.PLAYER1:
                succ = mdp.successors(s)
                exits.update(q_id[succ[comp_of[succ] != i]].tolist())
        kinds.append(int(StateKind.PLAYER1))
        edges.append(sorted(exits))
        probs.append(None)
    for i in range(len(comps)):
        kinds.append(int(StateKind.PLAYER1))
        edges.append([term0 + i])
        probs.append(None)
    q = GameGraph.from_lists(kinds, edges, np.zeros(len(kinds)), probs, check=False)
    return q, q_id, term0


def solve_mdp_longrun(mdp: GameGraph, config: LongRunConfig | None = None) -> MdpLongRunReport:
    """Per-state long-run value intervals of an MDP.

    Each maximal end component is solved on its induced subgraph, the
    components are collapsed, and the best reachable component value is
    computed from below with lower bounds and from above with upper bounds.
    """
    _require_mdp(mdp)
    config = config or LongRunConfig()
    t0 = time.perf_counter()
    comps = mec_decomposition(mdp)
    mec_rows, lo_t, hi_t, probes = [], [], [], 0
    for ec in comps:
        sub, _ = ec.subgraph(mdp)
        r = mla_longrun(sub, config)
        probes += r.probes
        lo_t.append(r.c_lo)
        hi_t.append(r.c_hi)
        mec_rows.append({"size": len(ec), "lo": r.c_lo, "hi": r.c_hi})
    q, q_id, term0 = _quotient(mdp, comps)
    terms = list(range(term0, term0 + len(comps)))
    lo_t, hi_t = np.array(lo_t), np.array(hi_t)
    v_lo, v_hi, sweeps = _bracket_reach(q, terms, lo_t, hi_t, config.eps_abs + 1e-7)
    rep = MdpLongRunReport(v_lo[q_id], v_hi[q_id], mec_rows, probes,
                           (time.perf_counter() - t0) * 1000.0, sweeps)
    return rep


def _bracket_reach(q: GameGraph, terms, lo_t, hi_t, target: float, max_sweeps: int = 10_000_000):
    """Iterate from below on lower terminal values and from above on upper ones.

    Iterates from below never exceed the lower fixpoint and iterates from
    above never drop under the upper one, so the pair brackets both.
    """
    n = q.n_states
    terms = np.asarray(terms, dtype=np.int64)
    if terms.size == 0:
        raise NoConvergence("MDP without end components", np.inf)
    lo = np.full(n, lo_t.min())
    hi = np.full(n, hi_t.max())
    lo[terms], hi[terms] = lo_t, hi_t
    out = np.empty(n)
    for sweep in range(1, max_sweeps + 1):
        K.reduce_edges(q.indptr, q.kinds, q.probs, lo[q.targets], out)
        out[terms] = lo_t
        lo, out = out, lo
        K.reduce_edges(q.indptr, q.kinds, q.probs, hi[q.targets], out)
        out[terms] = hi_t
        hi, out = out, hi
        if np.max(hi - lo) <= target:
            return lo, hi, sweep
    raise NoConvergence("quotient bracketing", float(np.max(hi - lo)))
