"""Magnified predecessor operators.

``mpre`` evaluates Pre with out-of-region successors replaced by the
max/min of their region; ``mprex`` does the same for one region using only
that region's values plus one number per foreign region.  These are
reference implementations over whole arrays; the solvers run the compiled
region loops in ``_kernels``.
"""
from __future__ import annotations

from collections.abc import Mapping
from enum import IntEnum

import numpy as np

from . import _kernels as K
from .errors import DimensionMismatch, ForeignStateInRegionLookup
from .game import GameGraph, _as_valuation
from .partition import PartitionTree, region_of, states_of


class HMode(IntEnum):
    MAX = 0
    MIN = 1

    def reduce(self, values):
        return np.max(values) if self is HMode.MAX else np.min(values)


def region_summary(tree: PartitionTree, v, h: HMode) -> np.ndarray:
    """u(y) = h{v(s) | s in y} for every region y."""
    v = np.asarray(v, dtype=float)
    sorted_v = v[tree.layout.order]
    op = np.maximum if h is HMode.MAX else np.minimum
    return op.reduceat(sorted_v, tree.starts[:-1])


def g_aux(graph: GameGraph, s: int, h: HMode, tree: PartitionTree, v, t: int) -> float:
    if region_of(tree, t) == region_of(tree, s):
        return float(v[t])
    return float(h.reduce(np.asarray(v)[states_of(tree, region_of(tree, t))]))


def mpre(graph: GameGraph, h: HMode, v, tree: PartitionTree) -> np.ndarray:
    v = _as_valuation(graph, v)
    summary = region_summary(tree, v, h)
    reg = tree.state_region
    src = np.repeat(reg, np.diff(graph.indptr))
    tgt = reg[graph.targets]
    edge_vals = np.where(src == tgt, v[graph.targets], summary[tgt])
    out = np.empty(graph.n_states)
    return K.reduce_edges(graph.indptr, graph.kinds, graph.probs, edge_vals, out)


def _region_values(tree: PartitionTree, x: int, v_x) -> Mapping:
    if isinstance(v_x, Mapping):
        return v_x
    members = states_of(tree, x)
    v_x = np.asarray(v_x, dtype=float)
    if v_x.shape != members.shape:
        raise DimensionMismatch(f"region {x} has {members.shape[0]} states, got {v_x.shape[0]} values")
    return dict(zip(members.tolist(), v_x.tolist()))


def ghat_aux(s: int, tree: PartitionTree, v_x, u, t: int) -> float:
    """v_x(t) inside s's region, u of t's region outside it.

    ``v_x`` is a mapping state -> value, or an array aligned with
    ``states_of`` of s's region.
    """
    x = region_of(tree, s)
    y = region_of(tree, t)
    if y != x:
        return float(u[y])
    vals = _region_values(tree, x, v_x)
    if t not in vals:
        raise ForeignStateInRegionLookup(f"state {t} of region {x} has no value")
    return float(vals[t])


def mprex(graph: GameGraph, x: int, v_x, tree: PartitionTree, u) -> np.ndarray:
    """MPre restricted to region x, reading foreign regions through u.

    ``v_x`` and the result are aligned with ``states_of(tree, x)``.
    """
    members = states_of(tree, x)
    v_x = np.asarray(v_x, dtype=float)
    if v_x.shape != members.shape:
        raise DimensionMismatch(f"region {x} has {members.shape[0]} states, got {v_x.shape[0]} values")
    u = np.asarray(u, dtype=float)
    if u.shape[0] != len(tree):
        raise DimensionMismatch(f"u has {u.shape[0]} entries, partition has {len(tree)} regions")
    local = {s: i for i, s in enumerate(members.tolist())}
    out = np.empty(members.shape[0])
    for i, s in enumerate(members.tolist()):
        a, b = graph.indptr[s], graph.indptr[s + 1]
        tg = graph.targets[a:b]
        regs = tree.state_region[tg]
        vals = np.array([v_x[local[t]] if r == x else u[r] for t, r in zip(tg.tolist(), regs.tolist())])
        kind = graph.kinds[s]
        if kind == K.PROB:
            acc = comp = 0.0
            for p, val in zip(graph.probs[a:b].tolist(), vals.tolist()):
                acc, comp = _comp_add(acc, comp, p * val)
            out[i] = acc + comp
        elif kind == K.P1:
            out[i] = vals.max()
        else:
            out[i] = vals.min()
    return out


def _comp_add(acc, comp, term):
    t = acc + term
    if abs(acc) >= abs(term):
        comp += (acc - t) + term
    else:
        comp += (term - t) + acc
    return t, comp
