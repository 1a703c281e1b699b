"""Turn-based stochastic game graphs, the Pre operator and the concrete solvers.

A graph is stored in CSR form: the successors of state ``s`` are
``targets[indptr[s]:indptr[s+1]]`` with matching ``probs`` (zero on
player-state edges).  Rewards sit on states.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property

import numpy as np

from . import _kernels as K
from .errors import DimensionMismatch, NoConvergence, ParseError, ValidationError
from .partition import StateLayout, VariableSchema

PROB_TOL = 1e-9
# sums closer to 1 than this are float noise and are kept verbatim
_NOISE_TOL = 1e-12
EXACT_RESIDUAL = 1e-14


class StateKind(IntEnum):
    PLAYER1 = K.P1
    PLAYER2 = K.P2
    PROBABILISTIC = K.PROB


_KIND_NAMES = {StateKind.PLAYER1: "p1", StateKind.PLAYER2: "p2", StateKind.PROBABILISTIC: "prob"}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}


class DivergenceVerdict(Enum):
    PLUS = "+"
    MINUS = "-"
    UNKNOWN = "?"


@dataclass(frozen=True)
class Violation:
    state: int
    rule: str
    detail: str = ""

    def __str__(self):
        extra = f" ({self.detail})" if self.detail else ""
        return f"state {self.state}: {self.rule}{extra}"


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def raise_if_invalid(self):
        if self.violations:
            raise ValidationError(self.violations)


@dataclass(frozen=True, eq=False)
class GameGraph:
    kinds: np.ndarray
    indptr: np.ndarray
    targets: np.ndarray
    probs: np.ndarray
    rewards: np.ndarray
    schema: VariableSchema | None = None
    assignments: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kinds", np.ascontiguousarray(self.kinds, dtype=np.int8))
        object.__setattr__(self, "indptr", np.ascontiguousarray(self.indptr, dtype=np.int64))
        object.__setattr__(self, "targets", np.ascontiguousarray(self.targets, dtype=np.int64))
        object.__setattr__(self, "probs", np.ascontiguousarray(self.probs, dtype=np.float64))
        object.__setattr__(self, "rewards", np.ascontiguousarray(self.rewards, dtype=np.float64))
        n = self.kinds.shape[0]
        if self.indptr.shape[0] != n + 1 or self.rewards.shape[0] != n:
            raise DimensionMismatch("kinds, indptr and rewards disagree on |S|")
        if self.targets.shape[0] != self.indptr[-1] or self.probs.shape[0] != self.indptr[-1]:
            raise DimensionMismatch("targets/probs length must equal indptr[-1]")
        if self.assignments is not None:
            a = np.ascontiguousarray(self.assignments, dtype=np.int64)
            if a.ndim != 2 or a.shape[0] != n:
                raise DimensionMismatch("assignments must be |S| x n_variables")
            object.__setattr__(self, "assignments", a)
            if self.schema is None:
                raise ValueError("assignments given without a schema")

    @classmethod
    def from_lists(cls, kinds, edges, rewards, probs=None, schema=None, assignments=None,
                   meta=None, check=True) -> "GameGraph":
        """Build from per-state successor lists.

        ``probs[s]`` is read only for probabilistic states.  Distributions
        within PROB_TOL of 1 are renormalized; with ``check`` the graph is
        validated and ValidationError raised on any violation.
        """
        n = len(kinds)
        kind_arr = np.array([int(k) for k in kinds], dtype=np.int8)
        indptr = np.zeros(n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(e) for e in edges]) if n else []
        targets = np.fromiter((t for e in edges for t in e), dtype=np.int64, count=int(indptr[-1]))
        p = np.zeros(int(indptr[-1]))
        for s in range(n):
            if kind_arr[s] == K.PROB and probs is not None and probs[s] is not None:
                p[indptr[s]:indptr[s + 1]] = probs[s]
        g = cls(kind_arr, indptr, targets, p, np.asarray(rewards, dtype=float), schema,
                assignments, dict(meta or {}))
        if check:
            validate(g).raise_if_invalid()
            _renormalize(g)
        return g

    @property
    def n_states(self) -> int:
        return self.kinds.shape[0]

    @property
    def n_transitions(self) -> int:
        return self.targets.shape[0]

    def __len__(self):
        return self.n_states

    def successors(self, s: int) -> np.ndarray:
        return self.targets[self.indptr[s]:self.indptr[s + 1]]

    def edge_probs(self, s: int) -> np.ndarray:
        return self.probs[self.indptr[s]:self.indptr[s + 1]]

    @property
    def max_abs_reward(self) -> float:
        return float(np.abs(self.rewards).max()) if self.n_states else 0.0

    @property
    def variable_schema(self) -> VariableSchema:
        return self.schema if self.schema is not None else VariableSchema.single(self.n_states)

    @cached_property
    def layout(self) -> StateLayout:
        schema = self.variable_schema
        if self.assignments is None:
            codes = np.arange(self.n_states, dtype=np.int64)
        else:
            codes = schema.encode(self.assignments)
        return StateLayout(codes, schema.total_bits)

    def has_kind(self, kind: StateKind) -> bool:
        return bool(np.any(self.kinds == int(kind)))

    def subgraph(self, states) -> tuple["GameGraph", np.ndarray]:
        """Graph induced by ``states`` (edges leaving the set are dropped).

        Returns the subgraph and the original id of every new state.
        """
        keep = np.unique(np.asarray(states, dtype=np.int64))
        local = np.full(self.n_states, -1, dtype=np.int64)
        local[keep] = np.arange(keep.shape[0])
        edges, probs = [], []
        for s in keep:
            t = self.successors(s)
            mask = local[t] >= 0
            edges.append(local[t[mask]].tolist())
            probs.append(self.edge_probs(s)[mask])
        a = None if self.assignments is None else self.assignments[keep]
        sub = GameGraph.from_lists(self.kinds[keep], edges, self.rewards[keep], probs,
                                   self.schema, a, check=False)
        return sub, keep


def _renormalize(g: GameGraph):
    src = np.repeat(np.arange(g.n_states), np.diff(g.indptr))
    prob_edge = g.kinds[src] == K.PROB
    sums = np.bincount(src[prob_edge], weights=g.probs[prob_edge], minlength=g.n_states)
    fix = (g.kinds == K.PROB) & (np.abs(sums - 1.0) > _NOISE_TOL)
    if fix.any():
        e = fix[src]
        g.probs[e] /= sums[src[e]]


def validate(graph: GameGraph) -> ValidationResult:
    """Collect every violation of the model assumptions, in state order."""
    out = []
    n = graph.n_states
    kinds = graph.kinds
    deg = np.diff(graph.indptr)
    src = np.repeat(np.arange(n), deg)
    tg = graph.targets
    for s in np.flatnonzero((kinds != K.P1) & (kinds != K.P2) & (kinds != K.PROB)):
        out.append(Violation(int(s), "UnknownKind", str(int(kinds[s]))))
    for s in np.flatnonzero(deg == 0):
        out.append(Violation(int(s), "EmptySuccessorSet"))
    dangling = (tg < 0) | (tg >= n)
    for e in np.flatnonzero(dangling):
        out.append(Violation(int(src[e]), "DanglingEdge", f"target {int(tg[e])}"))
    if tg.size:
        key = np.sort(src * (n + 1) + np.clip(tg, -1, n))
        for k in np.unique(key[1:][np.diff(key) == 0]):
            out.append(Violation(int(k // (n + 1)), "DuplicateSuccessor"))
    prob_edge = kinds[src] == K.PROB
    p = graph.probs
    nonpos = prob_edge & ~(p > 0)
    for s in np.unique(src[nonpos]):
        vals = p[graph.indptr[s]:graph.indptr[s + 1]]
        out.append(Violation(int(s), "NegativeProbability", f"{vals[~(vals > 0)].tolist()}"))
    sums = np.bincount(src[prob_edge], weights=p[prob_edge], minlength=n)
    off = (kinds == K.PROB) & (deg > 0) & (np.abs(sums - 1.0) > PROB_TOL)
    off[np.unique(src[nonpos])] = False
    for s in np.flatnonzero(off):
        total = math.fsum(graph.edge_probs(s).tolist())
        if abs(total - 1.0) > PROB_TOL:
            out.append(Violation(int(s), "BadDistribution", f"sum {total!r}"))
    for s in np.flatnonzero(~np.isfinite(graph.rewards)):
        out.append(Violation(int(s), "NonFiniteReward"))
    out.sort(key=lambda v: v.state)
    if graph.assignments is not None:
        try:
            codes = graph.schema.encode(graph.assignments)
        except ValueError as exc:
            out.append(Violation(-1, "BadAssignment", str(exc)))
        else:
            if np.unique(codes).shape[0] != n:
                out.append(Violation(-1, "BadAssignment", "assignments are not unique"))
    return ValidationResult(tuple(out))


def _as_valuation(graph: GameGraph, v) -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != graph.n_states:
        raise DimensionMismatch(f"valuation has {v.shape} entries, graph has {graph.n_states} states")
    return v


def pre(graph: GameGraph, v) -> np.ndarray:
    """max over successors at player-1 states, min at player-2, expectation at random ones."""
    v = _as_valuation(graph, v)
    out = np.empty(graph.n_states)
    return K.reduce_edges(graph.indptr, graph.kinds, graph.probs, v[graph.targets], out)


def discounted_update(graph: GameGraph, v, beta: float) -> np.ndarray:
    return (1.0 - beta) * graph.rewards + beta * pre(graph, v)


def residual_tolerance(graph: GameGraph, beta: float, eps_float: float) -> float:
    """eps_float, or the tight stand-in for an exact fixpoint when it is 0.

    The stand-in never goes below a few ulps of the largest value magnitude.
    """
    if eps_float > 0:
        return eps_float
    q = graph.max_abs_reward
    return max(EXACT_RESIDUAL, 8 * np.finfo(float).eps * q)


def value_iteration_discounted(graph: GameGraph, beta: float, eps_float: float = 0.0,
                               max_sweeps: int = 1_000_000, v0=None):
    """Jacobi iteration of v <- (1-beta) r + beta Pre(v) from v = 0.

    Returns (v, sweeps); stops at the first sweep whose sup-norm step is
    within eps_float (1e-14 when eps_float is 0).
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    if eps_float < 0:
        raise ValueError("eps_float must be >= 0")
    tol = residual_tolerance(graph, beta, eps_float)
    v = np.zeros(graph.n_states) if v0 is None else _as_valuation(graph, v0).copy()
    w = np.empty_like(v)
    sweeps, res = K.vi_discounted(graph.indptr, graph.targets, graph.probs, graph.kinds,
                                  graph.rewards, beta, tol, max_sweeps, v, w)
    if res > tol:
        raise NoConvergence(f"value iteration: {sweeps} sweeps", res)
    return v, int(sweeps)


def exact_discounted_oracle(graph: GameGraph, beta: float, with_bound: bool = False):
    """Discounted value to residual 1e-14.

    The error bound beta/(1-beta) * residual is certified from the
    contraction property; ``with_bound`` returns it alongside the values.
    """
    v, _ = value_iteration_discounted(graph, beta, 0.0)
    res = float(np.max(np.abs(discounted_update(graph, v, beta) - v))) if graph.n_states else 0.0
    bound = beta / (1.0 - beta) * res
    return (v, bound) if with_bound else v


def relative_value_iteration(graph: GameGraph, c: float, k: int):
    """k+1 steps of v <- r - c + Pre(v) from v = c; verdict on the last iterate."""
    if k < 1:
        raise ValueError("k must be >= 1")
    v = np.empty(graph.n_states)
    w = np.empty(graph.n_states)
    K.rvi_run(graph.indptr, graph.targets, graph.probs, graph.kinds, graph.rewards,
              float(c), k + 1, v, w)
    return verdict_of(v, c), v


def verdict_of(values, c: float) -> DivergenceVerdict:
    if np.min(values) > c:
        return DivergenceVerdict.PLUS
    if np.max(values) < c:
        return DivergenceVerdict.MINUS
    return DivergenceVerdict.UNKNOWN


# ---------------------------------------------------------------------------
# file format


def _state_line(text: str, index: int):
    """Best-effort line number of the ``index``-th state object in ``text``."""
    count = -1
    for lineno, line in enumerate(text.splitlines(), start=1):
        count += len(re.findall(r'"kind"\s*:', line))
        if count >= index:
            return lineno
    return None


def parse_game(text: str) -> GameGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.lineno, exc.msg) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("states"), list):
        raise ParseError(1, "top level must be an object with a 'states' array")
    states = doc["states"]
    n = len(states)
    kinds, edges, probs, rewards, assignments = [], [], [], [], []
    variables = doc.get("variables")
    schema = None
    if variables is not None:
        try:
            schema = VariableSchema(tuple((v["name"], v["domain_size"]) for v in variables))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(1, f"bad 'variables': {exc}") from None
    for i, st in enumerate(states):
        try:
            if st["id"] != i:
                raise ParseError(_state_line(text, i), f"state ids must be dense and ordered; got {st['id']} at {i}")
            kind = _KIND_CODES.get(st["kind"])
            if kind is None:
                raise ParseError(_state_line(text, i), f"unknown kind {st['kind']!r}")
            kinds.append(kind)
            rewards.append(float(st["reward"]))
            succ, ps = [], []
            for e in st["edges"]:
                succ.append(int(e["to"]))
                if kind == StateKind.PROBABILISTIC:
                    if "prob" not in e:
                        raise ParseError(_state_line(text, i), f"state {i}: probabilistic edge without 'prob'")
                    ps.append(float(e["prob"]))
                elif "prob" in e:
                    raise ParseError(_state_line(text, i), f"state {i}: 'prob' on a player-state edge")
            edges.append(succ)
            probs.append(ps if kind == StateKind.PROBABILISTIC else None)
            if schema is not None:
                assignments.append([int(a) for a in st["assignment"]])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(_state_line(text, i), f"state {i}: malformed ({exc!r})") from None
    a = np.asarray(assignments, dtype=np.int64).reshape(n, -1) if schema is not None else None
    return GameGraph.from_lists(kinds, edges, rewards, probs, schema, a,
                                meta=doc.get("meta") or {}, check=True)



def serialize_game(graph: GameGraph) -> str:
    """Canonical text: one state per line, floats written with repr (bit-exact)."""
    lines = ['{"states": [']
    n = graph.n_states
    for s in range(n):
        kind = StateKind(int(graph.kinds[s]))
        succ = graph.successors(s).tolist()
        if kind == StateKind.PROBABILISTIC:
            es = [{"to": t, "prob": float(p)} for t, p in zip(succ, graph.edge_probs(s).tolist())]
        else:
            es = [{"to": t} for t in succ]
        obj = {"id": s, "kind": _KIND_NAMES[kind], "reward": float(graph.rewards[s]), "edges": es}
        if graph.assignments is not None:
            obj["assignment"] = graph.assignments[s].tolist()
        lines.append(json.dumps(obj) + ("," if s < n - 1 else ""))
    tail = "]"
    if graph.schema is not None:
        tail += ',\n"variables": ' + json.dumps(
            [{"name": nm, "domain_size": sz} for nm, sz in graph.schema.variables])
    tail += ',\n"meta": ' + json.dumps(graph.meta, sort_keys=True) + "}\n"
    lines.append(tail)
    return "\n".join(lines)


def load_game(path) -> GameGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_game(fh.read())


def save_game(graph: GameGraph, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_game(graph))
