"""Independent reference computations for small graphs.

Everything here works from the plain successor lists by exhaustive
enumeration of pure memoryless strategies and dense linear algebra, sharing
no code with the solvers beyond the GameGraph container.
"""
from __future__ import annotations

import itertools

import networkx as nx
import numpy as np

P1, P2, PROB = 0, 1, 2


def lists(graph):
    kinds = graph.kinds.tolist()
    succ = [graph.successors(s).tolist() for s in range(graph.n_states)]
    probs = [graph.edge_probs(s).tolist() for s in range(graph.n_states)]
    return kinds, succ, probs, graph.rewards.tolist()


def strategies(graph, kind):
    """All pure memoryless choice maps for the states of ``kind``."""
    kinds, succ, _, _ = lists(graph)
    owned = [s for s in range(graph.n_states) if kinds[s] == kind]
    for picks in itertools.product(*[succ[s] for s in owned]):
        yield dict(zip(owned, picks))


def strategy_count(graph, kind):
    kinds, succ, _, _ = lists(graph)
    return int(np.prod([len(succ[s]) for s in range(graph.n_states) if kinds[s] == kind]))


def chain(graph, sigma, pi):
    """Transition matrix of the Markov chain induced by fixing both players."""
    kinds, succ, probs, _ = lists(graph)
    n = graph.n_states
    P = np.zeros((n, n))
    for s in range(n):
        if kinds[s] == PROB:
            for t, p in zip(succ[s], probs[s]):
                P[s, t] += p
        else:
            choice = sigma[s] if kinds[s] == P1 else pi[s]
            P[s, choice] = 1.0
    return P


def discounted_chain_value(P, r, beta):
    n = P.shape[0]
    return np.linalg.solve(np.eye(n) - beta * P, (1.0 - beta) * np.asarray(r))


def _maxmin(graph, per_chain):
    """Per state: max over player-1 strategies of min over player-2 strategies."""
    best = None
    for sigma in strategies(graph, P1):
        worst = None
        for pi in strategies(graph, P2):
            val = per_chain(chain(graph, sigma, pi))
            worst = val if worst is None else np.minimum(worst, val)
        best = worst if best is None else np.maximum(best, worst)
    return best


def discounted_values(graph, beta):
    r = graph.rewards
    return _maxmin(graph, lambda P: discounted_chain_value(P, r, beta))


def chain_gain(P, r):
    """Long-run average reward from every start state of a finite chain."""
    n = P.shape[0]
    r = np.asarray(r, dtype=float)
    g = nx.DiGraph()
    g.add_nodes_from(range(n))
    rows, cols = np.nonzero(P > 0)
    g.add_edges_from(zip(rows.tolist(), cols.tolist()))
    cond = nx.condensation(g)
    bottoms = [sorted(cond.nodes[c]["members"]) for c in cond.nodes if cond.out_degree(c) == 0]
    gain_of = np.zeros(len(bottoms))
    absorb = np.zeros((n, len(bottoms)))
    recurrent = np.zeros(n, dtype=bool)
    for i, members in enumerate(bottoms):
        sub = P[np.ix_(members, members)]
        m = len(members)
        # stationary distribution: pi (P - I) = 0, sum pi = 1
        A = np.vstack([(sub - np.eye(m)).T, np.ones(m)])
        b = np.zeros(m + 1)
        b[-1] = 1.0
        pi = np.linalg.lstsq(A, b, rcond=None)[0]
        gain_of[i] = pi @ r[members]
        absorb[members, i] = 1.0
        recurrent[members] = True
    tr = np.flatnonzero(~recurrent)
    if tr.size:
        Q = P[np.ix_(tr, tr)]
        Rm = P[np.ix_(tr, np.flatnonzero(recurrent))] @ absorb[recurrent]
        absorb[tr] = np.linalg.solve(np.eye(tr.size) - Q, Rm)
    return absorb @ gain_of


def longrun_values(graph):
    r = graph.rewards
    return _maxmin(graph, lambda P: chain_gain(P, r))


def reach_positive(graph, player, t):
    """States where ``player`` has a pure memoryless strategy that reaches t
    with positive probability against every pure memoryless opponent strategy."""
    kinds, succ, _, _ = lists(graph)
    n = graph.n_states
    own = P1 if player == 1 else P2
    opp = P2 if player == 1 else P1
    result = set()
    opp_strats = list(strategies(graph, opp))
    for sigma in strategies(graph, own):
        for s in range(n):
            if s in result:
                continue
            ok = True
            for pi in opp_strats:
                choice = {**sigma, **pi}
                seen = {s}
                stack = [s]
                while stack:
                    y = stack.pop()
                    nxt = succ[y] if kinds[y] == PROB else [choice[y]]
                    for z in nxt:
                        if z not in seen:
                            seen.add(z)
                            stack.append(z)
                if t not in seen:
                    ok = False
                    break
            if ok:
                result.add(s)
    return frozenset(result)


def is_end_component(graph, members) -> bool:
    kinds, succ, _, _ = lists(graph)
    c = set(members)
    if not c:
        return False
    for s in c:
        inside = [t for t in succ[s] if t in c]
        if not inside:
            return False
        if kinds[s] == PROB and len(inside) != len(succ[s]):
            return False
    g = nx.DiGraph()
    g.add_nodes_from(c)
    g.add_edges_from((s, t) for s in c for t in succ[s] if t in c)
    return nx.is_strongly_connected(g)


def maximal_end_components(graph):
    """Subset enumeration: end components not strictly inside another one."""
    n = graph.n_states
    ecs = []
    for mask in range(1, 1 << n):
        members = [s for s in range(n) if mask >> s & 1]
        if is_end_component(graph, members):
            ecs.append(frozenset(members))
    return {c for c in ecs if not any(c < d for d in ecs)}


def quotient_values(graph, terminal):
    """Max expected terminal value by enumeration; terminal states are absorbing."""
    kinds, succ, probs, _ = lists(graph)
    n = graph.n_states
    best = np.full(n, -np.inf)
    for sigma in strategies(graph, P1):
        P = np.zeros((n, n))
        b = np.zeros(n)
        for s in range(n):
            if s in terminal:
                b[s] = terminal[s]
                continue
            if kinds[s] == PROB:
                for t, p in zip(succ[s], probs[s]):
                    P[s, t] += p
            else:
                P[s, sigma[s]] = 1.0
        try:
            v = np.linalg.solve(np.eye(n) - P, b)
        except np.linalg.LinAlgError:
            continue
        best = np.maximum(best, v)
    return best
