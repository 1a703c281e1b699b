"""Benchmark model generators and random games.

Rewards live on states, so choices with their own outcome (a move with a
risk of falling into the sink, a manufacturing decision, a collision) are
modelled through intermediate probabilistic states.  Every generator records
the count of "core" states (the model's own state tuples) and of all states
in ``meta["generator"]``; ``*_counts`` return the same figures in closed form.

Graphs are assembled directly as CSR arrays so instances with millions of
states build in seconds.
"""
from __future__ import annotations

import numpy as np

from .errors import ParamOutOfRange, StateSpaceTooLarge
from .game import GameGraph, StateKind
from .partition import VariableSchema

P1 = int(StateKind.PLAYER1)
P2 = int(StateKind.PLAYER2)
PROB = int(StateKind.PROBABILISTIC)


def _csr(n, src, tgt, prob):
    """CSR arrays from an edge list; parallel edges are merged (probabilities added)."""
    src = np.asarray(src, dtype=np.int64)
    tgt = np.asarray(tgt, dtype=np.int64)
    prob = np.asarray(prob, dtype=np.float64)
    key = src * n + tgt
    uniq, inv = np.unique(key, return_inverse=True)
    merged = np.bincount(inv, weights=prob, minlength=uniq.shape[0])
    s = uniq // n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, s + 1, 1)
    return np.cumsum(indptr), uniq % n, merged


def _graph(kinds, src, tgt, prob, rewards, schema, assignments, meta) -> GameGraph:
    n = kinds.shape[0]
    indptr, targets, probs = _csr(n, src, tgt, prob)
    probs[kinds[np.repeat(np.arange(n), np.diff(indptr))] != PROB] = 0.0
    return GameGraph(kinds, indptr, targets, probs, rewards, schema, assignments, meta)


def _meta(model, params, core, total, locality, seed=None):
    return {"generator": {"model": model, "params": params, "seed": seed,
                          "core_states": int(core), "total_states": int(total),
                          "locality": locality}}


# ---------------------------------------------------------------------------
# planning


def planning_counts(n: int) -> tuple[int, int]:
    """(core, total): grid cells plus sink, and that plus one entry state per cell."""
    return n * n + 1, 2 * n * n + 1


def mine_probability(n: int, mines, p_max: float = 0.9) -> np.ndarray:
    """p(x, y) = min(sum over mines of 1 / (1 + manhattan distance)^2, p_max), shape (n, n)."""
    xs = np.arange(n)
    p = np.zeros((n, n))
    for mx, my in mines:
        d = np.abs(xs - mx)[:, None] + np.abs(xs - my)[None, :]
        p += 1.0 / (1.0 + d) ** 2
    return np.minimum(p, p_max)


def gen_planning(n: int, m: int | None = None, seed: int = 0, p_max: float = 0.9,
                 charger_spacing: int | None = None, charge: float = 0.1,
                 move_cost: float = 0.005, chargers: str = "lattice") -> GameGraph:
    """Robot on an n x n grid with m mines and an absorbing sink.

    Cell (x, y) is a player-1 state choosing a direction; moving into a cell
    passes through that cell's entry state, which reaches the cell with
    probability 1 - p(cell) and the sink otherwise.  Moves into the border
    stay put.  Chargers pay ``charge``; other cells cost ``move_cost``.  With
    ``chargers="lattice"`` they sit on a lattice with ``charger_spacing``
    (default n // 2); ``"diagonal"`` puts one on every cell with
    (x + y) % charger_spacing == 0 (default spacing 7).  The default reward
    magnitudes keep the value range near 10 * eps_abs for eps_abs = 0.01.

    Ids: cell x*n + y, entry n*n + x*n + y, sink 2*n*n.
    """
    if n < 2:
        raise ParamOutOfRange("planning: n must be >= 2")
    if m is None:
        m = max(1, n // 8)
    if not 0 <= m < n * n:
        raise ParamOutOfRange("planning: need 0 <= m < n*n")
    if not 0.0 <= p_max < 1.0:
        raise ParamOutOfRange("planning: p_max must lie in [0, 1)")
    if chargers not in ("lattice", "diagonal"):
        raise ParamOutOfRange("planning: chargers must be 'lattice' or 'diagonal'")
    default_spacing = max(2, n // 2) if chargers == "lattice" else 7
    spacing = charger_spacing if charger_spacing is not None else default_spacing
    if spacing < 1:
        raise ParamOutOfRange("planning: charger_spacing must be >= 1")
    rng = np.random.default_rng(seed)
    flat = rng.choice(n * n, size=m, replace=False) if m else np.empty(0, dtype=np.int64)
    mines = [(int(c) // n, int(c) % n) for c in np.sort(flat)]
    p = mine_probability(n, mines, p_max)

    nn = n * n
    sink = 2 * nn
    total = 2 * nn + 1
    x, y = np.divmod(np.arange(nn), n)
    kinds = np.full(total, P1, dtype=np.int8)
    kinds[nn:2 * nn] = PROB
    rewards = np.zeros(total)
    if chargers == "lattice":
        charger = (x % spacing == spacing // 2) & (y % spacing == spacing // 2)
    else:
        charger = (x + y) % spacing == 0
    rewards[:nn] = np.where(charger, charge, -move_cost)

    src, tgt, pr = [], [], []
    cell = np.arange(nn)
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        tx, ty = x + dx, y + dy
        ok = (tx >= 0) & (tx < n) & (ty >= 0) & (ty < n)
        src.append(cell)
        tgt.append(np.where(ok, nn + np.clip(tx, 0, n - 1) * n + np.clip(ty, 0, n - 1), cell))
        pr.append(np.zeros(nn))
    entry = nn + cell
    pf = p.ravel()
    src += [entry, entry[pf > 0], [sink]]
    tgt += [cell, np.full(int((pf > 0).sum()), sink), [sink]]
    pr += [1.0 - pf, pf[pf > 0], [0.0]]

    assign = np.zeros((total, 4), dtype=np.int64)
    assign[:nn, 2], assign[:nn, 3] = x, y
    assign[nn:2 * nn, 0], assign[nn:2 * nn, 2], assign[nn:2 * nn, 3] = 1, x, y
    assign[sink] = (0, 1, 0, 0)
    schema = VariableSchema((("phase", 2), ("sink", 2), ("x", n), ("y", n)))
    params = {"n": n, "m": m, "p_max": p_max, "chargers": chargers, "charger_spacing": spacing,
              "charge": charge, "move_cost": move_cost}
    meta = _meta("planning", params, nn + 1, total, {"x": 1, "y": 1}, seed)
    meta["mines"] = [list(c) for c in mines]
    return _graph(kinds, np.concatenate(src), np.concatenate(tgt), np.concatenate(pr),
                  rewards, schema, assign, meta)


# ---------------------------------------------------------------------------
# inventory


def inventory_counts(n_max: int, t_max: int, nc: int) -> tuple[int, int]:
    core = (n_max + 1) * (t_max + 1)
    choices = 2 if nc > 0 else 1
    return core, core + choices * (n_max + 1) * t_max


def gen_inventory(n_max: int, t_max: int, nc: int = 4, sold_min: int = 0, sold_max: int = 4,
                  price: float = 0.01, cost: float = 0.005) -> GameGraph:
    """Stock level n over periods t.

    At <n, t> the player skips or manufactures nc units (capped at n_max);
    the choice state then sells min(sold, stock) units with sold uniform on
    [sold_min, sold_max] and moves to period t + 1.  A choice state's reward
    is price times the expected units sold, minus cost * nc when
    manufacturing.  Period t_max absorbs with reward 0.
    """
    if n_max < 0 or t_max < 0 or nc < 0:
        raise ParamOutOfRange("inventory: n_max, t_max and nc must be >= 0")
    if not 0 <= sold_min <= sold_max <= n_max:
        raise ParamOutOfRange("inventory: need 0 <= sold_min <= sold_max <= n_max")
    core, total = inventory_counts(n_max, t_max, nc)
    N, T = n_max + 1, t_max + 1
    n_of, t_of = np.divmod(np.arange(core), T)

    def core_id(nv, tv):
        return nv * T + tv

    choices = [(0, 1)] + ([(nc, 2)] if nc > 0 else [])
    kinds = np.full(total, P1, dtype=np.int8)
    rewards = np.zeros(total)
    assign = np.zeros((total, 3), dtype=np.int64)
    assign[:core, 1], assign[:core, 2] = n_of, t_of
    live = np.flatnonzero(t_of < t_max)
    src, tgt, pr = [np.flatnonzero(t_of == t_max)], [np.flatnonzero(t_of == t_max)], [np.zeros(N)]
    sold = np.arange(sold_min, sold_max + 1)
    q = 1.0 / sold.shape[0]
    base = core
    for made, node in choices:
        ids = base + np.arange(live.shape[0])
        base += live.shape[0]
        kinds[ids] = PROB
        assign[ids, 0], assign[ids, 1], assign[ids, 2] = node, n_of[live], t_of[live]
        stock = np.minimum(n_of[live] + made, n_max)
        src.append(live)
        tgt.append(ids)
        pr.append(np.zeros(live.shape[0]))
        expected = np.zeros(live.shape[0])
        for k in sold:
            actual = np.minimum(k, stock)
            expected += q * actual
            src.append(ids)
            tgt.append(core_id(stock - actual, t_of[live] + 1))
            pr.append(np.full(live.shape[0], q))
        rewards[ids] = price * expected - (cost * nc if made else 0.0)
    schema = VariableSchema((("node", 3), ("n", N), ("t", T)))
    params = {"n_max": n_max, "t_max": t_max, "nc": nc, "sold_min": sold_min,
              "sold_max": sold_max, "price": price, "cost": cost}
    meta = _meta("inventory", params, core, total, {"n": max(sold_max, nc), "t": 1})
    return _graph(kinds, np.concatenate(src), np.concatenate(tgt), np.concatenate(pr),
                  rewards, schema, assign, meta)


# ---------------------------------------------------------------------------
# machine replacement


def machine_counts(n: int, tm: int) -> tuple[int, int]:
    core = n * (tm + 1)
    return core, core + n * tm + tm


def gen_machine(n: int, tm: int, replace_cost: float = 0.05, earn_slope: float = 0.1,
                p_degrade: float = 0.3) -> GameGraph:
    """Machine condition w in [0, n-1] over time t in [0, tm].

    <w, t> earns earn_slope * w / (n - 1) and either keeps the machine (it
    degrades to w - 1 with probability p_degrade, floor 0) or passes through
    the period's replace state (reward -replace_cost) to <n-1, t+1>.
    Time tm absorbs with reward 0.
    """
    if n < 2 or tm < 1:
        raise ParamOutOfRange("machine: need n >= 2 and tm >= 1")
    if not 0.0 < p_degrade < 1.0:
        raise ParamOutOfRange("machine: p_degrade must lie in (0, 1)")
    core, total = machine_counts(n, tm)
    T = tm + 1
    w_of, t_of = np.divmod(np.arange(core), T)
    kinds = np.full(total, P1, dtype=np.int8)
    rewards = np.zeros(total)
    live = t_of < tm
    rewards[:core] = np.where(live, earn_slope * w_of / (n - 1), 0.0)
    assign = np.zeros((total, 3), dtype=np.int64)
    assign[:core, 1], assign[:core, 2] = w_of, t_of
    lv = np.flatnonzero(live)
    keep = core + np.arange(lv.shape[0])
    rep = core + lv.shape[0] + np.arange(tm)
    kinds[keep] = PROB
    assign[keep, 0], assign[keep, 1], assign[keep, 2] = 1, w_of[lv], t_of[lv]
    assign[rep, 0], assign[rep, 2] = 2, np.arange(tm)
    rewards[rep] = -replace_cost
    dead = np.flatnonzero(~live)
    wl, tl = w_of[lv], t_of[lv]
    down = wl > 0
    src = [dead, lv, lv, keep, keep[down], rep]
    tgt = [dead, keep, rep[tl], wl * T + tl + 1, (wl[down] - 1) * T + tl[down] + 1,
           (n - 1) * T + np.arange(tm) + 1]
    pr = [np.zeros(dead.shape[0]), np.zeros(lv.shape[0]), np.zeros(lv.shape[0]),
          np.where(down, 1.0 - p_degrade, 1.0), np.full(int(down.sum()), p_degrade), np.zeros(tm)]
    schema = VariableSchema((("node", 3), ("w", n), ("t", T)))
    params = {"n": n, "tm": tm, "replace_cost": replace_cost, "earn_slope": earn_slope,
              "p_degrade": p_degrade}
    meta = _meta("machine", params, core, total, {"w": n - 1, "t": 1})
    return _graph(kinds, np.concatenate(src), np.concatenate(tgt), np.concatenate(pr),
                  rewards, schema, assign, meta)


# ---------------------------------------------------------------------------
# network protocol


def network_counts(n_comp: int, M: int, t_max: int) -> tuple[int, int]:
    core = (M + 1) ** n_comp * 2 * (t_max + 1)
    crowded = (M + 1) ** n_comp - 1 - n_comp * M
    return core, core + crowded * t_max


def gen_network(n_comp: int, M: int, t_max: int, cap: int = 1 << 24) -> GameGraph:
    """Shared channel: computer i has delivered pk_i <= M packets.

    At an idle frame (busy = 0) the controller lets nobody send, lets one
    computer with pk_i < M send (delivery, then one busy frame worth +1), or
    lets several send at once: the collision state backs off for 1 or 2
    frames with equal probability and nothing changes.  Time t_max absorbs
    with reward 0.
    """
    if n_comp < 1 or M < 1 or t_max < 1:
        raise ParamOutOfRange("network: need n_comp >= 1, M >= 1, t_max >= 1")
    core, total = network_counts(n_comp, M, t_max)
    if total > cap:
        raise StateSpaceTooLarge(f"network: {total} states exceed cap {cap}")
    B = M + 1
    T = t_max + 1
    n_pk = B ** n_comp
    pk_idx = np.arange(n_pk)
    digits = np.stack([(pk_idx // B ** (n_comp - 1 - i)) % B for i in range(n_comp)], axis=1)
    active = (digits < M).sum(axis=1)

    def cid(p, busy, t):
        return (p * 2 + busy) * T + t

    p_of, rest = np.divmod(np.arange(core), 2 * T)
    busy_of, t_of = np.divmod(rest, T)
    kinds = np.full(total, P1, dtype=np.int8)
    rewards = np.where((busy_of == 1) & (t_of < t_max), 1.0, 0.0)
    rewards = np.concatenate([rewards, np.zeros(total - core)])
    assign = np.zeros((total, n_comp + 3), dtype=np.int64)
    assign[:core, 1:n_comp + 1] = digits[p_of]
    assign[:core, n_comp + 1], assign[:core, n_comp + 2] = busy_of, t_of

    src, tgt, pr = [], [], []
    end = np.flatnonzero(t_of == t_max)
    src.append(end), tgt.append(end), pr.append(np.zeros(end.shape[0]))
    busy = np.flatnonzero((busy_of == 1) & (t_of < t_max))
    src.append(busy), tgt.append(cid(p_of[busy], 0, t_of[busy] + 1))
    pr.append(np.zeros(busy.shape[0]))
    idle = np.flatnonzero((busy_of == 0) & (t_of < t_max))
    ip, it = p_of[idle], t_of[idle]
    src.append(idle), tgt.append(cid(ip, 0, it + 1)), pr.append(np.zeros(idle.shape[0]))
    for i in range(n_comp):
        can = digits[ip, i] < M
        step = B ** (n_comp - 1 - i)
        src.append(idle[can]), tgt.append(cid(ip[can] + step, 1, it[can] + 1))
        pr.append(np.zeros(int(can.sum())))
    crowded = idle[active[ip] >= 2]
    col = core + np.arange(crowded.shape[0])
    kinds[col] = PROB
    assign[col] = assign[crowded]
    assign[col, 0] = 1
    cp, ct = p_of[crowded], t_of[crowded]
    src += [crowded, col, col]
    tgt += [col, cid(cp, 0, ct + 1), cid(cp, 0, np.minimum(ct + 2, t_max))]
    pr += [np.zeros(col.shape[0]), np.full(col.shape[0], 0.5), np.full(col.shape[0], 0.5)]
    names = [(f"pk{i + 1}", B) for i in range(n_comp)]
    schema = VariableSchema(tuple([("node", 2)] + names + [("busy", 2), ("t", T)]))
    params = {"n_comp": n_comp, "M": M, "t_max": t_max}
    meta = _meta("network", params, core, total,
                 {**{f"pk{i + 1}": 1 for i in range(n_comp)}, "t": 2})
    return _graph(kinds, np.concatenate(src), np.concatenate(tgt), np.concatenate(pr),
                  rewards, schema, assign, meta)


# ---------------------------------------------------------------------------
# random games


def random_game(n: int, seed=None, kinds=(P1, P2, PROB), max_degree: int = 3,
                strongly_connected: bool = False, reward_range=(-1.0, 1.0),
                self_loops: bool = True) -> GameGraph:
    """Random valid game on n states.

    With ``strongly_connected`` every state also gets an edge along a random
    Hamiltonian cycle.
    """
    rng = np.random.default_rng(seed)
    if n < 1:
        raise ParamOutOfRange("random game needs n >= 1")
    kind = rng.choice(np.asarray(kinds), size=n)
    cycle_next = np.empty(n, dtype=np.int64)
    perm = rng.permutation(n)
    cycle_next[perm] = np.roll(perm, -1)
    edges, probs = [], []
    for s in range(n):
        deg = int(rng.integers(1, min(max_degree, n) + 1))
        pool = np.arange(n) if self_loops else np.delete(np.arange(n), s)
        if pool.size == 0:
            pool = np.array([s])
        succ = rng.choice(pool, size=min(deg, pool.size), replace=False).tolist()
        if strongly_connected and int(cycle_next[s]) not in succ:
            succ[-1] = int(cycle_next[s])
        edges.append(sorted(set(succ)))
        w = rng.random(len(edges[-1])) + 0.05
        probs.append((w / w.sum()).tolist() if kind[s] == PROB else None)
    lo, hi = reward_range
    rewards = rng.uniform(lo, hi, size=n)
    return GameGraph.from_lists(kind.tolist(), edges, rewards, probs)


GENERATORS = {
    "planning": gen_planning,
    "inventory": gen_inventory,
    "machine": gen_machine,
    "network": gen_network,
    "random": random_game,
}


def generate(model: str, **params) -> GameGraph:
    try:
        gen = GENERATORS[model]
    except KeyError:
        raise ParamOutOfRange(f"unknown model {model!r}; known: {sorted(GENERATORS)}") from None
    return gen(**params)
