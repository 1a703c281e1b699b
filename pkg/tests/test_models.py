import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import P1, PROB
from mla.discounted import DiscountedConfig, mla_discounted
from mla.errors import ParamOutOfRange, StateSpaceTooLarge
from mla.game import exact_discounted_oracle, serialize_game, validate
from mla.models import (gen_inventory, gen_machine, gen_network, gen_planning, generate,
                        inventory_counts, machine_counts, mine_probability, network_counts,
                        planning_counts, random_game)

BETA = 0.9


def generator_meta(g):
    return g.meta["generator"]


def assert_counts(g, counts):
    m = generator_meta(g)
    assert (m["core_states"], m["total_states"]) == counts
    assert g.n_states == m["total_states"]


def assert_local(g):
    """Every edge between non-sink states moves each variable within its bound."""
    names = [name for name, _ in g.schema.variables]
    bounds = generator_meta(g)["locality"]
    src = np.repeat(np.arange(g.n_states), np.diff(g.indptr))
    a, b = g.assignments[src], g.assignments[g.targets]
    keep = np.ones(src.shape[0], dtype=bool)
    if "sink" in names:
        col = names.index("sink")
        keep = (a[:, col] == 0) & (b[:, col] == 0)
    for var, bound in bounds.items():
        col = names.index(var)
        assert np.abs(a[keep, col] - b[keep, col]).max(initial=0) <= bound, var


# ---------------------------------------------------------------------------
# counts


@pytest.mark.parametrize("n", [2, 3, 17, 64])
def test_planning_counts_materialized(n):
    assert_counts(gen_planning(n), planning_counts(n))


@pytest.mark.parametrize("args", [(0, 1, 0), (5, 3, 2), (7, 9, 0), (63, 63, 4)])
def test_inventory_counts_materialized(args):
    n_max, t_max, nc = args
    g = gen_inventory(n_max, t_max, nc=nc, sold_max=min(4, n_max))
    assert_counts(g, inventory_counts(n_max, t_max, nc))


@pytest.mark.parametrize("args", [(2, 1), (5, 7), (63, 63)])
def test_machine_counts_materialized(args):
    assert_counts(gen_machine(*args), machine_counts(*args))


@pytest.mark.parametrize("args", [(1, 1, 1), (2, 2, 4), (3, 1, 3)])
def test_network_counts_materialized(args):
    assert_counts(gen_network(*args), network_counts(*args))


def test_network_cap():
    with pytest.raises(StateSpaceTooLarge):
        gen_network(4, 7, 100, cap=1000)


# ---------------------------------------------------------------------------
# structure


def test_planning_without_mines_is_deterministic():
    g = gen_planning(2, m=0)
    assert generator_meta(g)["core_states"] == 5
    assert np.all(mine_probability(2, []) == 0.0)
    for s in np.flatnonzero(g.kinds == PROB):
        assert g.edge_probs(s).tolist() == [1.0]


def test_mine_probability_law():
    p = mine_probability(5, [(0, 0), (4, 4)], p_max=0.9)
    assert p[0, 0] == 0.9
    assert p[2, 2] == pytest.approx(2 / 25)
    assert p[0, 1] == pytest.approx(1 / 4 + 1 / 64)


def test_frozen_inventory_is_worthless():
    g = gen_inventory(3, 5, nc=0, sold_min=0, sold_max=0, price=0.0, cost=0.0)
    assert np.all(exact_discounted_oracle(g, BETA) == 0.0)
    # a chain in t: the stock level never changes
    names = [name for name, _ in g.schema.variables]
    src = np.repeat(np.arange(g.n_states), np.diff(g.indptr))
    col = names.index("n")
    assert np.array_equal(g.assignments[src, col], g.assignments[g.targets, col])


def test_free_replacement_is_always_optimal():
    for n, tm in ((3, 2), (4, 3)):
        g = gen_machine(n, tm, replace_cost=0.0)
        v = exact_discounted_oracle(g, BETA)
        if oracles.strategy_count(g, P1) <= 5000:
            assert np.abs(v - oracles.discounted_values(g, BETA)).max() <= 1e-9
        core = generator_meta(g)["core_states"]
        for s in range(core):
            succ = g.successors(s)
            if succ.shape[0] == 2:
                keep, rep = succ
                assert v[rep] >= v[keep] - 1e-12
    g = gen_machine(8, 8, replace_cost=0.0)
    v = exact_discounted_oracle(g, BETA)
    T = 9
    _, t_of = np.divmod(np.arange(8 * T), T)
    # apart from this period's earnings every condition has the top state's value
    rest = v[:8 * T] - (1 - BETA) * g.rewards[:8 * T]
    for t in range(8):
        assert np.ptp(rest[t_of == t]) <= 1e-12


def test_single_computer_never_collides():
    g = gen_network(1, 3, 6)
    assert not np.any(g.kinds == PROB)
    # reward sits on the busy frame after a delivery: pk in 0..3, t < 6
    assert (g.rewards > 0).sum() == 4 * 6


def test_network_two_computers_bracketed():
    g = gen_network(2, 2, 4)
    v = exact_discounted_oracle(g, BETA)
    cfg = DiscountedConfig(eps_float=1e-6)
    lo, hi = mla_discounted(g, cfg).state_bounds()
    assert np.all(lo - cfg.delta <= v) and np.all(v <= hi + cfg.delta)


@pytest.mark.parametrize("g", [gen_planning(9, seed=3), gen_inventory(9, 6), gen_machine(7, 5),
                               gen_network(2, 3, 5)], ids=["planning", "inventory", "machine",
                                                           "network"])
def test_generated_graphs_valid_and_local(g):
    assert validate(g).ok
    assert_local(g)
    codes = g.schema.encode(g.assignments)
    assert np.unique(codes).shape[0] == g.n_states
    assert np.array_equal(g.schema.decode(codes), g.assignments)


@settings(max_examples=20)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_planning_deterministic_and_valid(n, seed):
    a, b = gen_planning(n, seed=seed), gen_planning(n, seed=seed)
    assert serialize_game(a) == serialize_game(b)
    assert validate(a).ok
    assert_local(a)


def test_charger_layouts():
    g = gen_planning(14, chargers="diagonal", charge=1.0, move_cost=0.05)
    cells = g.rewards[:14 * 14].reshape(14, 14)
    x, y = np.indices((14, 14))
    assert np.array_equal(cells == 1.0, (x + y) % 7 == 0)
    assert np.all(cells[(x + y) % 7 != 0] == -0.05)
    lat = gen_planning(8).rewards[:64].reshape(8, 8)
    assert np.flatnonzero(lat.ravel() > 0).tolist() == [2 * 8 + 2, 2 * 8 + 6, 6 * 8 + 2, 6 * 8 + 6]
    with pytest.raises(ParamOutOfRange):
        gen_planning(8, chargers="random")


def test_seed_moves_mines():
    a, b = gen_planning(16, seed=0), gen_planning(16, seed=1)
    assert a.meta["mines"] != b.meta["mines"]


def test_parameter_validation():
    with pytest.raises(ParamOutOfRange):
        gen_planning(1)
    with pytest.raises(ParamOutOfRange):
        gen_planning(4, m=16)
    with pytest.raises(ParamOutOfRange):
        gen_inventory(3, 3, sold_min=2, sold_max=1)
    with pytest.raises(ParamOutOfRange):
        gen_machine(1, 3)
    with pytest.raises(ParamOutOfRange):
        gen_network(0, 1, 1)
    with pytest.raises(ParamOutOfRange):
        generate("tetris")
    with pytest.raises(ParamOutOfRange):
        random_game(0)


def test_generate_dispatch():
    assert serialize_game(generate("machine", n=3, tm=2)) == serialize_game(gen_machine(3, 2))
