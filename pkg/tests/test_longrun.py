import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import P1, P2, PROB, games, multi_mec_mdp
from mla.errors import NotAnMdp
from mla.game import DivergenceVerdict, GameGraph, relative_value_iteration
from mla.longrun import (LongRunConfig, _quotient, check_divergence, check_uniform_value,
                         mag_iter2, mec_decomposition, mla_longrun, positive_reach_set,
                         quotient_reach_value, solve_mdp_longrun, vi_longrun)
from mla.models import random_game
from mla.mpre import HMode
from mla.partition import initial_partition

CFG = LongRunConfig(eps_abs=0.01)


def absorbing(r):
    return GameGraph.from_lists([P1], [[0]], [r])


# ---------------------------------------------------------------------------
# probes


def test_mag_iter2_examples():
    g = absorbing(3.0)
    tree = initial_partition(g, 0)
    assert mag_iter2(g, tree, 0, [2.0], 2.0, HMode.MAX, 4) == pytest.approx(7.0)
    for k in (1, 5, 40):
        assert mag_iter2(g, tree, 0, [2.0], 3.0, HMode.MIN, k) == 2.0
    with pytest.raises(ValueError):
        mag_iter2(g, tree, 0, [2.0], 3.0, HMode.MIN, 0)


@settings(max_examples=100)
@given(games(min_n=2, max_n=20, self_loops=False), st.floats(-1, 1), st.integers(1, 12))
def test_singleton_probes_reproduce_concrete_rvi(g, c, k):
    # without self-loops every successor of a singleton region is foreign
    tree = initial_partition(g, g.layout.total_bits)
    _, w = relative_value_iteration(g, c, k)
    for h in (HMode.MAX, HMode.MIN):
        _, v = check_divergence(g, tree, c, h, k)
        assert np.abs(v[tree.state_region] - w).max() <= 1e-12


def test_check_divergence_constant_rewards():
    g = random_game(30, seed=1, reward_range=(5.0, 5.0))
    tree = initial_partition(g)
    for h in (HMode.MAX, HMode.MIN):
        assert check_divergence(g, tree, 4.0, h, 1)[0] is DivergenceVerdict.PLUS
        assert check_divergence(g, tree, 6.0, h, 1)[0] is DivergenceVerdict.MINUS


def test_coarse_probe_undecided_then_singletons_decide():
    # cycle 0 -> 1 -> 2 -> 3 -> 0 with gain 5; at c = 4 the min-probe over
    # regions {0, 1}, {2, 3} reads the low region through its minimum and
    # misses the upward drift, which singleton regions see
    g = GameGraph.from_lists([P1] * 4, [[1], [2], [3], [0]], [10.0, 10.0, 0.0, 0.0])
    coarse = initial_partition(g, 1)
    assert check_divergence(g, coarse, 4.0, HMode.MIN, 3)[0] is not DivergenceVerdict.PLUS
    fine = initial_partition(g, 2)
    assert check_divergence(g, fine, 4.0, HMode.MIN, 3)[0] is DivergenceVerdict.PLUS
    assert relative_value_iteration(g, 4.0, 3)[0] is DivergenceVerdict.PLUS


@settings(max_examples=100)
@given(games(max_n=8, strongly_connected=True), st.floats(-1, 1), st.integers(1, 30),
       st.integers(0, 4))
def test_lemma2_probe_soundness(g, c, k, depth):
    if not check_uniform_value(g)[0]:
        return
    if oracles.strategy_count(g, P1) * oracles.strategy_count(g, P2) > 500:
        return
    gain = oracles.longrun_values(g)
    if np.ptp(gain) > 1e-9:
        return
    tree = initial_partition(g, min(depth, g.layout.total_bits))
    if check_divergence(g, tree, c, HMode.MIN, k)[0] is DivergenceVerdict.PLUS:
        assert c < gain[0] + 1e-9
    if check_divergence(g, tree, c, HMode.MAX, k)[0] is DivergenceVerdict.MINUS:
        assert c > gain[0] - 1e-9


# ---------------------------------------------------------------------------
# bisection


def test_equal_rewards_no_probes():
    rep = mla_longrun(random_game(20, seed=2, reward_range=(0.7, 0.7), strongly_connected=True))
    assert rep.c_lo == rep.c_hi == 0.7 and rep.probes == 0


def test_cycle_mean():
    n = 10
    g = GameGraph.from_lists([P1] * n, [[(s + 1) % n] for s in range(n)],
                             [0.0 if s % 2 else 10.0 for s in range(n)])
    rep = mla_longrun(g, CFG)
    assert rep.c_lo <= 5.0 <= rep.c_hi and rep.width <= 0.01
    assert rep.probes <= 2 * math.ceil(math.log2(10 / 0.01))


def test_config_validation():
    with pytest.raises(ValueError):
        LongRunConfig(eps_abs=0)
    with pytest.raises(ValueError):
        LongRunConfig(k=0)
    with pytest.raises(ValueError):
        LongRunConfig(ratio=1.5)


@settings(max_examples=60)
@given(games(min_n=2, max_n=10, kinds=(P1, PROB), strongly_connected=True))
def test_interval_invariant_and_narrowing(g):
    gain = oracles.longrun_values(g)[0]
    rep = mla_longrun(g, CFG)
    assert rep.c_lo - 1e-9 <= gain <= rep.c_hi + 1e-9 and rep.width <= 0.01
    widths = [hi - lo for lo, hi in rep.history]
    for lo, hi in rep.history:
        assert lo - 1e-9 <= gain <= hi + 1e-9
    assert all(b <= a for a, b in zip(widths, widths[1:]))


def test_concrete_fallback_and_vi_baseline():
    # one region per state leaves nothing to refine, so bisection goes concrete
    g = GameGraph.from_lists([P1, PROB, P1], [[1, 2], [0, 2], [0]], [1.0, 0.0, 4.0],
                             [None, [0.5, 0.5], None])
    gain = oracles.longrun_values(g)[0]
    rep = mla_longrun(g, LongRunConfig(eps_abs=1e-3, initial_depth=g.layout.total_bits, k=2))
    assert rep.c_lo <= gain <= rep.c_hi and rep.width <= 1e-3
    base = vi_longrun(g, LongRunConfig(eps_abs=1e-3))
    assert base.c_lo <= gain <= base.c_hi and base.space_metric == g.n_states


# ---------------------------------------------------------------------------
# uniform value


def test_positive_reach_examples():
    g = GameGraph.from_lists([P1, P1, P1, P2], [[1], [2], [2], [3, 2]], [0, 0, 0, 0])
    assert positive_reach_set(g, 1, 2) == {0, 1, 2}
    # player 2 at state 3 can stay away from 2 forever unless player 2 is the reacher
    assert positive_reach_set(g, 2, 2) == {0, 1, 2, 3}
    assert positive_reach_set(g, 1, 3) == {3}
    with pytest.raises(ValueError):
        positive_reach_set(g, 3, 0)


@settings(max_examples=150)
@given(games(max_n=7), st.integers(1, 2), st.integers(0, 6))
def test_positive_reach_matches_enumeration(g, player, t):
    t = t % g.n_states
    assert positive_reach_set(g, player, t) == oracles.reach_positive(g, player, t)


@settings(max_examples=150)
@given(games(max_n=15), st.integers(1, 2), st.integers(0, 14))
def test_positive_reach_fixpoint_laws(g, player, t):
    t = t % g.n_states
    own, opp = (P1, P2) if player == 1 else (P2, P1)
    x = positive_reach_set(g, player, t)

    def admits(s, inside):
        succ = set(g.successors(s).tolist())
        if g.kinds[s] == opp:
            return succ <= inside
        return bool(succ & inside)

    assert t in x
    assert all(not admits(s, x) for s in range(g.n_states) if s not in x)
    for s in x - {t}:
        # least: dropping s and re-closing from t must bring it back
        y = {t}
        grew = True
        while grew:
            grew = False
            for z in range(g.n_states):
                if z not in y and admits(z, y):
                    y.add(z)
                    grew = True
        assert s in y


def test_check_uniform_value_examples():
    n = 6
    cyc = GameGraph.from_lists([P1] * n, [[(s + 1) % n, (s + 3) % n] for s in range(n)],
                               np.arange(n, dtype=float))
    assert check_uniform_value(cyc) == (True, 0)
    two = GameGraph.from_lists([P1, P1], [[0], [1]], [0.0, 1.0])
    assert check_uniform_value(two) == (False, None)


def test_strongly_connected_game_without_uniform_value():
    # a (player 1) keeps the self-loop for gain 1, b (player 2) keeps it for 0
    g = GameGraph.from_lists([P1, P2], [[0, 1], [1, 0]], [1.0, 0.0])
    assert oracles.longrun_values(g).tolist() == [1.0, 0.0]
    assert check_uniform_value(g) == (False, None)


@settings(max_examples=100)
@given(games(max_n=7, strongly_connected=True))
def test_uniform_value_check_is_sound(g):
    if oracles.strategy_count(g, P1) * oracles.strategy_count(g, P2) > 2000:
        return
    if check_uniform_value(g)[0]:
        assert np.ptp(oracles.longrun_values(g)) <= 1e-9


@settings(max_examples=100)
@given(games(max_n=30, kinds=(P1, PROB), strongly_connected=True))
def test_strongly_connected_mdps_have_uniform_value(g):
    assert check_uniform_value(g)[0]


# ---------------------------------------------------------------------------
# end components and the MDP pipeline


def test_mec_examples():
    assert [ec.states.tolist() for ec in mec_decomposition(absorbing(1.0))] == [[0]]
    # cycles {0, 1} and {2, 3} joined by the one-way edge 1 -> 2
    g = GameGraph.from_lists([P1] * 4, [[1], [0, 2], [3], [2]], [0, 0, 0, 0])
    assert [ec.states.tolist() for ec in mec_decomposition(g)] == [[0, 1], [2, 3]]
    with pytest.raises(NotAnMdp):
        mec_decomposition(GameGraph.from_lists([P2], [[0]], [0.0]))


def test_mec_prunes_leaky_probabilistic_state():
    # 0 <-> 1 would be a cycle but 1 leaks to the absorbing 2 with positive probability
    g = GameGraph.from_lists([P1, PROB, P1], [[1], [0, 2], [2]], [0, 0, 0],
                             [None, [0.5, 0.5], None])
    assert [ec.states.tolist() for ec in mec_decomposition(g)] == [[2]]


@settings(max_examples=100)
@given(games(max_n=10, kinds=(P1, PROB)))
def test_mec_matches_subset_enumeration(g):
    got = {frozenset(ec.states.tolist()) for ec in mec_decomposition(g)}
    assert got == oracles.maximal_end_components(g)


def test_quotient_reach_examples():
    g = GameGraph.from_lists([PROB, P1, P1], [[1, 2], [1], [2]], [0, 0, 0],
                             [[0.5, 0.5], None, None])
    v = quotient_reach_value(g, {1: 0.0, 2: 10.0})
    assert v[0] == pytest.approx(5.0, abs=1e-8)
    assert np.all(quotient_reach_value(g, {1: 2.5, 2: 2.5}) == 2.5)


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_quotient_matches_enumeration(seed):
    mdp = multi_mec_mdp(np.random.default_rng(seed), max_n=8)
    comps = mec_decomposition(mdp)
    q, _, term0 = _quotient(mdp, comps)
    rng = np.random.default_rng(seed + 1)
    terminal = {term0 + i: float(rng.uniform(-1, 1)) for i in range(len(comps))}
    if oracles.strategy_count(q, P1) > 5000:
        return
    v = quotient_reach_value(q, terminal, eps=1e-12)
    assert np.abs(v - oracles.quotient_values(q, terminal)).max() <= 1e-8


def test_pipeline_two_absorbing_components():
    g = GameGraph.from_lists([P1, P1, P1], [[1, 2], [1], [2]], [0.0, 1.0, 3.0])
    rep = solve_mdp_longrun(g, CFG)
    assert rep.lo[0] <= 3.0 <= rep.hi[0] and rep.hi[0] - rep.lo[0] <= 0.01 + 1e-6
    assert [m["size"] for m in rep.mecs] == [1, 1]


def test_pipeline_single_component_reduces_to_bisection():
    g = random_game(12, seed=4, kinds=(P1, PROB), strongly_connected=True)
    rep = solve_mdp_longrun(g, CFG)
    direct = mla_longrun(g, CFG)
    assert len(rep.mecs) == 1
    assert rep.mecs[0]["lo"] == direct.c_lo and rep.mecs[0]["hi"] == direct.c_hi
    assert np.all(rep.lo == direct.c_lo) and np.all(rep.hi == direct.c_hi)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_pipeline_brackets_oracle(seed):
    mdp = multi_mec_mdp(np.random.default_rng(seed), max_n=9)
    if oracles.strategy_count(mdp, P1) > 3000:
        return
    gain = oracles.longrun_values(mdp)
    rep = solve_mdp_longrun(mdp, CFG)
    assert np.all(rep.lo - 1e-9 <= gain) and np.all(gain <= rep.hi + 1e-9)
    assert rep.width <= 0.01 + 1e-6
