import numpy as np
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from mla.game import GameGraph
from mla.models import random_game
from mla.partition import _split, initial_partition

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

P1, P2, PROB = 0, 1, 2


@st.composite
def games(draw, min_n=1, max_n=12, kinds=(P1, P2, PROB), max_degree=3, strongly_connected=False,
          self_loops=True):
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_game(n, seed=seed, kinds=kinds, max_degree=max_degree,
                       strongly_connected=strongly_connected, self_loops=self_loops)


def random_partition(graph, rng):
    """Initial partition at a random depth followed by a few random splits."""
    total = graph.layout.total_bits
    tree = initial_partition(graph, int(rng.integers(0, total + 1)))
    for _ in range(int(rng.integers(0, 3))):
        can = np.flatnonzero(tree.splittable())
        if can.size == 0:
            break
        pick = rng.choice(can, size=int(rng.integers(1, can.size + 1)), replace=False)
        tree, _ = _split(tree, pick)
    return tree


@st.composite
def game_partition_valuation(draw, max_n=12):
    g = draw(games(max_n=max_n))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    tree = random_partition(g, rng)
    v = rng.uniform(-2.0, 2.0, size=g.n_states)
    return g, tree, v, rng


def multi_mec_mdp(rng, max_n=10):
    """MDP whose maximal end components are 2-3 strongly connected blocks.

    Earlier blocks get one-way player-1 exits to later ones, and a few
    acyclic transient states sit in front.
    """
    n_blocks = int(rng.integers(2, 4))
    n_trans = int(rng.integers(1, 3))
    budget = max(n_blocks, max_n - n_trans)
    sizes = rng.multinomial(budget - n_blocks, np.ones(n_blocks) / n_blocks) + 1
    n = n_trans + int(sizes.sum())
    kinds, edges, probs = [None] * n, [None] * n, [None] * n
    rewards = rng.uniform(-1, 1, n)
    starts = n_trans + np.concatenate(([0], np.cumsum(sizes)))
    for i, size in enumerate(sizes.tolist()):
        b = random_game(size, seed=int(rng.integers(2**32)), kinds=(P1, PROB),
                        strongly_connected=True)
        for s in range(size):
            a = int(starts[i]) + s
            kinds[a] = int(b.kinds[s])
            edges[a] = (b.successors(s) + starts[i]).tolist()
            probs[a] = b.edge_probs(s).tolist() if kinds[a] == PROB else None
            rewards[a] = b.rewards[s]
    for i in range(n_blocks - 1):
        p1 = [a for a in range(starts[i], starts[i + 1]) if kinds[a] == P1]
        if p1:
            a = int(rng.choice(p1))
            edges[a] = sorted(set(edges[a]) | {int(starts[rng.integers(i + 1, n_blocks)])})
    for t in range(n_trans):
        later = np.arange(t + 1, n)
        k = int(rng.integers(1, min(3, later.size) + 1))
        edges[t] = sorted(rng.choice(later, size=k, replace=False).tolist())
        kinds[t] = int(rng.choice([P1, PROB]))
        probs[t] = rng.dirichlet(np.ones(k)).tolist() if kinds[t] == PROB else None
    return GameGraph.from_lists(kinds, edges, rewards, probs)
