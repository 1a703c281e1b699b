"""Region partitions as binary decision trees over the state-variable bits.

Each state's variable assignment is packed into an integer code, most
significant bit first, variables in declaration order.  A leaf of the tree
fixes a prefix of that bit string, so once states are sorted by code every
region is a contiguous run of the sorted order.  The tree is stored as its
leaves in code order (the in-order traversal), which gives:

* ``region_of`` in O(log |R|) by bisection over the leaves' first codes,
* ``states_of`` as a slice,
* splitting on the next separating bit as a single ``searchsorted``.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import CannotRefine, DepthOutOfRange, StaleRegionId


@dataclass(frozen=True)
class VariableSchema:
    """Ordered integer variables; each expands to ceil(log2(domain)) bits."""

    variables: tuple

    def __post_init__(self):
        cleaned = []
        for name, size in self.variables:
            size = int(size)
            if size < 1:
                raise ValueError(f"variable {name!r}: domain_size must be >= 1")
            cleaned.append((str(name), size))
        object.__setattr__(self, "variables", tuple(cleaned))

    @classmethod
    def single(cls, n_states: int, name: str = "s") -> "VariableSchema":
        return cls(((name, max(1, n_states)),))

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.variables]

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple((size - 1).bit_length() for _, size in self.variables)

    @property
    def total_bits(self) -> int:
        return sum(self.widths)

    def bit_labels(self) -> list[str]:
        labels = []
        for (name, _), width in zip(self.variables, self.widths):
            labels.extend(f"{name}[{b}]" for b in range(width - 1, -1, -1))
        return labels

    def encode(self, assignments) -> np.ndarray:
        a = np.asarray(assignments, dtype=np.int64)
        if a.ndim == 1:
            a = a[None, :]
        if a.shape[1] != len(self.variables):
            raise ValueError(
                f"assignment has {a.shape[1]} entries, schema has {len(self.variables)}"
            )
        sizes = np.array([size for _, size in self.variables], dtype=np.int64)
        if np.any(a < 0) or np.any(a >= sizes):
            raise ValueError("assignment outside variable domain")
        if self.total_bits > 62:
            raise ValueError("schema needs more than 62 bits")
        codes = np.zeros(a.shape[0], dtype=np.int64)
        for j, width in enumerate(self.widths):
            codes = (codes << width) | a[:, j]
        return codes

    def decode(self, codes) -> np.ndarray:
        c = np.asarray(codes, dtype=np.int64).copy()
        out = np.zeros((c.shape[0], len(self.variables)), dtype=np.int64)
        for j in range(len(self.variables) - 1, -1, -1):
            width = self.widths[j]
            out[:, j] = c & ((1 << width) - 1)
            c >>= width
        return out


class StateLayout:
    """States sorted by code; shared by every partition of one graph."""

    def __init__(self, codes: np.ndarray, total_bits: int):
        codes = np.asarray(codes, dtype=np.int64)
        self.n_states = codes.shape[0]
        self.total_bits = total_bits
        self.codes = codes
        self.order = np.argsort(codes, kind="stable").astype(np.int64)
        self.sorted_codes = codes[self.order]
        if self.n_states > 1 and np.any(np.diff(self.sorted_codes) == 0):
            raise ValueError("state assignments are not unique")
        self.pos = np.empty(self.n_states, dtype=np.int64)
        self.pos[self.order] = np.arange(self.n_states, dtype=np.int64)

    @classmethod
    def of(cls, graph) -> "StateLayout":
        return graph.layout


_generation = 0


def _next_generation() -> int:
    global _generation
    _generation += 1
    return _generation


class PartitionTree:
    """Leaves of a bit-prefix decision tree, in code order.

    ``starts[i]:starts[i+1]`` is the slice of ``layout.order`` holding region
    ``i``; ``prefix_len[i]`` is the number of leading bits the leaf fixes.
    """

    def __init__(self, layout: StateLayout, starts, prefix_len):
        self.layout = layout
        self.starts = np.asarray(starts, dtype=np.int64)
        self.prefix_len = np.asarray(prefix_len, dtype=np.int64)
        self.generation = _next_generation()
        self._first_codes = layout.sorted_codes[self.starts[:-1]].tolist()

    def __len__(self) -> int:
        return self.starts.shape[0] - 1

    @property
    def n_regions(self) -> int:
        return len(self)

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.diff(self.starts)

    @property
    def max_region_size(self) -> int:
        return int(self.sizes.max())

    @cached_property
    def state_region(self) -> np.ndarray:
        """Region id of every state (structure index, not a valuation)."""
        lay = self.layout
        out = np.empty(lay.n_states, dtype=np.int64)
        out[lay.order] = np.repeat(np.arange(len(self), dtype=np.int64), self.sizes)
        return out

    def splittable(self) -> np.ndarray:
        return self.sizes > 1

    def prefix(self, x: int) -> str:
        lay = self.layout
        plen = int(self.prefix_len[x])
        if plen == 0:
            return "*"
        code = int(lay.sorted_codes[self.starts[x]])
        return format(code >> (lay.total_bits - plen), f"0{plen}b")

    def is_finer_than(self, other: "PartitionTree") -> bool:
        """Every region of ``self`` lies inside one region of ``other``."""
        if self.layout is not other.layout:
            return False
        inner = set(other.starts.tolist())
        return inner.issubset(set(self.starts.tolist()))


def _check_region(tree: PartitionTree, x) -> int:
    x = int(x)
    if x < 0 or x >= len(tree):
        raise StaleRegionId(f"region {x} not in partition of {len(tree)} regions")
    return x


def initial_partition(graph, depth: int | None = None) -> PartitionTree:
    """Complete tree over the first ``depth`` bits, empty leaves pruned.

    The default depth is half the schema's bits, rounded down.
    """
    lay = StateLayout.of(graph)
    total = lay.total_bits
    if depth is None:
        depth = total // 2
    if depth < 0 or depth > total:
        raise DepthOutOfRange(f"depth {depth} outside [0, {total}]")
    keys = lay.sorted_codes >> (total - depth) if depth > 0 else np.zeros_like(lay.sorted_codes)
    change = np.flatnonzero(np.diff(keys)) + 1
    starts = np.concatenate(([0], change, [lay.n_states])).astype(np.int64)
    return PartitionTree(lay, starts, np.full(starts.shape[0] - 1, depth, dtype=np.int64))


def region_of(tree: PartitionTree, s: int) -> int:
    code = int(tree.layout.codes[s])
    return bisect.bisect_right(tree._first_codes, code) - 1


def regions_of(tree: PartitionTree, states) -> np.ndarray:
    codes = tree.layout.codes[np.asarray(states, dtype=np.int64)]
    first = tree.layout.sorted_codes[tree.starts[:-1]]
    return np.searchsorted(first, codes, side="right").astype(np.int64) - 1


def states_of(tree: PartitionTree, x: int) -> np.ndarray:
    x = _check_region(tree, x)
    return np.sort(tree.layout.order[tree.starts[x]:tree.starts[x + 1]])


def _split_point(lay: StateLayout, lo: int, hi: int) -> tuple[int, int]:
    """Index splitting run [lo, hi) on its first separating bit, and the child prefix length."""
    first = int(lay.sorted_codes[lo])
    last = int(lay.sorted_codes[hi - 1])
    msb = (first ^ last).bit_length() - 1
    threshold = (last >> msb) << msb
    mid = lo + int(np.searchsorted(lay.sorted_codes[lo:hi], threshold))
    return mid, lay.total_bits - msb


def _split(tree: PartitionTree, chosen) -> tuple[PartitionTree, np.ndarray]:
    """Split the chosen leaves; returns the new tree and each new leaf's parent."""
    starts = tree.starts
    lay = tree.layout
    new_starts = [0]
    new_plen = []
    parent = []
    chosen = set(int(c) for c in chosen)
    for x in range(len(tree)):
        lo, hi = int(starts[x]), int(starts[x + 1])
        if x in chosen and hi - lo > 1:
            mid, plen = _split_point(lay, lo, hi)
            new_starts.extend((mid, hi))
            new_plen.extend((plen, plen))
            parent.extend((x, x))
        else:
            new_starts.append(hi)
            new_plen.append(int(tree.prefix_len[x]))
            parent.append(x)
    return PartitionTree(lay, new_starts, new_plen), np.asarray(parent, dtype=np.int64)


def split_regions_all(tree: PartitionTree, u_minus, u_plus, eps_abs: float):
    """Split every region whose imprecision u+ - u- exceeds ``eps_abs``.

    Children inherit the parent's bounds.  Raises CannotRefine when regions
    exceed the threshold but none of them can be split.
    """
    if eps_abs <= 0:
        raise ValueError("eps_abs must be positive")
    u_minus = np.asarray(u_minus, dtype=float)
    u_plus = np.asarray(u_plus, dtype=float)
    if u_minus.shape[0] != len(tree) or u_plus.shape[0] != len(tree):
        raise ValueError("valuations must cover every region")
    over = np.flatnonzero(u_plus - u_minus > eps_abs)
    if over.size == 0:
        return tree, u_minus.copy(), u_plus.copy()
    todo = over[tree.splittable()[over]]
    if todo.size == 0:
        raise CannotRefine(f"{over.size} region(s) above eps_abs are singletons")
    new_tree, parent = _split(tree, todo)
    return new_tree, u_minus[parent], u_plus[parent]


def split_regions_ratio(tree: PartitionTree, v_minus, v_plus, ratio: float) -> PartitionTree:
    """Split the ceil(ratio*|R|) splittable regions of largest imprecision.

    Ties go to the lower region id; at least one region is split whenever any
    is splittable.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    delta = np.asarray(v_plus, dtype=float) - np.asarray(v_minus, dtype=float)
    if delta.shape[0] != len(tree):
        raise ValueError("valuations must cover every region")
    candidates = np.flatnonzero(tree.splittable())
    if candidates.size == 0:
        raise CannotRefine("every region is a singleton")
    count = max(1, math.ceil(ratio * len(tree)))
    ranked = candidates[np.lexsort((candidates, -delta[candidates]))]
    new_tree, _ = _split(tree, ranked[:count])
    return new_tree


def space_metric(tree: PartitionTree) -> int:
    """Live numeric storage of the abstraction: 2|R| + max_x |x|."""
    return 2 * len(tree) + tree.max_region_size


def dump_partition(tree: PartitionTree, u_minus=None, u_plus=None) -> str:
    """One line per region: id, bit prefix, size, u-, u+."""
    lines = []
    for x in range(len(tree)):
        lo = "nan" if u_minus is None else repr(float(u_minus[x]))
        hi = "nan" if u_plus is None else repr(float(u_plus[x]))
        lines.append(f"{x} {tree.prefix(x)} {int(tree.sizes[x])} {lo} {hi}")
    return "\n".join(lines) + "\n"
