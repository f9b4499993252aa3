"""Ground-truth counters and baseline miners.

* :func:`enumerate_exact` - exact ESU enumeration of connected k-node subsets.
* :func:`naive_enumerate` and the ``naive_*`` counters - brute-force references
  that share no code path with the fast counters.
* :func:`mine_mfinder` and :func:`mine_rand_esu` - sampling baselines.
* :class:`PerfectEmbedding` - exact count-vector order embedding used as an oracle.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from itertools import combinations, permutations
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .graph import (
    EXACT_CONFIRM_LIMIT,
    BudgetExceeded,
    CanonicalKey,
    Graph,
    connected_subsets,
    exact_isomorphic,
    weighted_growth,
)

DEFAULT_EXACT_K_LIMIT = 7
PERFECT_EMBEDDING_LIMIT = 5


class Classifier:
    """Assigns graphs to isomorphism classes (canonical key bucket + exact confirmation)."""

    def __init__(self):
        self.reps: list[Graph] = []
        self._buckets: dict[CanonicalKey, list[int]] = {}

    def classify(self, g: Graph) -> int:
        key = g.canonical_key()
        bucket = self._buckets.setdefault(key, [])
        for idx in bucket:
            if g.n > EXACT_CONFIRM_LIMIT or exact_isomorphic(self.reps[idx], g):
                return idx
        self.reps.append(g)
        bucket.append(len(self.reps) - 1)
        return len(self.reps) - 1

    def find(self, g: Graph) -> Optional[int]:
        for idx in self._buckets.get(g.canonical_key(), ()):
            if g.n > EXACT_CONFIRM_LIMIT or exact_isomorphic(self.reps[idx], g):
                return idx
        return None

    def __len__(self) -> int:
        return len(self.reps)


@dataclass
class MotifEntry:
    """One motif class: representative, count, sampling weight and per-anchor counts."""

    graph: Graph
    count: float
    weight: float = 1.0
    anchored_counts: dict[str, float] = field(default_factory=dict)

    @property
    def key(self) -> CanonicalKey:
        return self.graph.canonical_key()

    @property
    def size(self) -> int:
        return self.graph.n


@dataclass
class MotifTable:
    """Motif classes with counts; ``anchored`` marks tables keyed by anchored motifs."""

    k: int
    entries: list[MotifEntry]
    anchored: bool = False
    method: str = "exact"
    meta: dict = field(default_factory=dict)
    # anchored motif classes (graph, anchored frequency), filled by anchored counting
    anchored_entries: list[tuple[Graph, float]] = field(default_factory=list)

    def ranked(self) -> list[MotifEntry]:
        return sorted(self.entries, key=lambda e: (-e.count, e.key.digest))

    def anchored_ranking(self) -> list[tuple[Graph, float]]:
        """Anchored motifs by descending count (ties by key digest)."""
        if self.anchored_entries:
            items = self.anchored_entries
        else:
            items = [(e.graph, e.count) for e in self.entries if e.graph.anchor is not None]
        return sorted(items, key=lambda t: (-t[1], t[0].canonical_key().digest))

    def lookup(self, g: Graph) -> Optional[MotifEntry]:
        for e in self.entries:
            if e.key == g.canonical_key() and exact_isomorphic(e.graph, g):
                return e
        return None

    @property
    def total(self) -> float:
        return sum(e.count for e in self.entries)

    def to_csv(self, seed: Optional[int] = None) -> str:
        buf = io.StringIO()
        if seed is not None:
            buf.write(f"# method={self.method} k={self.k} seed={seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["canonical_key", "size", "count", "weight", "anchored_counts"])
        for e in self.ranked():
            w.writerow(
                [
                    e.key.digest,
                    e.size,
                    _fmt(e.count),
                    f"{e.weight:.6f}",
                    json.dumps({k: _num(v) for k, v in sorted(e.anchored_counts.items())}, sort_keys=True),
                ]
            )
        return buf.getvalue()


def _num(v: float):
    return int(v) if float(v).is_integer() else round(float(v), 6)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:.6f}"


class _PatternCache:
    """Classifies induced subgraphs, memoised on their labelled edge pattern.

    For a node tuple ``S`` the pattern is the set of position pairs that are
    adjacent. Equal patterns give equal unanchored classes and equal anchored
    classes position by position.
    """

    def __init__(self, anchored: bool):
        self.anchored = anchored
        self.plain = Classifier()
        self.rooted = Classifier()
        self._cache: dict[tuple, tuple[int, tuple[int, ...]]] = {}

    def classify(self, target: Graph, nodes: Sequence[int]) -> tuple[int, tuple[int, ...]]:
        adj = target.adj
        pattern = tuple(
            (i, j) for i, j in combinations(range(len(nodes)), 2) if nodes[j] in adj[nodes[i]]
        )
        hit = self._cache.get(pattern)
        if hit is not None:
            return hit
        g = Graph(len(nodes), pattern)
        cls = self.plain.classify(g)
        rooted: tuple[int, ...] = ()
        if self.anchored:
            rooted = tuple(self.rooted.classify(g.with_anchor(i)) for i in range(len(nodes)))
        self._cache[pattern] = (cls, rooted)
        return cls, rooted


def enumerate_exact(
    target: Graph,
    k: int,
    anchored: bool = True,
    k_limit: int = DEFAULT_EXACT_K_LIMIT,
) -> MotifTable:
    """Exact census of connected ``k``-node induced subgraphs via ESU.

    Entry counts are graph-level subset counts. With ``anchored`` each entry
    also carries the node-anchored frequency of every anchor orbit (keyed by
    the anchored graph's canonical digest), and ``anchored_entries`` lists the
    anchored classes with their frequencies.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if k > k_limit:
        raise BudgetExceeded(f"exact enumeration is limited to k <= {k_limit}; got k = {k}")
    cache = _PatternCache(anchored)
    counts: dict[int, int] = {}
    anchor_sets: dict[int, set[int]] = {}
    for sub in connected_subsets(target, k):
        cls, rooted = cache.classify(target, sub)
        counts[cls] = counts.get(cls, 0) + 1
        for pos, rc in enumerate(rooted):
            anchor_sets.setdefault(rc, set()).add(sub[pos])
    return _build_table(k, cache, counts, anchor_sets, anchored, "exact")


def _build_table(k, cache: _PatternCache, counts, anchor_sets, anchored, method) -> MotifTable:
    entries = []
    rooted_by_plain: dict[int, dict[str, float]] = {}
    anchored_entries = []
    for rc, nodes in anchor_sets.items():
        rg = cache.rooted.reps[rc]
        plain = cache.plain.find(rg.with_anchor(None))
        rooted_by_plain.setdefault(plain, {})[rg.canonical_key().digest] = len(nodes)
        anchored_entries.append((rg, len(nodes)))
    for cls, c in counts.items():
        entries.append(MotifEntry(cache.plain.reps[cls], c, 1.0, rooted_by_plain.get(cls, {})))
    return MotifTable(k, entries, anchored, method, anchored_entries=anchored_entries)


# -- brute-force references -------------------------------------------------------


def _injections(query: Graph, target: Graph) -> Iterable[tuple[int, ...]]:
    qe = query.edges
    pairs = list(combinations(range(query.n), 2))
    for perm in permutations(range(target.n), query.n):
        if all(((u, v) in qe) == target.has_edge(perm[u], perm[v]) for u, v in pairs):
            yield perm


def naive_anchored_frequency(query: Graph, target: Graph) -> int:
    """Anchored count (distinct anchor images) by trying every injection."""
    return len({perm[query.anchor] for perm in _injections(query, target)})


def naive_graph_frequency(query: Graph, target: Graph) -> int:
    """Graph-level count (distinct node subsets) by trying every injection."""
    return len({frozenset(perm) for perm in _injections(query, target)})


def naive_is_anchored_subgraph(query: Graph, target: Graph) -> bool:
    return any(perm[query.anchor] == target.anchor for perm in _injections(query, target))


def naive_isomorphic(a: Graph, b: Graph) -> bool:
    if a.n != b.n or a.edge_count != b.edge_count:
        return False
    for perm in permutations(range(b.n)):
        if a.anchor is not None and perm[a.anchor] != b.anchor:
            continue
        if (a.anchor is None) != (b.anchor is None):
            return False
        if all(b.has_edge(perm[u], perm[v]) for u, v in a.edges):
            return True
    return False


def _naive_connected(g: Graph, nodes: Sequence[int]) -> bool:
    s = set(nodes)
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        u = stack.pop()
        for w in g.adj[u]:
            if w in s and w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == len(s)


def naive_enumerate(target: Graph, k: int) -> list[tuple[Graph, int, dict[int, int]]]:
    """Reference census: every k-subset, connectivity test, isomorphism grouping by permutation.

    Returns ``(representative, subset count, {anchor position in representative: anchored frequency})``
    where anchor positions are grouped into orbits by brute-force isomorphism.
    """
    reps: list[Graph] = []
    counts: list[int] = []
    anchors: list[list[tuple[Graph, set[int]]]] = []
    for nodes in combinations(range(target.n), k):
        if not _naive_connected(target, nodes):
            continue
        g = target.induced_subgraph(nodes)
        g = Graph(g.n, g.edges)
        for i, r in enumerate(reps):
            if naive_isomorphic(r, g):
                break
        else:
            reps.append(g)
            counts.append(0)
            anchors.append([])
            i = len(reps) - 1
        counts[i] += 1
        for pos in range(k):
            ga = g.with_anchor(pos)
            for rg, s in anchors[i]:
                if naive_isomorphic(rg, ga):
                    s.add(nodes[pos])
                    break
            else:
                anchors[i].append((ga, {nodes[pos]}))
    out = []
    for r, c, a in zip(reps, counts, anchors):
        out.append((r, c, {rg.anchor: len(s) for rg, s in a}))
    return out


# -- MFinder ------------------------------------------------------------------------


def mine_mfinder(
    target: Graph, k: int, samples: int, rng: np.random.Generator, anchored: bool = True
) -> MotifTable:
    """Edge-weighted growth sampling of k-node subgraphs, each sample weighted equally.

    In anchored mode the first sampled node is the anchor and entries are
    anchored motifs. Growths that stall before ``k`` nodes are dropped and
    counted in ``meta["failed"]``.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    classifier = Classifier()
    counts: dict[int, int] = {}
    failed = 0
    for _ in range(samples):
        nodes = weighted_growth(target, rng, k)
        if len(nodes) < k:
            failed += 1
            continue
        g = target.induced_subgraph(nodes, anchor=nodes[0] if anchored else None)
        g = Graph(g.n, g.edges, g.anchor)
        cls = classifier.classify(g)
        counts[cls] = counts.get(cls, 0) + 1
    ok = samples - failed
    entries = [MotifEntry(classifier.reps[c], n, n / ok if ok else 0.0) for c, n in counts.items()]
    return MotifTable(k, entries, anchored, "mfinder", {"samples": samples, "failed": failed})


# -- Rand-ESU -----------------------------------------------------------------------


def rand_esu_probabilities(k: int, tau: float) -> list[float]:
    """Level expansion probabilities ``(1 - i/(k+1))^tau`` for levels ``i = 1..k``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return [(1.0 - i / (k + 1)) ** tau for i in range(1, k + 1)]


def _select_children(count: int, p: float, rng: np.random.Generator) -> list[int]:
    """Indices of a uniform subset of ``round_stochastic(count * p)`` children.

    Every child is kept with marginal probability exactly ``p``.
    """
    if p >= 1.0:
        return list(range(count))
    want = count * p
    n = int(np.floor(want))
    if rng.random() < want - n:
        n += 1
    if n == 0:
        return []
    return sorted(int(i) for i in rng.choice(count, size=n, replace=False))


def mine_rand_esu(
    target: Graph,
    k: int,
    tau: float,
    rng: np.random.Generator,
    probabilities: Optional[Sequence[float]] = None,
) -> MotifTable:
    """Randomised ESU with per-level child sampling and inverse-probability weighting.

    Entry counts are unbiased estimates of graph-level subset counts. With all
    probabilities equal to 1 this is exactly :func:`enumerate_exact`'s census.
    """
    if probabilities is None:
        if tau <= 0:
            raise ValueError("tau must be positive")
        probabilities = rand_esu_probabilities(k, tau)
    probs = list(probabilities)
    if len(probs) != k:
        raise ValueError("need one probability per tree level")
    cache = _PatternCache(False)
    estimates: dict[int, float] = {}
    leaves = 0
    adj = target.adj

    def extend(sub: list[int], ext: list[int], excl: set[int], root: int, weight: float):
        nonlocal leaves
        if len(sub) == k:
            cls, _ = cache.classify(target, sub)
            estimates[cls] = estimates.get(cls, 0.0) + weight
            leaves += 1
            return
        p = probs[len(sub)]
        ext = sorted(ext)
        # children in ESU pop order; child j adds ext[-1-j] with the not-yet-popped rest
        order = ext[::-1]
        keep = set(_select_children(len(order), p, rng))
        for j, w in enumerate(order):
            if j not in keep:
                continue
            rest = order[j + 1 :]
            new_ext = set(rest)
            new_excl = set(excl)
            for u in adj[w]:
                if u > root and u not in excl:
                    new_ext.add(u)
                    new_excl.add(u)
            sub.append(w)
            extend(sub, list(new_ext), new_excl, root, weight / p)
            sub.pop()

    roots = _select_children(target.n, probs[0], rng)
    for v in roots:
        if k == 1:
            cls, _ = cache.classify(target, [v])
            estimates[cls] = estimates.get(cls, 0.0) + 1.0 / probs[0]
            leaves += 1
            continue
        ext = [w for w in adj[v] if w > v]
        extend([v], ext, {v} | set(adj[v]), v, 1.0 / probs[0])
    entries = [MotifEntry(cache.plain.reps[c], est, 1.0) for c, est in estimates.items()]
    return MotifTable(k, entries, False, "randesu", {"tau": tau, "leaves": leaves, "probabilities": probs})


# -- perfect order embedding --------------------------------------------------------


def all_anchored_graphs(max_size: int) -> list[Graph]:
    """Every connected anchored graph with at most ``max_size`` nodes, one per isomorphism class."""
    if max_size > PERFECT_EMBEDDING_LIMIT:
        raise BudgetExceeded(f"reference set limited to {PERFECT_EMBEDDING_LIMIT} nodes")
    classifier = Classifier()
    for n in range(1, max_size + 1):
        pairs = list(combinations(range(n), 2))
        for mask in range(1 << len(pairs)):
            edges = [pairs[i] for i in range(len(pairs)) if mask >> i & 1]
            g = Graph(n, edges)
            if not g.is_connected():
                continue
            for a in range(n):
                classifier.classify(g.with_anchor(a))
    return list(classifier.reps)


def rooted_connected_sets(g: Graph, root: int, max_size: int) -> Iterable[tuple[int, ...]]:
    """Connected node sets containing ``root`` with at most ``max_size`` nodes, each once."""
    seen: set[frozenset[int]] = set()
    frontier = [frozenset([root])]
    seen.update(frontier)
    while frontier:
        nxt = []
        for s in frontier:
            yield tuple(sorted(s))
            if len(s) == max_size:
                continue
            for v in s:
                for w in g.adj[v]:
                    if w not in s:
                        t = s | {w}
                        if t not in seen:
                            seen.add(t)
                            nxt.append(t)
        frontier = nxt


class PerfectEmbedding:
    """Exact order embedding over all anchored connected graphs up to ``reference_size`` nodes.

    Coordinate ``i`` of ``z(G)`` counts the connected node sets ``S`` of ``G``
    that contain ``G``'s anchor and induce a copy of reference graph ``i``
    anchored there. An anchored embedding of ``A`` into ``B`` maps such sets
    injectively, so ``A <= B`` implies ``z(A) <= z(B)``; a graph not embeddable
    in ``B`` has a coordinate (itself) that is 1 for ``A`` and 0 for ``B``.
    """

    def __init__(self, reference_size: int):
        self.reference_size = reference_size
        self.references = all_anchored_graphs(reference_size)
        self._classifier = Classifier()
        self._index: dict[int, int] = {}
        for i, r in enumerate(self.references):
            self._index[self._classifier.classify(r)] = i

    @property
    def dim(self) -> int:
        return len(self.references)

    def __call__(self, g: Graph) -> np.ndarray:
        if g.anchor is None:
            raise ValueError("perfect embedding needs an anchored graph")
        z = np.zeros(self.dim, dtype=np.int64)
        for s in rooted_connected_sets(g, g.anchor, self.reference_size):
            sub = g.induced_subgraph(s, anchor=g.anchor)
            sub = Graph(sub.n, sub.edges, sub.anchor)
            idx = self._classifier.find(sub)
            z[self._index[idx]] += 1
        return z


def build_perfect_embedding(reference_size: int) -> PerfectEmbedding:
    return PerfectEmbedding(reference_size)


def order_leq(a: np.ndarray, b: np.ndarray) -> bool:
    return bool(np.all(np.asarray(a) <= np.asarray(b)))


def intersection_lower_bound(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise minimum; dominates the embedding of every common anchored subgraph."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("embeddings must have equal dimensions")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("order embeddings must be non-negative")
    return np.minimum(a, b)
