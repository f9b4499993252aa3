"""Undirected simple graphs, anchored subgraph matching, and motif counting primitives.

All matching is node-induced: a query maps onto a node set of the target whose
induced edges are exactly the images of the query edges.
"""

from __future__ import annotations

import hashlib
import os
from collections import deque
from itertools import combinations
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

# Default cap on the number of node subsets inspected by graph-level counting.
DEFAULT_SUBSET_BUDGET = 5_000_000
# Collisions of canonical keys are confirmed by exact isomorphism up to this size.
EXACT_CONFIRM_LIMIT = 20


class BudgetExceeded(RuntimeError):
    """Raised when an exponential enumeration runs past its configured budget."""


class Graph:
    """Immutable undirected simple graph on nodes ``0..n-1`` with an optional anchor.

    ``origin`` optionally maps each node id to an id in some larger graph the
    node was extracted from (a neighborhood or a motif inside a target).
    """

    __slots__ = ("n", "edges", "adj", "anchor", "origin", "_key")

    def __init__(
        self,
        n: int,
        edges: Iterable[tuple[int, int]] = (),
        anchor: Optional[int] = None,
        origin: Optional[Sequence[int]] = None,
    ):
        if n < 0:
            raise ValueError("node count must be non-negative")
        adj: list[set[int]] = [set() for _ in range(n)]
        norm = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) out of range for {n} nodes")
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            a, b = (u, v) if u < v else (v, u)
            norm.add((a, b))
            adj[a].add(b)
            adj[b].add(a)
        if anchor is not None and not 0 <= anchor < n:
            raise ValueError(f"anchor {anchor} is not a node id")
        if origin is not None:
            origin = tuple(int(x) for x in origin)
            if len(origin) != n:
                raise ValueError("origin map must have one entry per node")
        self.n = n
        self.edges = frozenset(norm)
        self.adj = tuple(frozenset(s) for s in adj)
        self.anchor = None if anchor is None else int(anchor)
        self.origin = origin
        self._key = None

    # -- basic queries -------------------------------------------------
    @property
    def node_count(self) -> int:
        return self.n

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def degree(self, v: int) -> int:
        return len(self.adj[v])

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.adj[u]

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def with_anchor(self, anchor: Optional[int]) -> "Graph":
        g = Graph.__new__(Graph)
        if anchor is not None and not 0 <= anchor < self.n:
            raise ValueError(f"anchor {anchor} is not a node id")
        g.n, g.edges, g.adj, g.origin = self.n, self.edges, self.adj, self.origin
        g.anchor = anchor
        g._key = None
        return g

    def relabel(self, perm: Sequence[int]) -> "Graph":
        """Return the graph with node ``v`` renamed to ``perm[v]``."""
        anchor = None if self.anchor is None else perm[self.anchor]
        origin = None
        if self.origin is not None:
            origin = [0] * self.n
            for v, o in enumerate(self.origin):
                origin[perm[v]] = o
        return Graph(self.n, ((perm[u], perm[v]) for u, v in self.edges), anchor, origin)

    def induced_subgraph(self, nodes: Sequence[int], anchor: Optional[int] = None) -> "Graph":
        """Node-induced subgraph on ``nodes`` (kept in the given order).

        ``anchor`` is a node id of ``self``; the result's ``origin`` maps back
        into ``self`` (composed with ``self.origin`` when present).
        """
        index = {v: i for i, v in enumerate(nodes)}
        if len(index) != len(nodes):
            raise ValueError("duplicate nodes in induced subgraph")
        edges = []
        for v, i in index.items():
            for w in self.adj[v]:
                j = index.get(w)
                if j is not None and i < j:
                    edges.append((i, j))
        origin = list(nodes) if self.origin is None else [self.origin[v] for v in nodes]
        return Graph(len(nodes), edges, None if anchor is None else index[anchor], origin)

    def is_connected(self) -> bool:
        if self.n == 0:
            return True
        return len(self.component(0)) == self.n

    def component(self, v: int) -> list[int]:
        seen = {v}
        queue = deque([v])
        while queue:
            u = queue.popleft()
            for w in self.adj[u]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        return sorted(seen)

    def components(self) -> list[list[int]]:
        seen: set[int] = set()
        out = []
        for v in range(self.n):
            if v not in seen:
                comp = self.component(v)
                seen.update(comp)
                out.append(comp)
        return out

    def canonical_key(self) -> "CanonicalKey":
        if self._key is None:
            self._key = canonical_key(self)
        return self._key

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n == other.n and self.edges == other.edges and self.anchor == other.anchor

    def __hash__(self) -> int:
        return hash((self.n, self.edges, self.anchor))

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, edges={self.sorted_edges()}, anchor={self.anchor})"


def disjoint_union(graphs: Sequence[Graph]) -> Graph:
    """Place graphs side by side; node ids are shifted in order, anchors dropped."""
    edges = []
    offset = 0
    for g in graphs:
        edges.extend((u + offset, v + offset) for u, v in g.edges)
        offset += g.n
    return Graph(offset, edges)


# -- subgraph matching -------------------------------------------------------


@dataclass(frozen=True)
class IsoMapping:
    """Injective, node-induced map from query node ids to target node ids."""

    assignment: tuple[int, ...]

    def __getitem__(self, q: int) -> int:
        return self.assignment[q]

    def image(self) -> frozenset[int]:
        return frozenset(self.assignment)


def _match_order(query: Graph, first: Optional[int]) -> list[int]:
    """Static expansion order: most mapped neighbours, then higher degree, then lower id."""
    order: list[int] = []
    placed = [False] * query.n
    links = [0] * query.n
    if first is not None:
        order.append(first)
        placed[first] = True
        for w in query.adj[first]:
            links[w] += 1
    while len(order) < query.n:
        best = max(
            (v for v in range(query.n) if not placed[v]),
            key=lambda v: (links[v], query.degree(v), -v),
        )
        order.append(best)
        placed[best] = True
        for w in query.adj[best]:
            links[w] += 1
    return order


def _iter_matches(
    query: Graph,
    target: Graph,
    fixed: Optional[tuple[int, int]] = None,
    allowed: Optional[frozenset[int]] = None,
) -> Iterator[list[int]]:
    """Yield every node-induced injective match of ``query`` into ``target``.

    ``fixed`` pins one query node to one target node. ``allowed`` restricts the
    image to a subset of target nodes. Each yielded list is reused; copy it.
    """
    nq = query.n
    if nq == 0:
        yield []
        return
    if nq > (target.n if allowed is None else len(allowed)):
        return
    order = _match_order(query, fixed[0] if fixed else None)
    # for each step: mapped neighbours and mapped non-neighbours (earlier in order)
    back_nb = []
    back_non = []
    for i, q in enumerate(order):
        earlier = order[:i]
        back_nb.append([p for p in earlier if p in query.adj[q]])
        back_non.append([p for p in earlier if p not in query.adj[q]])
    qdeg = [query.degree(q) for q in order]
    tadj = target.adj
    assign = [-1] * nq
    used: set[int] = set()
    all_nodes = range(target.n) if allowed is None else sorted(allowed)

    def feasible(i: int, c: int) -> bool:
        if c in used:
            return False
        if allowed is not None and c not in allowed:
            return False
        if allowed is None:
            if len(tadj[c]) < qdeg[i]:
                return False
        adj_c = tadj[c]
        for p in back_nb[i]:
            if assign[p] not in adj_c:
                return False
        for p in back_non[i]:
            if assign[p] in adj_c:
                return False
        return True

    def candidates(i: int) -> Iterable[int]:
        if i == 0 and fixed is not None:
            return (fixed[1],)
        if back_nb[i]:
            anchor_node = assign[back_nb[i][0]]
            return sorted(tadj[anchor_node])
        return all_nodes

    def rec(i: int) -> Iterator[list[int]]:
        if i == nq:
            yield assign
            return
        q = order[i]
        for c in candidates(i):
            if feasible(i, c):
                assign[q] = c
                used.add(c)
                yield from rec(i + 1)
                used.discard(c)
                assign[q] = -1

    yield from rec(0)


def find_mapping(
    query: Graph,
    target: Graph,
    fixed: Optional[tuple[int, int]] = None,
    allowed: Optional[frozenset[int]] = None,
) -> Optional[IsoMapping]:
    for m in _iter_matches(query, target, fixed, allowed):
        return IsoMapping(tuple(m))
    return None


def is_anchored_subgraph(query: Graph, target: Graph) -> tuple[bool, Optional[IsoMapping]]:
    """Test whether ``query`` embeds into ``target`` with anchor sent to anchor.

    Returns ``(found, witness)``.
    """
    if query.anchor is None or target.anchor is None:
        raise ValueError("both graphs must carry an anchor")
    if query.n < 1:
        raise ValueError("query must have at least one node")
    m = find_mapping(query, target, fixed=(query.anchor, target.anchor))
    return m is not None, m


def anchored_frequency(query: Graph, target: Graph) -> int:
    """Number of target nodes ``u`` at which the anchored query occurs with anchor at ``u``."""
    if query.anchor is None:
        raise ValueError("query must carry an anchor")
    if not query.is_connected():
        raise ValueError("query must be connected")
    return sum(1 for _ in anchored_occurrences(query, target))


def anchored_occurrences(query: Graph, target: Graph) -> Iterator[int]:
    """Target nodes that the query anchor can be mapped to."""
    a = query.anchor
    for u in range(target.n):
        if find_mapping(query, target, fixed=(a, u)) is not None:
            yield u


def connected_subsets(g: Graph, k: int) -> Iterator[tuple[int, ...]]:
    """Enumerate every connected node subset of size ``k`` exactly once (ESU order)."""
    if k < 1:
        return
    adj = g.adj
    for v in range(g.n):
        if k == 1:
            yield (v,)
            continue
        ext = {w for w in adj[v] if w > v}
        yield from _esu_extend(adj, [v], ext, v, k, {v} | set(adj[v]))


def _esu_extend(adj, sub, ext, root, k, excl):
    if len(sub) == k:
        yield tuple(sub)
        return
    ext = sorted(ext)
    while ext:
        w = ext.pop()
        new_ext = set(ext)
        new_excl = set(excl)
        for u in adj[w]:
            if u > root and u not in excl:
                new_ext.add(u)
                new_excl.add(u)
        sub.append(w)
        yield from _esu_extend(adj, sub, new_ext, root, k, new_excl)
        sub.pop()


def graph_level_frequency(query: Graph, target: Graph, budget: int = DEFAULT_SUBSET_BUDGET) -> int:
    """Number of distinct target node subsets whose induced subgraph is isomorphic to ``query``.

    Anchors are ignored. Queries with interchangeable (twin) nodes are counted
    through embeddings divided by automorphisms, choosing twin images
    combinatorially; otherwise connected subsets are enumerated. Raises
    :class:`BudgetExceeded` once ``budget`` units of search work are spent.
    """
    if not query.is_connected():
        raise ValueError("query must be connected")
    q = query.with_anchor(None)
    twins = _largest_twin_class(q)
    if twins is not None:
        work = [0]
        embeddings = _count_embeddings(q, target.with_anchor(None), twins, budget, work)
        automorphisms = _count_embeddings(q, q, twins, budget, work)
        return embeddings // automorphisms
    k = q.n
    qdeg = sorted(q.degree(v) for v in range(k))
    m = q.edge_count
    count = 0
    seen = 0
    for sub in connected_subsets(target, k):
        seen += 1
        if seen > budget:
            raise BudgetExceeded(f"graph-level count explored more than {budget} subsets")
        s = set(sub)
        degs = sorted(len(target.adj[v] & s) for v in sub)
        if sum(degs) != 2 * m or degs != qdeg:
            continue
        if find_mapping(q, target, allowed=frozenset(s)) is not None:
            count += 1
    return count


def _largest_twin_class(q: Graph) -> Optional[tuple[list[int], bool]]:
    """Largest set of at least two nodes with identical neighbourhoods outside the set.

    Returns ``(nodes, adjacent)`` where ``adjacent`` tells whether the twins are
    pairwise adjacent; ``None`` if there is no such class or it is the whole graph.
    """
    groups: dict[tuple[bool, frozenset[int]], list[int]] = {}
    for v in range(q.n):
        groups.setdefault((False, q.adj[v]), []).append(v)
        groups.setdefault((True, q.adj[v] | {v}), []).append(v)
    best = None
    for (adjacent, _), nodes in sorted(groups.items(), key=lambda kv: (kv[0][0], sorted(kv[1]))):
        if 2 <= len(nodes) < q.n and (best is None or len(nodes) > len(best[0])):
            best = (nodes, adjacent)
    return best


def _count_embeddings(q: Graph, target: Graph, twins: tuple[list[int], bool], budget: int, work: list[int]) -> int:
    """Number of node-induced injective maps of ``q`` into ``target``."""
    from math import comb, factorial

    nodes, adjacent = twins
    twin_set = set(nodes)
    r = len(nodes)
    core = [v for v in range(q.n) if v not in twin_set]
    index = {v: i for i, v in enumerate(core)}
    core_graph = Graph(len(core), [(index[u], index[v]) for u, v in q.edges if u in index and v in index])
    attach = [index[w] for w in q.adj[nodes[0]] if w not in twin_set]
    detach = [i for i in range(len(core)) if i not in set(attach)]
    total = 0
    for f in _iter_matches(core_graph, target):
        work[0] += 1
        if work[0] > budget:
            raise BudgetExceeded(f"graph-level count did more than {budget} search steps")
        image = set(f)
        if attach:
            cand = set(target.adj[f[attach[0]]])
            for i in attach[1:]:
                cand &= target.adj[f[i]]
        else:
            cand = set(range(target.n))
        cand -= image
        cand = [c for c in cand if not any(f[i] in target.adj[c] for i in detach)]
        inner = sum(len(target.adj[c].intersection(cand)) for c in cand) // 2
        full = len(cand) * (len(cand) - 1) // 2
        if (not adjacent and inner == 0) or (adjacent and inner == full):
            ways = comb(len(cand), r)
        else:
            ways = 0
            for combo in combinations(sorted(cand), r):
                work[0] += 1
                if work[0] > budget:
                    raise BudgetExceeded(f"graph-level count did more than {budget} search steps")
                pairs = [target.has_edge(a, b) for a, b in combinations(combo, 2)]
                if all(pairs) if adjacent else not any(pairs):
                    ways += 1
        total += ways * factorial(r)
    return total


def exact_isomorphic(a: Graph, b: Graph) -> bool:
    """Anchor-respecting isomorphism test; intended for small graphs."""
    if a.n != b.n or a.edge_count != b.edge_count:
        return False
    if (a.anchor is None) != (b.anchor is None):
        return False
    if sorted(map(len, a.adj)) != sorted(map(len, b.adj)):
        return False
    if a.n == 0:
        return True
    fixed = None if a.anchor is None else (a.anchor, b.anchor)
    return find_mapping(a, b, fixed=fixed) is not None


# -- neighbourhoods and sampling ----------------------------------------------


def k_hop_neighborhood(target: Graph, center: int, k: int) -> Graph:
    """Induced ball of radius ``k`` around ``center`` anchored there (BFS order ids)."""
    if not 0 <= center < target.n:
        raise ValueError(f"center {center} is not a node id")
    dist = {center: 0}
    order = [center]
    queue = deque([center])
    while queue:
        u = queue.popleft()
        if dist[u] == k:
            continue
        for w in sorted(target.adj[u]):
            if w not in dist:
                dist[w] = dist[u] + 1
                order.append(w)
                queue.append(w)
    return target.induced_subgraph(order, anchor=center)


def weighted_growth(
    target: Graph, rng: np.random.Generator, size: int, start: Optional[int] = None
) -> list[int]:
    """Grow a connected node set from ``start`` by edge-weighted frontier sampling.

    Each step adds a frontier node with probability proportional to its number
    of edges into the grown set. Stops at ``size`` nodes or an empty frontier.
    """
    if start is None:
        start = int(rng.integers(target.n))
    grown = [start]
    inside = {start}
    weight: dict[int, int] = {}
    for w in target.adj[start]:
        weight[w] = 1
    while len(grown) < size and weight:
        nodes = sorted(weight)
        w = np.fromiter((weight[v] for v in nodes), dtype=float, count=len(nodes))
        cum = np.cumsum(w)
        r = rng.random() * cum[-1]
        pick = nodes[min(int(np.searchsorted(cum, r, side="right")), len(nodes) - 1)]
        del weight[pick]
        grown.append(pick)
        inside.add(pick)
        for x in target.adj[pick]:
            if x not in inside:
                weight[x] = weight.get(x, 0) + 1
    return grown


def sample_weighted_neighborhood(
    target: Graph, rng: np.random.Generator, max_size: int, anchor: Optional[int] = None
) -> Graph:
    """Sample an anchored neighbourhood with MFinder-style edge-weighted growth."""
    if max_size < 1:
        raise ValueError("max_size must be at least 1")
    if target.n == 0:
        raise ValueError("cannot sample from an empty graph")
    nodes = weighted_growth(target, rng, max_size, anchor)
    return target.induced_subgraph(nodes, anchor=nodes[0])


# -- canonical hashing ----------------------------------------------------------


@dataclass(frozen=True, order=True)
class CanonicalKey:
    digest: str
    round_count: int

    def __str__(self) -> str:
        return self.digest


def _h(data: str) -> str:
    return hashlib.blake2b(data.encode(), digest_size=8).hexdigest()


def canonical_key(g: Graph) -> CanonicalKey:
    """WL colour-refinement digest, seeded with (anchor flag, degree)."""
    rounds = max(g.n, 3)
    colors = [
        f"{1 if v == g.anchor else 0}:{g.degree(v)}" for v in range(g.n)
    ]
    history = hashlib.blake2b(digest_size=16)
    history.update(f"n={g.n};m={g.edge_count};a={g.anchor is not None}|".encode())
    history.update(",".join(sorted(colors)).encode())
    stable_classes = -1
    for r in range(rounds):
        new = [
            _h(colors[v] + "|" + ",".join(sorted(colors[w] for w in g.adj[v])))
            for v in range(g.n)
        ]
        classes = len(set(new))
        colors = new
        history.update(b"|")
        history.update(",".join(sorted(colors)).encode())
        # once the partition stops splitting, later rounds only re-hash it
        if classes == stable_classes:
            history.update(f"stable@{rounds - r}".encode())
            break
        stable_classes = classes
    return CanonicalKey(history.hexdigest(), rounds)


def group_isomorphic(graphs: Sequence[Graph]) -> list[list[int]]:
    """Partition indices of ``graphs`` into isomorphism classes.

    Buckets by canonical key, then confirms with :func:`exact_isomorphic` for
    graphs up to :data:`EXACT_CONFIRM_LIMIT` nodes. Classes are ordered by
    first appearance.
    """
    buckets: dict[CanonicalKey, list[list[int]]] = {}
    order: list[list[int]] = []
    for i, g in enumerate(graphs):
        key = g.canonical_key()
        classes = buckets.setdefault(key, [])
        for cls in classes:
            rep = graphs[cls[0]]
            if g.n > EXACT_CONFIRM_LIMIT or exact_isomorphic(rep, g):
                cls.append(i)
                break
        else:
            cls = [i]
            classes.append(cls)
            order.append(cls)
    return order


# -- edge-list files ----------------------------------------------------------


def format_edgelist(g: Graph, comment: Optional[str] = None) -> str:
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.append(f"n {g.n}")
    if g.anchor is not None:
        lines.append(f"anchor {g.anchor}")
    lines.extend(f"{u} {v}" for u, v in g.sorted_edges())
    return "\n".join(lines) + "\n"


class EdgeListError(ValueError):
    """Malformed edge-list text."""


def parse_edgelist(text: str, source: str = "<text>") -> Graph:
    n = None
    anchor = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "n" and len(parts) == 2:
                n = int(parts[1])
            elif parts[0] == "anchor" and len(parts) == 2:
                anchor = int(parts[1])
            elif len(parts) == 2:
                edges.append((int(parts[0]), int(parts[1])))
            else:
                raise ValueError
        except ValueError:
            raise EdgeListError(f"{source}:{lineno}: cannot parse {raw!r}") from None
    if n is None:
        raise EdgeListError(f"{source}: missing 'n <node_count>' header")
    try:
        return Graph(n, edges, anchor)
    except ValueError as exc:
        raise EdgeListError(f"{source}: {exc}") from None


def write_edgelist(g: Graph, path: str | os.PathLike, comment: Optional[str] = None) -> None:
    Path(path).write_text(format_edgelist(g, comment))


def read_edgelist(path: str | os.PathLike) -> Graph:
    return parse_edgelist(Path(path).read_text(), str(path))


PLANTED_FILE = "planted.edgelist"


def read_dataset(path: str | os.PathLike) -> list[Graph]:
    """Read one graph per file from a directory (lexicographic order) or a single file.

    Hidden files and the planted-motif record ``planted.edgelist`` are skipped.
    """
    p = Path(path)
    if p.is_dir():
        files = sorted(f for f in p.iterdir() if f.is_file() and not f.name.startswith(".") and f.name != PLANTED_FILE)
        return [read_edgelist(f) for f in files]
    return [read_edgelist(p)]


def write_dataset(graphs: Sequence[Graph], directory: str | os.PathLike, prefix: str = "graph") -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(len(graphs))))
    paths = []
    for i, g in enumerate(graphs):
        p = d / f"{prefix}_{i:0{width}d}.edgelist"
        write_edgelist(g, p)
        paths.append(p)
    return paths

