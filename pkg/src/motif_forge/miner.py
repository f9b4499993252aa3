"""Frequent motif search by monotonic walks in the order-embedding space."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .encoder import EncoderModel, embed_many, penalty
from .graph import (
    BudgetExceeded,
    CanonicalKey,
    Graph,
    anchored_frequency,
    graph_level_frequency,
    k_hop_neighborhood,
    sample_weighted_neighborhood,
    write_edgelist,
)
from .baselines import Classifier

log = logging.getLogger(__name__)

DEFAULT_SIZE_RANGE = (20, 29)


class NoSeedsError(RuntimeError):
    """Every seed sat in a component too small for the requested motif size."""


class NeighborhoodIndex:
    """Embedded neighbourhoods of a target graph; immutable once built."""

    def __init__(self, graphs: Sequence[Graph], embeddings: np.ndarray, origins: Sequence[int], dim: int):
        self.graphs = tuple(graphs)
        self.embeddings = np.asarray(embeddings, dtype=np.float64).reshape(len(graphs), dim)
        self.embeddings.setflags(write=False)
        self.origins = tuple(int(o) for o in origins)
        self.dim = dim
        # per-coordinate sorted values and prefix sums for fast total penalties
        self._sorted = np.sort(self.embeddings, axis=0)
        zeros = np.zeros((1, dim))
        self._cum1 = np.vstack([zeros, np.cumsum(self._sorted, axis=0)])
        self._cum2 = np.vstack([zeros, np.cumsum(self._sorted**2, axis=0)])

    def __len__(self) -> int:
        return len(self.graphs)

    def total_penalties(self, motifs: np.ndarray) -> np.ndarray:
        """Total penalty for each row of ``motifs`` (shape (c, dim))."""
        motifs = np.atleast_2d(np.asarray(motifs, dtype=np.float64))
        out = np.zeros(len(motifs))
        if len(self) == 0:
            return out
        for d in range(self.dim):
            x = motifs[:, d]
            cnt = np.searchsorted(self._sorted[:, d], x, side="left")
            s1 = self._cum1[cnt, d]
            s2 = self._cum2[cnt, d]
            out += np.maximum(cnt * x * x - 2.0 * x * s1 + s2, 0.0)
        return out


def build_index(
    target: Graph,
    model: EncoderModel,
    count: int = 10_000,
    size_range: tuple[int, int] = DEFAULT_SIZE_RANGE,
    rng: Optional[np.random.Generator] = None,
) -> NeighborhoodIndex:
    """Sample ``count`` anchored neighbourhoods with edge-weighted growth and embed them."""
    rng = rng if rng is not None else np.random.default_rng(0)
    lo, hi = size_range
    if target.n < lo:
        log.warning("target has %d nodes, fewer than the neighbourhood size lower bound %d", target.n, lo)
    graphs = []
    for _ in range(count):
        size = int(rng.integers(lo, hi + 1))
        graphs.append(sample_weighted_neighborhood(target, rng, size))
    return index_from_neighborhoods(graphs, model)


def build_exhaustive_index(target: Graph, model: EncoderModel, radius: int) -> NeighborhoodIndex:
    """One ``radius``-hop neighbourhood per target node."""
    return index_from_neighborhoods([k_hop_neighborhood(target, v, radius) for v in range(target.n)], model)


def index_from_neighborhoods(graphs: Sequence[Graph], model: EncoderModel) -> NeighborhoodIndex:
    origins = [g.origin[g.anchor] if g.origin is not None else -1 for g in graphs]
    return NeighborhoodIndex(graphs, embed_many(model, graphs, chunk=512), origins, model.dim)


def total_penalty(index: NeighborhoodIndex, motif_embedding: np.ndarray) -> float:
    """Sum of order penalties of one motif embedding against every indexed neighbourhood."""
    z = np.asarray(motif_embedding, dtype=np.float64)
    if z.shape != (index.dim,):
        raise ValueError("embedding dimension does not match the index")
    if len(index) == 0:
        return 0.0
    d = np.maximum(z[None, :] - index.embeddings, 0.0)
    return float(np.sum(d * d))


def hard_frequency_estimate(index: NeighborhoodIndex, motif_embedding: np.ndarray, threshold: float) -> int:
    """Neighbourhoods predicted to contain the motif (penalty below threshold, or exactly zero)."""
    z = np.asarray(motif_embedding, dtype=np.float64)
    d = np.maximum(z[None, :] - index.embeddings, 0.0)
    pens = np.einsum("ij,ij->i", d, d)
    return int(np.sum((pens < threshold) | (pens == 0.0)))


# -- search states ---------------------------------------------------------------


@dataclass
class SearchState:
    """A motif grown inside the target: node ids (seed first), its graph and scores."""

    nodes: tuple[int, ...]
    motif: Graph
    embedding: np.ndarray
    total_penalty: float

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def seed(self) -> int:
        return self.nodes[0]

    @property
    def key(self) -> CanonicalKey:
        return self.motif.canonical_key()


def motif_graph(target: Graph, nodes: Sequence[int]) -> Graph:
    """Induced motif on ``nodes`` anchored at ``nodes[0]``; ``origin`` keeps target ids."""
    return target.induced_subgraph(nodes, anchor=nodes[0])


def make_states(
    target: Graph, model: EncoderModel, index: NeighborhoodIndex, node_lists: Sequence[tuple[int, ...]]
) -> list[SearchState]:
    """Build states for many node tuples, embedding them in one batch."""
    if not node_lists:
        return []
    motifs = [motif_graph(target, nodes) for nodes in node_lists]
    emb = embed_many(model, motifs, chunk=1024)
    pens = index.total_penalties(emb)
    return [SearchState(tuple(n), m, e, float(p)) for n, m, e, p in zip(node_lists, motifs, emb, pens)]


def successor_nodes(target: Graph, nodes: Sequence[int]) -> list[tuple[int, ...]]:
    inside = set(nodes)
    frontier = sorted({w for v in nodes for w in target.adj[v] if w not in inside})
    return [tuple(nodes) + (w,) for w in frontier]


def grow_candidates(
    target: Graph, state: SearchState, model: EncoderModel, index: NeighborhoodIndex
) -> list[SearchState]:
    """One successor per target node adjacent to the motif, re-embedded from scratch."""
    return make_states(target, model, index, successor_nodes(target, state.nodes))


def _pick_order(state: SearchState) -> tuple[float, str, tuple[int, ...]]:
    return (state.total_penalty, state.key.digest, state.nodes)


# -- results ------------------------------------------------------------------------


@dataclass
class MotifGroup:
    """Isomorphism class of found motifs (anchored), with search statistics."""

    graph: Graph
    occurrences: int
    mean_penalty: float
    seeds: list[int] = field(default_factory=list)
    example_nodes: tuple[int, ...] = ()

    @property
    def key(self) -> CanonicalKey:
        return self.graph.canonical_key()

    @property
    def size(self) -> int:
        return self.graph.n


@dataclass
class MiningResult:
    strategy: str
    k: int
    by_size: dict[int, list[MotifGroup]]
    meta: dict = field(default_factory=dict)

    @property
    def groups(self) -> list[MotifGroup]:
        return self.by_size.get(self.k, [])

    def top(self, count: int = 10, size: Optional[int] = None) -> list[MotifGroup]:
        return self.by_size.get(self.k if size is None else size, [])[:count]


def _plain(g: Graph) -> Graph:
    return Graph(g.n, g.edges, g.anchor)


def group_states(states: Sequence[SearchState], weights: Optional[Sequence[int]] = None) -> list[MotifGroup]:
    """Group states by anchored isomorphism class and rank them.

    Ranking: occurrences (descending), then mean total penalty (ascending),
    then key digest.
    """
    classifier = Classifier()
    acc: dict[int, list] = {}
    for i, s in enumerate(states):
        w = 1 if weights is None else weights[i]
        cls = classifier.classify(_plain(s.motif))
        slot = acc.setdefault(cls, [0, 0.0, [], s.nodes])
        slot[0] += w
        slot[1] += w * s.total_penalty
        slot[2].append(s.seed)
    groups = []
    for cls, (occ, pen_sum, seeds, example) in acc.items():
        groups.append(MotifGroup(classifier.reps[cls], occ, pen_sum / occ if occ else 0.0, seeds, example))
    groups.sort(key=lambda g: (-g.occurrences, g.mean_penalty, g.key.digest))
    return groups


@dataclass
class UniqueMotif:
    """Anchored groups merged over anchors whose underlying graphs are isomorphic."""

    graph: Graph
    occurrences: int
    anchored: list[MotifGroup]


def unique_motifs(groups: Sequence[MotifGroup]) -> list[UniqueMotif]:
    classifier = Classifier()
    merged: dict[int, UniqueMotif] = {}
    for g in groups:
        cls = classifier.classify(Graph(g.graph.n, g.graph.edges))
        if cls in merged:
            merged[cls].occurrences += g.occurrences
            merged[cls].anchored.append(g)
        else:
            merged[cls] = UniqueMotif(classifier.reps[cls], g.occurrences, [g])
    return sorted(merged.values(), key=lambda u: (-u.occurrences, u.graph.canonical_key().digest))


def _draw_seeds(target: Graph, k: int, count: int, rng: np.random.Generator) -> list[int]:
    if target.n == 0:
        raise NoSeedsError("target graph is empty")
    comp_size = {}
    for comp in target.components():
        for v in comp:
            comp_size[v] = len(comp)
    seeds = [int(s) for s in rng.integers(target.n, size=count)]
    usable = [s for s in seeds if comp_size[s] >= k]
    if not usable:
        raise NoSeedsError(f"no seed lies in a component with at least {k} nodes")
    return usable


# -- greedy and beam search -----------------------------------------------------


def mine_beam(
    target: Graph,
    model: EncoderModel,
    index: NeighborhoodIndex,
    k: int,
    beam_width: int = 5,
    seeds: int = 1000,
    rng: Optional[np.random.Generator] = None,
) -> MiningResult:
    """Beam search from each seed; width 1 is the greedy walk.

    Per seed and size level the ``beam_width`` lowest-penalty distinct motifs
    are kept. The best state of each seed at each size is recorded as that
    seed's candidate.
    """
    if k < 2:
        raise ValueError("motif size must be at least 2")
    if beam_width < 1:
        raise ValueError("beam width must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    seed_nodes = _draw_seeds(target, k, seeds, rng)
    beams: list[list[SearchState]] = [[s] for s in make_states(target, model, index, [(v,) for v in seed_nodes])]
    recorded: dict[int, list[SearchState]] = {1: [b[0] for b in beams]}
    walks: list[list[SearchState]] = [[b[0]] for b in beams]
    for size in range(2, k + 1):
        requests: list[tuple[int, ...]] = []
        owner: list[int] = []
        for i, beam in enumerate(beams):
            seen_sets: set[frozenset[int]] = set()
            for st in beam:
                for nodes in successor_nodes(target, st.nodes):
                    fs = frozenset(nodes)
                    if fs in seen_sets:
                        continue
                    seen_sets.add(fs)
                    requests.append(nodes)
                    owner.append(i)
        states = make_states(target, model, index, requests)
        per_seed: list[list[SearchState]] = [[] for _ in beams]
        for i, st in zip(owner, states):
            per_seed[i].append(st)
        new_beams = []
        for i, cands in enumerate(per_seed):
            cands.sort(key=_pick_order)
            kept: list[SearchState] = []
            keys: list[SearchState] = []
            for st in cands:
                if any(st.key == o.key and _same_class(st, o) for o in keys):
                    continue
                keys.append(st)
                kept.append(st)
                if len(kept) == beam_width:
                    break
            new_beams.append(kept)
        beams = new_beams
        recorded[size] = [b[0] for b in beams]
        for w, b in zip(walks, beams):
            w.append(b[0])
    by_size = {s: group_states(states) for s, states in recorded.items() if s >= 2}
    strategy = "greedy" if beam_width == 1 else "beam"
    meta = {"seeds": len(seed_nodes), "beam_width": beam_width, "walks": [[st.nodes for st in w] for w in walks]}
    return MiningResult(strategy, k, by_size, meta)


def _same_class(a: SearchState, b: SearchState) -> bool:
    from .graph import exact_isomorphic

    return exact_isomorphic(_plain(a.motif), _plain(b.motif))


def mine_greedy(
    target: Graph,
    model: EncoderModel,
    index: NeighborhoodIndex,
    k: int,
    seeds: int = 1000,
    rng: Optional[np.random.Generator] = None,
) -> MiningResult:
    """Greedy walks: each step takes the successor of least total penalty."""
    return mine_beam(target, model, index, k, 1, seeds, rng)


# -- Monte Carlo tree search ------------------------------------------------------------


def mcts_value(total_pen: float, index_size: int, log_fn=math.log) -> float:
    """Value of a terminal motif: ``1 - log(m / |index| + 1)``."""
    if index_size == 0:
        return 1.0
    return 1.0 - log_fn(total_pen / index_size + 1.0)


@dataclass
class MctsStats:
    c: float = 0.7
    visits: dict = field(default_factory=dict)
    value: dict = field(default_factory=dict)

    def n(self, key) -> int:
        return self.visits.get(key, 0)

    def ucb(self, key, parent_visits: int) -> float:
        n = self.visits.get(key, 0)
        if n == 0:
            return math.inf
        return self.value[key] / n + self.c * math.sqrt(math.log(max(parent_visits, 1)) / n)

    def backup(self, keys, val: float) -> None:
        for key in keys:
            self.visits[key] = self.visits.get(key, 0) + 1
            self.value[key] = self.value.get(key, 0.0) + val


def split_budget(simulations: int, k: int) -> dict[int, int]:
    """Simulations per motif size ``2..k``; the remainder goes to the largest sizes."""
    levels = list(range(2, k + 1))
    base, extra = divmod(simulations, len(levels))
    return {s: base + (1 if i >= len(levels) - extra else 0) for i, s in enumerate(levels)}


def mine_mcts(
    target: Graph,
    model: EncoderModel,
    index: NeighborhoodIndex,
    k: int,
    simulations: int = 1000,
    c: float = 0.7,
    rng: Optional[np.random.Generator] = None,
    seed_pool: int = 100,
    log_base: Optional[float] = None,
) -> MiningResult:
    """UCT search over grow steps, sharing statistics between isomorphic motifs.

    Seeds come from a fixed pool and are keyed by node id; every other state
    is keyed by its anchored canonical key. Simulations are split evenly over
    sizes ``2..k`` and the tree is reused between sizes. Motifs at each size
    are ranked by visit count, ties by lower mean total penalty.
    """
    if k < 2:
        raise ValueError("motif size must be at least 2")
    if simulations < 1:
        raise ValueError("need at least one simulation")
    if c <= 0:
        raise ValueError("exploration constant must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    log_fn = math.log if log_base is None else (lambda x: math.log(x, log_base))
    pool = sorted(set(_draw_seeds(target, k, seed_pool, rng)))
    stats = MctsStats(c)
    cache: dict[tuple[int, ...], list[SearchState]] = {}
    seed_states = {st.seed: st for st in make_states(target, model, index, [(v,) for v in pool])}
    budget = split_budget(simulations, k)
    terminal_visits: dict[int, dict[CanonicalKey, int]] = {s: {} for s in budget}
    terminal_states: dict[int, list[SearchState]] = {s: [] for s in budget}
    classifier = Classifier()
    class_keys: dict[tuple[int, ...], tuple] = {}
    total = 0

    def key_of(st: SearchState):
        k_ = class_keys.get(st.nodes)
        if k_ is None:
            k_ = ("motif", classifier.classify(_plain(st.motif)))
            class_keys[st.nodes] = k_
        return k_

    def choose(options, parent_visits: int, key_fn):
        scores = [stats.ucb(key_fn(o), parent_visits) for o in options]
        best = max(scores)
        tied = [o for o, s in zip(options, scores) if s == best]
        if len(tied) == 1:
            return tied[0]
        return tied[int(rng.integers(len(tied)))]

    for size, sims in budget.items():
        for _ in range(sims):
            seed = choose(pool, total, lambda v: ("seed", v))
            state = seed_states[seed]
            path = [("seed", seed)]
            parent_n = stats.n(path[0])
            while state.size < size:
                succ = cache.get(state.nodes)
                if succ is None:
                    succ = grow_candidates(target, state, model, index)
                    cache[state.nodes] = succ
                if not succ:
                    break
                state = choose(succ, parent_n, key_of)
                path.append(key_of(state))
                parent_n = stats.n(path[-1])
            val = mcts_value(state.total_penalty, len(index), log_fn)
            stats.backup(path, val)
            total += 1
            if state.size == size:
                tv = terminal_visits[size]
                tv[path[-1]] = tv.get(path[-1], 0) + 1
                terminal_states[size].append(state)
    by_size = {}
    for size, states in terminal_states.items():
        by_size[size] = group_states(states)
    meta = {
        "simulations": simulations,
        "budget": budget,
        "seed_pool": len(pool),
        "terminal_visits": {s: sum(v.values()) for s, v in terminal_visits.items()},
        "seed_visits": sum(stats.n(("seed", v)) for v in pool),
        "c": c,
    }
    return MiningResult("mcts", k, by_size, meta)


# -- reporting ----------------------------------------------------------------------


@dataclass
class ReportRow:
    rank: int
    size: int
    key: str
    occurrences: int
    total_penalty: float
    exact_anchored_freq: Optional[int]
    exact_graph_freq: Optional[int]
    estimated: bool
    estimate: Optional[int]
    graph: Graph


def report(
    groups: Sequence[MotifGroup],
    target: Graph,
    verify_limit: int = 6,
    graph_level: bool = True,
    model: Optional[EncoderModel] = None,
    index: Optional[NeighborhoodIndex] = None,
    graph_budget: int = 2_000_000,
) -> list[ReportRow]:
    """Exact frequencies for motifs up to ``verify_limit`` nodes, estimates beyond."""
    rows = []
    for rank, g in enumerate(groups, 1):
        exact_a = exact_g = est = None
        estimated = g.size > verify_limit
        if not estimated:
            exact_a = anchored_frequency(g.graph, target)
            if graph_level:
                try:
                    exact_g = graph_level_frequency(g.graph, target, budget=graph_budget)
                except BudgetExceeded:
                    exact_g = None
        elif model is not None and index is not None and model.threshold is not None:
            z = embed_many(model, [g.graph])[0]
            est = hard_frequency_estimate(index, z, model.threshold)
        rows.append(ReportRow(rank, g.size, g.key.digest, g.occurrences, g.mean_penalty, exact_a, exact_g, estimated, est, g.graph))
    return rows


def report_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["rank", "size", "canonical_key", "occurrences", "total_penalty", "exact_anchored_freq", "exact_graph_freq", "estimated_flag"]
    )
    for r in rows:
        anchored = r.exact_anchored_freq if not r.estimated else (r.estimate if r.estimate is not None else "")
        w.writerow(
            [
                r.rank,
                r.size,
                r.key,
                r.occurrences,
                f"{r.total_penalty:.6f}",
                "" if anchored is None else anchored,
                "" if r.exact_graph_freq is None else r.exact_graph_freq,
                int(r.estimated),
            ]
        )
    return buf.getvalue()


def write_report(rows: Sequence[ReportRow], out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "motifs").mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report_csv(rows))
    for r in rows:
        write_edgelist(r.graph, out / "motifs" / f"rank_{r.rank:03d}_size_{r.size}.edgelist", f"key {r.key}")
