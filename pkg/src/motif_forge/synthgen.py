"""Synthetic graph generators, training-pair sampling, and planted-motif datasets."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import networkx as nx
import numpy as np

from .graph import Graph, weighted_growth

FAMILIES = ("erdos_renyi", "extended_barabasi_albert", "power_law_cluster", "watts_strogatz")
FAMILY_ALIASES = {
    "er": "erdos_renyi",
    "ba": "extended_barabasi_albert",
    "eba": "extended_barabasi_albert",
    "plc": "power_law_cluster",
    "ws": "watts_strogatz",
}

# Exp(20) is read as rate 20; draws above the cap are clipped.
EXP_RATE = 20.0
EXP_CAP = 0.2

MIN_BIG, MAX_BIG = 6, 29
MIN_SMALL = 5
MAX_ADDED_EDGES = 5
CONNECT_RETRIES = 20


def resolve_family(name: str) -> str:
    """Map a family name or short alias to its canonical name; ``mixed`` passes through."""
    name = FAMILY_ALIASES.get(name, name)
    if name not in FAMILIES and name != "mixed":
        raise ValueError(f"unknown generator family {name!r}")
    return name


@dataclass(frozen=True)
class GeneratorConfig:
    family: str = "mixed"
    size_range: tuple[int, int] = (MIN_BIG, MAX_BIG)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", resolve_family(self.family))
        lo, hi = self.size_range
        if lo < 2:
            raise ValueError("size_range lower bound must be at least 2")
        if hi < lo:
            raise ValueError("size_range is empty")


def spawn_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for a (seed, stream id...) pair."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *stream]))


def _density_beta(n: int) -> float:
    return 1.3 * n / math.log2(n) - 1.3


def draw_params(family: str, n: int, rng: np.random.Generator) -> dict:
    """Draw generator parameters from the pretraining priors for an ``n``-node graph."""
    if n < 2:
        raise ValueError("graphs need at least 2 nodes")
    family = resolve_family(family)
    max_m = max(1, int(math.floor(2 * math.log2(n))))
    if family == "erdos_renyi":
        return {"p": float(rng.beta(1.3, _density_beta(n)))}
    if family == "extended_barabasi_albert":
        m = int(rng.integers(1, max_m + 1))
        p = min(float(rng.exponential(1.0 / EXP_RATE)), EXP_CAP)
        q = min(float(rng.exponential(1.0 / EXP_RATE)), EXP_CAP)
        return {"m": m, "p": p, "q": q}
    if family == "power_law_cluster":
        m = int(rng.integers(1, max_m + 1))
        return {"m": m, "p": float(rng.uniform(0.0, 0.5))}
    if family == "watts_strogatz":
        k = max(2, int(round(n * rng.beta(1.3, _density_beta(n)))))
        return {"k": k, "p": float(rng.beta(2.0, 2.0))}
    raise ValueError(f"cannot draw parameters for family {family!r}")


def _from_nx(g: nx.Graph, n: int) -> Graph:
    return Graph(n, ((u, v) for u, v in g.edges() if u != v))


def build(family: str, n: int, params: dict, rng: np.random.Generator) -> Graph:
    """Run one generator with explicit parameters."""
    family = resolve_family(family)
    seed = int(rng.integers(2**32))
    if family == "erdos_renyi":
        g = nx.gnp_random_graph(n, params["p"], seed=seed)
    elif family == "extended_barabasi_albert":
        m = min(params["m"], n - 1)
        g = nx.extended_barabasi_albert_graph(n, m, params["p"], params["q"], seed=seed)
    elif family == "power_law_cluster":
        m = min(params["m"], n - 1)
        g = nx.powerlaw_cluster_graph(n, m, params["p"], seed=seed)
    elif family == "watts_strogatz":
        k = min(params["k"], n - 1)
        g = nx.watts_strogatz_graph(n, k, params["p"], seed=seed)
    else:
        raise ValueError(f"unknown family {family!r}")
    return _from_nx(g, n)


def generate(
    config: GeneratorConfig, n: int, rng: np.random.Generator, params: Optional[dict] = None
) -> Graph:
    """Draw one ``n``-node graph from ``config.family`` (a uniform pick when ``mixed``).

    ``params`` overrides the prior draw, e.g. ``{"p": 1.0}`` for a complete ER graph.
    """
    if n < 2:
        raise ValueError("graphs need at least 2 nodes")
    lo, hi = config.size_range
    if not lo <= n <= hi:
        raise ValueError(f"size {n} outside configured range {config.size_range}")
    family = config.family
    if family == "mixed":
        family = FAMILIES[int(rng.integers(len(FAMILIES)))]
    drawn = draw_params(family, n, rng)
    if params:
        drawn.update(params)
    return build(family, n, drawn, rng)


def random_graph(n: int, rng: np.random.Generator, family: str = "mixed") -> Graph:
    return generate(GeneratorConfig(family, (2, max(2, n))), n, rng)


def connect_components(g: Graph, rng: np.random.Generator) -> Graph:
    """Join the components of ``g`` into one by adding a random edge between consecutive components."""
    comps = g.components()
    if len(comps) <= 1:
        return g
    edges = list(g.edges)
    for a, b in zip(comps, comps[1:]):
        edges.append((a[int(rng.integers(len(a)))], b[int(rng.integers(len(b)))]))
    return Graph(g.n, edges, g.anchor)


def random_connected_graph(n: int, rng: np.random.Generator, family: str = "mixed") -> Graph:
    """Rejection-sample a connected graph; after a bounded number of tries, join components."""
    g = None
    for _ in range(CONNECT_RETRIES):
        g = random_graph(n, rng, family)
        if g.is_connected():
            return g
    return connect_components(g, rng)


# -- training pairs -----------------------------------------------------------


@dataclass(frozen=True)
class TrainingPair:
    """``small`` should (label True) or should not (label False) embed anchored into ``big``."""

    big: Graph
    small: Graph
    label: bool
    kind: str = field(default="positive")


def _grown_subgraph(big: Graph, size: int, rng: np.random.Generator) -> Graph:
    nodes = weighted_growth(big, rng, size, start=big.anchor)
    sub = big.induced_subgraph(nodes, anchor=big.anchor)
    return Graph(sub.n, sub.edges, sub.anchor)


def _add_random_edges(g: Graph, count: int, rng: np.random.Generator) -> Optional[Graph]:
    non_edges = [(u, v) for u in range(g.n) for v in range(u + 1, g.n) if v not in g.adj[u]]
    if not non_edges:
        return None
    count = min(count, len(non_edges))
    pick = rng.choice(len(non_edges), size=count, replace=False)
    return Graph(g.n, list(g.edges) + [non_edges[i] for i in sorted(pick)], g.anchor)


def sample_training_pair(
    rng: np.random.Generator,
    positive: bool,
    big_range: tuple[int, int] = (MIN_BIG, MAX_BIG),
) -> TrainingPair:
    """Sample one anchored (big, small) pair of the requested class.

    Positives grow ``small`` inside ``big`` from its anchor. Negatives either
    perturb such a subgraph with 1-5 extra edges or draw an unrelated graph,
    with equal probability.
    """
    n_big = int(rng.integers(big_range[0], big_range[1] + 1))
    big = random_connected_graph(n_big, rng)
    big = big.with_anchor(int(rng.integers(n_big)))
    return pair_from_big(big, rng, positive)


def pair_from_big(big: Graph, rng: np.random.Generator, positive: bool) -> TrainingPair:
    """Build a pair of the requested class around an anchored, connected ``big`` graph."""
    n_big = big.n
    n_small = int(rng.integers(min(MIN_SMALL, n_big - 1), n_big))
    if positive:
        return TrainingPair(big, _grown_subgraph(big, n_small, rng), True, "positive")
    if rng.random() < 0.5:
        sub = _grown_subgraph(big, n_small, rng)
        perturbed = _add_random_edges(sub, int(rng.integers(1, MAX_ADDED_EDGES + 1)), rng)
        if perturbed is not None:
            return TrainingPair(big, perturbed, False, "perturbed")
    other = random_connected_graph(n_small, rng)
    other = other.with_anchor(int(rng.integers(n_small)))
    return TrainingPair(big, other, False, "unrelated")


def pair_stream(rng: np.random.Generator, big_range: tuple[int, int] = (MIN_BIG, MAX_BIG)) -> Iterator[TrainingPair]:
    """Endless stream alternating positive and negative pairs."""
    positive = True
    while True:
        yield sample_training_pair(rng, positive, big_range)
        positive = not positive


def sample_batch(rng: np.random.Generator, size: int, big_range: tuple[int, int] = (MIN_BIG, MAX_BIG)) -> list[TrainingPair]:
    stream = pair_stream(rng, big_range)
    return [next(stream) for _ in range(size)]


# -- planted motif datasets -----------------------------------------------------


def random_motif(size: int, rng: np.random.Generator, retries: int = 100) -> Graph:
    """Random connected motif from the mixed generator, by rejection."""
    for _ in range(retries):
        g = random_graph(size, rng)
        if g.is_connected():
            return g
    raise RuntimeError(f"no connected {size}-node motif after {retries} draws")


def plant_motif_dataset(
    motif_size: int,
    base_size: int,
    graph_count: int,
    rng: np.random.Generator,
    attach_edges: int = 1,
    motif: Optional[Graph] = None,
) -> tuple[list[Graph], Graph]:
    """Base graphs with one copy of a random motif attached to each.

    Nodes ``0..base_size-1`` of each graph form the base graph; the motif copy
    occupies the remaining ids and is joined to the base by ``attach_edges``
    random edges.
    """
    if motif_size < 3 or base_size < 3:
        raise ValueError("motif and base sizes must be at least 3")
    if motif is None:
        motif = random_motif(motif_size, rng)
    elif motif.n != motif_size:
        raise ValueError("supplied motif has the wrong size")
    graphs = []
    for _ in range(graph_count):
        base = random_graph(base_size, rng)
        edges = list(base.edges)
        edges.extend((u + base_size, v + base_size) for u, v in motif.edges)
        pairs: set[tuple[int, int]] = set()
        while len(pairs) < min(attach_edges, motif_size * base_size):
            m = int(rng.integers(motif_size))
            b = int(rng.integers(base_size))
            pairs.add((b, base_size + m))
        edges.extend(sorted(pairs))
        graphs.append(Graph(base_size + motif_size, edges))
    return graphs, Graph(motif.n, motif.edges)


# -- statistics -----------------------------------------------------------------


@dataclass(frozen=True)
class GraphStats:
    graph_id: int
    density: float
    diameter: int
    avg_path: float
    clustering: float


def graph_statistics(g: Graph, graph_id: int = 0) -> GraphStats:
    nxg = nx.Graph()
    nxg.add_nodes_from(range(g.n))
    nxg.add_edges_from(g.edges)
    density = 2 * g.edge_count / (g.n * (g.n - 1)) if g.n > 1 else 0.0
    largest = max(g.components(), key=len) if g.n else []
    sub = nxg.subgraph(largest)
    if len(largest) > 1:
        diameter = nx.diameter(sub)
        avg_path = nx.average_shortest_path_length(sub)
    else:
        diameter, avg_path = 0, 0.0
    clustering = nx.average_clustering(nxg) if g.n else 0.0
    return GraphStats(graph_id, density, diameter, avg_path, clustering)


def dataset_statistics(dataset: Sequence[Graph]) -> list[GraphStats]:
    return [graph_statistics(g, i) for i, g in enumerate(dataset)]


def statistics_csv(stats: Sequence[GraphStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["graph_id", "density", "diameter", "avg_path", "clustering"])
    for s in stats:
        w.writerow([s.graph_id, f"{s.density:.6f}", s.diameter, f"{s.avg_path:.6f}", f"{s.clustering:.6f}"])
    return buf.getvalue()


def dataset_pairs(
    graphs: Sequence[Graph], rng: np.random.Generator, count: int, big_range: tuple[int, int] = (MIN_BIG, MAX_BIG)
) -> list[TrainingPair]:
    """Alternating pairs whose big graphs are edge-weighted neighbourhoods of dataset graphs."""
    from .graph import sample_weighted_neighborhood

    usable = [g for g in graphs if g.n >= big_range[0] and any(len(c) >= big_range[0] for c in g.components())]
    if not usable:
        raise ValueError(f"no dataset graph has a component with {big_range[0]} nodes")
    pairs = []
    while len(pairs) < count:
        g = usable[int(rng.integers(len(usable)))]
        size = int(rng.integers(big_range[0], big_range[1] + 1))
        nb = sample_weighted_neighborhood(g, rng, size)
        if nb.n < big_range[0]:
            continue
        big = Graph(nb.n, nb.edges, nb.anchor)
        pairs.append(pair_from_big(big, rng, len(pairs) % 2 == 0))
    return pairs
