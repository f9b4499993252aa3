"""Properties of the desk-scale encoder that only hold after training."""

import csv

import numpy as np
import pytest

from motif_forge.encoder import EvalSet, accuracy_at, classify_subgraph, embed, embed_many, penalties
from motif_forge.evaluation import synthetic_target
from motif_forge.graph import Graph, is_anchored_subgraph
from motif_forge.miner import build_index, mine_greedy
from motif_forge.synthgen import random_connected_graph, random_graph, spawn_rng

pytestmark = pytest.mark.slow


def _anchored(g: Graph, anchor: int) -> Graph:
    return Graph(g.n, g.edges, anchor)


def test_loss_decreases(desk_checkpoint):
    with open(str(desk_checkpoint) + ".losses.csv") as f:
        losses = [float(r["loss"]) for r in csv.DictReader(f)]
    assert len(losses) == 20_000
    assert losses[0] > np.mean(losses[-100:])


def test_single_node_is_below_threshold(desk_model):
    rng = spawn_rng(501)
    dot = embed(desk_model, Graph(1, [], 0))
    graphs = [random_graph(10, rng).with_anchor(int(rng.integers(10))) for _ in range(200)]
    z = embed_many(desk_model, graphs)
    below = penalties(np.tile(dot, (len(graphs), 1)), z) < desk_model.threshold
    share = float(below.mean())
    assert share >= 0.95, f"{share:.3f} of 10-node graphs contain the single node by penalty"


def test_positives_have_lower_mean_penalty(desk_model):
    held = EvalSet.generate(0, 102, 1000)
    pens = held.penalties(desk_model)
    assert pens[held.labels].mean() < pens[~held.labels].mean()


def test_classification_on_small_fixtures(desk_model):
    rng = spawn_rng(502)
    pens, labels = [], []
    while len(labels) < 400:
        target = random_connected_graph(int(rng.integers(5, 8)), rng)
        anchor = int(rng.integers(target.n))
        big = _anchored(target, anchor)
        if len(labels) % 2 == 0:
            # grow a connected query from the anchor
            nodes = [anchor]
            size = int(rng.integers(2, target.n + 1))
            while len(nodes) < size:
                frontier = sorted({w for v in nodes for w in target.adj[v]} - set(nodes))
                nodes.append(int(rng.choice(frontier)))
            sub = target.induced_subgraph(nodes, anchor=anchor)
            query = _anchored(sub, sub.anchor)
        else:
            q = random_connected_graph(int(rng.integers(3, 6)), rng)
            query = _anchored(q, int(rng.integers(q.n)))
        ok, e = classify_subgraph(desk_model, query, big)
        pens.append(e)
        labels.append(is_anchored_subgraph(query, big)[0])
    labels = np.array(labels)
    assert labels.any() and not labels.all()
    acc = accuracy_at(np.array(pens), labels, desk_model.threshold)
    assert acc >= 0.85, f"balanced accuracy {acc:.3f} on {len(labels)} fixture pairs"


def test_relaxed_monotone_walk(desk_model):
    _, target = synthetic_target(0, 40, (10, 20))
    index = build_index(target, desk_model, 500, (20, 29), spawn_rng(503))
    res = mine_greedy(target, desk_model, index, 6, seeds=100, rng=spawn_rng(504))
    small, big = [], []
    for walk in res.meta["walks"]:
        motifs = [target.induced_subgraph(nodes, anchor=nodes[0]) for nodes in walk]
        motifs = [_anchored(m, m.anchor) for m in motifs]
        small += motifs[:-1]
        big += motifs[1:]
    pens = penalties(embed_many(desk_model, small), embed_many(desk_model, big))
    share = float((pens < desk_model.threshold).mean())
    assert share >= 0.90, f"{share:.3f} of {len(pens)} grow steps below the threshold"
