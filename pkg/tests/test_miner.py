import math

import numpy as np
import pytest

from conftest import complete, cycle, path, star
from motif_forge.encoder import EncoderModel, ModelConfig, embed, penalty
from motif_forge.graph import Graph, anchored_frequency, disjoint_union, exact_isomorphic
from motif_forge.miner import (
    NeighborhoodIndex,
    NoSeedsError,
    build_index,
    grow_candidates,
    hard_frequency_estimate,
    make_states,
    mcts_value,
    mine_beam,
    mine_greedy,
    mine_mcts,
    report,
    report_csv,
    split_budget,
    total_penalty,
    unique_motifs,
    write_report,
)
from motif_forge.synthgen import random_graph, spawn_rng

SMALL = ModelConfig(hidden=8, layers=3, out_dim=6, mlp_layers=2)


@pytest.fixture(scope="module")
def model():
    m = EncoderModel.initialize(SMALL, seed=7)
    m.threshold = 0.05
    return m


@pytest.fixture(scope="module")
def target():
    rng = spawn_rng(50)
    return disjoint_union([random_graph(int(rng.integers(8, 14)), rng) for _ in range(6)])


def _index(emb):
    emb = np.atleast_2d(np.asarray(emb, dtype=float))
    return NeighborhoodIndex([Graph(1, [], 0)] * len(emb), emb, [0] * len(emb), emb.shape[1])


# -- index and penalties ---------------------------------------------------------------


def test_empty_index(model, target):
    idx = build_index(target, model, count=0)
    assert len(idx) == 0
    assert total_penalty(idx, np.ones(model.dim)) == 0.0


def test_index_neighbourhoods_bounded_connected_and_seeded(model, target):
    a = build_index(target, model, count=40, size_range=(5, 9), rng=spawn_rng(1))
    b = build_index(target, model, count=40, size_range=(5, 9), rng=spawn_rng(1))
    assert len(a) == 40
    assert all(g.n <= 9 and g.is_connected() for g in a.graphs)
    assert a.graphs == b.graphs and np.array_equal(a.embeddings, b.embeddings)
    assert a.origins == tuple(g.origin[g.anchor] for g in a.graphs)


def test_total_penalty_examples():
    idx = _index([[1.0, 2.0], [0.5, 3.0]])
    assert total_penalty(idx, np.zeros(2)) == 0.0
    assert total_penalty(_index([[1.0, 2.0]]), np.array([1.0, 2.0])) == 0.0
    # (2-1)^2 + (2-0.5)^2 + 0 + 0
    assert total_penalty(idx, np.array([2.0, 1.0])) == pytest.approx(1.0 + 2.25)
    with pytest.raises(ValueError):
        total_penalty(idx, np.zeros(3))


def test_total_penalty_fast_path_matches_direct_sum():
    rng = np.random.default_rng(3)
    idx = _index(rng.exponential(size=(200, 5)))
    motifs = rng.exponential(size=(30, 5))
    fast = idx.total_penalties(motifs)
    slow = [total_penalty(idx, z) for z in motifs]
    assert np.allclose(fast, slow, rtol=1e-9, atol=1e-9)


def test_total_penalty_monotone_in_each_coordinate():
    rng = np.random.default_rng(4)
    idx = _index(rng.exponential(size=(50, 4)))
    z = rng.exponential(size=4)
    for d in range(4):
        prev = total_penalty(idx, z)
        for step in range(1, 6):
            bumped = z.copy()
            bumped[d] += 0.3 * step
            now = total_penalty(idx, bumped)
            assert now >= prev
            prev = now


def test_hard_frequency_estimate():
    idx = _index([[1.0, 1.0], [2.0, 0.0], [0.0, 0.0]])
    assert hard_frequency_estimate(idx, np.zeros(2), 0.1) == 3
    assert hard_frequency_estimate(idx, np.array([1.0, 0.5]), 0.0) == 1
    assert hard_frequency_estimate(idx, np.array([1.0, 0.5]), 0.3) == 2


# -- growing ---------------------------------------------------------------------------------


def test_grow_candidates_examples(model):
    lonely = disjoint_union([Graph(1, []), path(3)])
    idx = _index(np.ones((1, model.dim)))
    (seed,) = make_states(lonely, model, idx, [(0,)])
    assert grow_candidates(lonely, seed, model, idx) == []
    (end,) = make_states(lonely, model, idx, [(1,)])
    succ = grow_candidates(lonely, end, model, idx)
    assert [s.nodes for s in succ] == [(1, 2)]


def test_successors_are_induced_and_reembedded(model, target):
    idx = build_index(target, model, count=20, size_range=(5, 8), rng=spawn_rng(2))
    (state,) = make_states(target, model, idx, [(0,)])
    for _ in range(3):
        succ = grow_candidates(target, state, model, idx)
        for s in succ:
            assert s.motif.is_connected() and s.motif.origin[s.motif.anchor] == 0
            expect = target.induced_subgraph(s.nodes, anchor=s.nodes[0])
            assert s.motif.edges == expect.edges
            # recomputed from scratch; batch shape only perturbs BLAS summation order
            assert np.allclose(s.embedding, embed(model, s.motif), rtol=1e-12, atol=0)
            assert s.total_penalty == pytest.approx(total_penalty(idx, s.embedding))
            # an anchored supergraph can only be rarer
            assert anchored_frequency(Graph(s.motif.n, s.motif.edges, 0), target) <= anchored_frequency(
                Graph(state.motif.n, state.motif.edges, 0), target
            )
        state = succ[0]


# -- greedy and beam -------------------------------------------------------------------------


def test_greedy_on_clique(model):
    k = 5
    idx = _index(np.ones((3, model.dim)))
    res = mine_greedy(complete(k), model, idx, k, seeds=25, rng=spawn_rng(3))
    (group,) = res.groups
    assert exact_isomorphic(Graph(k, group.graph.edges), complete(k))
    assert group.occurrences == 25
    assert set(res.by_size) == set(range(2, k + 1))


def test_greedy_on_star_gives_star_shapes(model):
    idx = _index(np.ones((1, model.dim)))
    res = mine_greedy(star(6), model, idx, 3, seeds=40, rng=spawn_rng(4))
    for g in res.groups:
        plain = Graph(3, g.graph.edges)
        assert exact_isomorphic(plain, path(3))
    assert sum(g.occurrences for g in res.groups) == 40


def test_beam_width_one_is_greedy(model, target):
    idx = build_index(target, model, count=30, size_range=(5, 9), rng=spawn_rng(5))
    a = mine_greedy(target, model, idx, 4, seeds=30, rng=spawn_rng(6))
    b = mine_beam(target, model, idx, 4, beam_width=1, seeds=30, rng=spawn_rng(6))
    for size in a.by_size:
        assert [(g.key, g.occurrences, g.mean_penalty) for g in a.by_size[size]] == [
            (g.key, g.occurrences, g.mean_penalty) for g in b.by_size[size]
        ]
    assert a.meta["walks"] == b.meta["walks"]


def test_wider_beams_never_find_worse_best_penalty(model, target):
    idx = build_index(target, model, count=30, size_range=(5, 9), rng=spawn_rng(7))
    best = []
    for width in (1, 2, 4):
        res = mine_beam(target, model, idx, 4, beam_width=width, seeds=20, rng=spawn_rng(8))
        best.append(min(g.mean_penalty for g in res.groups))
    # checked on a fixed instance, as the property is stated for the desk benchmark
    assert best[0] >= best[1] - 1e-12 >= best[2] - 2e-12


def test_walks_grow_one_node_at_a_time(model, target):
    idx = build_index(target, model, count=10, size_range=(5, 9), rng=spawn_rng(9))
    res = mine_greedy(target, model, idx, 5, seeds=15, rng=spawn_rng(10))
    for walk in res.meta["walks"]:
        for a, b in zip(walk, walk[1:]):
            assert b[:-1] == a and len(b) == len(a) + 1


def test_mining_errors(model):
    idx = _index(np.ones((1, model.dim)))
    with pytest.raises(NoSeedsError):
        mine_greedy(disjoint_union([path(2), path(2)]), model, idx, 3, seeds=10)
    with pytest.raises(ValueError):
        mine_greedy(path(4), model, idx, 1)
    with pytest.raises(ValueError):
        mine_beam(path(4), model, idx, 3, beam_width=0)


def test_unique_motifs_merge_anchors(model):
    idx = _index(np.ones((1, model.dim)))
    res = mine_greedy(path(5), model, idx, 3, seeds=50, rng=spawn_rng(11))
    uniq = unique_motifs(res.groups)
    assert len(uniq) == 1
    assert uniq[0].occurrences == 50
    assert len(uniq[0].anchored) == len(res.groups)


# -- MCTS ----------------------------------------------------------------------------------------


def test_mcts_value_examples():
    assert mcts_value(0.0, 100) == 1.0
    assert mcts_value(100.0, 100) == pytest.approx(1 - math.log(2))
    assert mcts_value(100.0, 100, log_fn=math.log10) == pytest.approx(1 - math.log10(2))


def test_split_budget():
    assert split_budget(10, 4) == {2: 3, 3: 3, 4: 4}
    assert sum(split_budget(1000, 7).values()) == 1000


def test_mcts_accounting(model, target):
    idx = build_index(target, model, count=20, size_range=(5, 9), rng=spawn_rng(12))
    res = mine_mcts(target, model, idx, 4, simulations=61, rng=spawn_rng(13), seed_pool=10)
    assert res.meta["terminal_visits"] == res.meta["budget"]
    assert res.meta["seed_visits"] == 61
    for size, sims in res.meta["budget"].items():
        assert sum(g.occurrences for g in res.by_size[size]) == sims


def test_mcts_single_simulation(model):
    idx = _index(np.ones((1, model.dim)))
    res = mine_mcts(cycle(6), model, idx, 2, simulations=1, rng=spawn_rng(14))
    (group,) = res.groups
    assert group.occurrences == 1 and group.graph.edge_count == 1


def test_mcts_is_deterministic(model, target):
    idx = build_index(target, model, count=20, size_range=(5, 9), rng=spawn_rng(15))
    a = mine_mcts(target, model, idx, 4, simulations=40, rng=spawn_rng(16))
    b = mine_mcts(target, model, idx, 4, simulations=40, rng=spawn_rng(16))
    assert [(g.key, g.occurrences) for g in a.groups] == [(g.key, g.occurrences) for g in b.groups]


# -- report ----------------------------------------------------------------------------------------


def test_report_rows_and_csv(model, target, tmp_path):
    idx = build_index(target, model, count=20, size_range=(5, 9), rng=spawn_rng(17))
    res = mine_greedy(target, model, idx, 4, seeds=30, rng=spawn_rng(18))
    rows = report(res.top(10), target, verify_limit=3, model=model, index=idx)
    assert len(rows) <= 10
    assert all(r.estimated and r.exact_anchored_freq is None for r in rows)
    rows = report(res.top(10), target, verify_limit=6)
    for r in rows:
        assert r.exact_anchored_freq == anchored_frequency(r.graph, target) >= 1
        assert 0 <= r.exact_anchored_freq <= target.n
    text = report_csv(rows)
    header = "rank,size,canonical_key,occurrences,total_penalty,exact_anchored_freq,exact_graph_freq,estimated_flag"
    assert text.splitlines()[0] == header
    assert len(text.splitlines()) == len(rows) + 1
    write_report(rows, tmp_path / "out")
    assert len(list((tmp_path / "out" / "motifs").iterdir())) == len(rows)


def test_whole_target_as_motif_has_frequency_at_least_one(model):
    g = cycle(5, 0)
    idx = _index(np.ones((1, model.dim)))
    res = mine_greedy(g, model, idx, 5, seeds=3, rng=spawn_rng(19))
    (row,) = report(res.groups, g)
    assert row.exact_anchored_freq >= 1 and row.exact_graph_freq == 1


def test_penalty_of_motif_against_itself_is_zero(model):
    g = cycle(5, 0)
    assert penalty(embed(model, g), embed(model, g)) == 0.0
