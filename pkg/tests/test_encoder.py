import math

import numpy as np
import pytest

from conftest import complete, cycle, path
from motif_forge import autodiff as ad
from motif_forge.encoder import (
    EncoderModel,
    EvalSet,
    ModelConfig,
    TrainConfig,
    aupr,
    calibrate_threshold,
    classify_subgraph,
    embed,
    embed_many,
    loss_and_grads,
    margin_loss,
    pair_loss,
    penalties,
    penalty,
    train,
)
from motif_forge.graph import Graph
from motif_forge.synthgen import TrainingPair, random_graph, spawn_rng

SMALL = ModelConfig(hidden=8, layers=3, out_dim=6, mlp_layers=2)


def _loss_value(model, pairs, margin):
    with ad.Tape():
        loss, _ = pair_loss(model, pairs, margin)
    return loss.item()


@pytest.mark.parametrize("config", [SMALL, ModelConfig()], ids=["small", "default"])
def test_composite_gradient_matches_finite_differences(config):
    rng = spawn_rng(31)
    g = [random_graph(n, rng).with_anchor(0) for n in (5, 7, 9)]
    model = EncoderModel.initialize(config, seed=3)
    pairs = [TrainingPair(g[1], g[0], True), TrainingPair(g[1], g[2], False), TrainingPair(g[2], g[0], True)]
    # margin well above every negative penalty keeps the hinge active
    small = embed_many(model, [p.small for p in pairs])
    big = embed_many(model, [p.big for p in pairs])
    margin = float(penalties(small, big).max()) + 1.0
    _, grads = loss_and_grads(model, pairs, margin)
    pick = np.random.default_rng(0)
    h = 1e-5
    checked = 0
    for name in sorted(model.params):
        p = model.params[name]
        for _ in range(3):
            i = tuple(int(pick.integers(s)) for s in p.shape)
            old = p[i]
            p[i] = old + h
            up = _loss_value(model, pairs, margin)
            p[i] = old - h
            down = _loss_value(model, pairs, margin)
            p[i] = old
            num = (up - down) / (2 * h)
            scale = max(abs(num), abs(grads[name][i]), 1e-6)
            assert abs(num - grads[name][i]) / scale < 1e-4 or abs(num - grads[name][i]) < 1e-9, (name, i)
            checked += 1
    assert checked == 3 * len(model.params)


def test_skip_weights_start_uniform():
    model = EncoderModel.initialize(ModelConfig(), seed=0)
    for l in range(2, 9):
        ws = [model.params[f"skip.{i}.{l}"][0, 0] for i in range(1, l)]
        assert ws == [1.0 / (l - 1)] * (l - 1)
    assert not any(k.startswith("skip.") and k.endswith(".1") for k in model.params)


def test_embedding_shape_and_non_negativity():
    model = EncoderModel.initialize(ModelConfig(), seed=1)
    rng = spawn_rng(32)
    graphs = [random_graph(int(rng.integers(2, 20)), rng).with_anchor(0) for _ in range(39)] + [Graph(1, [], 0)]
    z = embed_many(model, graphs)
    assert z.shape == (40, 64)
    assert np.all(z >= 0)


def test_embedding_is_permutation_invariant():
    model = EncoderModel.initialize(ModelConfig(), seed=2)
    rng = np.random.default_rng(4)
    for n in (3, 8, 15, 25):
        g = random_graph(n, spawn_rng(n)).with_anchor(int(rng.integers(n)))
        z = embed(model, g)
        perm = list(rng.permutation(n))
        zp = embed(model, g.relabel(perm))
        assert np.max(np.abs(z - zp)) <= 1e-9 * max(1.0, np.max(np.abs(z)))


def test_identical_graphs_embed_identically():
    model = EncoderModel.initialize(SMALL, seed=5)
    g = cycle(6, 2)
    assert np.array_equal(embed(model, g), embed(model, Graph(6, g.edges, 2)))


def test_embed_rejects_missing_anchor():
    model = EncoderModel.initialize(SMALL)
    with pytest.raises(ValueError):
        embed(model, path(3))


def test_anchor_position_matters():
    model = EncoderModel.initialize(ModelConfig(), seed=0)
    assert not np.allclose(embed(model, path(3, 0)), embed(model, path(3, 1)))


# -- penalty and loss --------------------------------------------------------------------


def test_penalty_examples():
    rng = np.random.default_rng(6)
    for _ in range(20):
        x = rng.normal(size=8)
        assert penalty(x, x) == 0.0
    assert penalty([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert penalty([3.0, 1.0], [1.0, 2.0]) == 4.0
    with pytest.raises(ValueError):
        penalty([1.0], [1.0, 2.0])


def test_penalty_zero_both_ways_iff_equal():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a = rng.integers(0, 3, size=4).astype(float)
        b = rng.integers(0, 3, size=4).astype(float)
        both = penalty(a, b) == 0 and penalty(b, a) == 0
        assert both == np.array_equal(a, b)


def test_margin_loss_examples():
    x = ad.Tensor([[0.3, 0.7]])
    assert margin_loss(x, x, np.array([True]), 0.1).item() == 0.0
    # negative pair exactly at the margin: E = 0.25 = alpha
    a, b = ad.Tensor([[0.5, 0.0]]), ad.Tensor([[0.0, 0.0]])
    assert margin_loss(a, b, np.array([False]), 0.25).item() == 0.0
    assert margin_loss(a, b, np.array([False]), 1.0).item() == pytest.approx(0.75)
    assert margin_loss(a, b, np.array([True]), 1.0).item() == pytest.approx(0.25)
    mixed = margin_loss(ad.Tensor([[0.5, 0.0], [0.5, 0.0]]), ad.Tensor([[0.0, 0.0]] * 2), np.array([True, False]), 1.0)
    assert mixed.item() == pytest.approx((0.25 + 0.75) / 2)
    with pytest.raises(ValueError):
        margin_loss(ad.Tensor(np.zeros((0, 2))), ad.Tensor(np.zeros((0, 2))), np.array([], dtype=bool), 0.1)


def test_margin_loss_gradient_micro_batch():
    rng = np.random.default_rng(8)
    a0, b0 = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    labels = np.array([True, False, True, False])

    def value(a, b):
        return margin_loss(ad.Tensor(a), ad.Tensor(b), labels, 5.0).item()

    with ad.Tape() as tape:
        a, b = ad.Tensor(a0.copy(), requires_grad=True), ad.Tensor(b0.copy(), requires_grad=True)
        loss = margin_loss(a, b, labels, 5.0)
    tape.backward(loss)
    h = 1e-5
    for leaf, arr, first in ((a, a0, True), (b, b0, False)):
        for i in np.ndindex(arr.shape):
            up, down = arr.copy(), arr.copy()
            up[i] += h
            down[i] -= h
            num = (value(up, b0) - value(down, b0)) / (2 * h) if first else (value(a0, up) - value(a0, down)) / (2 * h)
            assert abs(num - leaf.grad[i]) <= 1e-4 * max(1.0, abs(num))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(margin=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=63)


# -- calibration and metrics ---------------------------------------------------------------


def test_calibration_separated_penalties_use_midpoint():
    pens = np.array([0.0, 0.0, 0.0, 0.1, 0.3, 0.2])
    labels = np.array([True, True, True, False, False, False])
    t, acc = calibrate_threshold(pens, labels)
    assert acc == 1.0
    assert t == pytest.approx(0.05)


def test_calibration_all_equal():
    t, acc = calibrate_threshold(np.full(6, 0.4), np.array([True, False] * 3))
    assert acc == 0.5 and t == 0.4


def test_calibration_rejects_single_class():
    with pytest.raises(ValueError):
        calibrate_threshold(np.array([0.1, 0.2]), np.array([True, True]))


def test_calibration_beats_every_observed_threshold():
    rng = np.random.default_rng(9)
    pens = np.round(rng.exponential(size=60), 1)
    labels = rng.random(60) < 0.5
    t, acc = calibrate_threshold(pens, labels)
    pos, neg = labels.sum(), (~labels).sum()

    def bal(th):
        pred = pens < th
        return 0.5 * ((pred & labels).sum() / pos + (~pred & ~labels).sum() / neg)

    assert acc == pytest.approx(bal(t))
    for th in np.r_[pens, pens + 1e-6]:
        assert bal(th) <= acc + 1e-12


def test_aupr_examples():
    assert aupr(np.array([0.0, 0.0, 1.0, 2.0]), np.array([True, True, False, False])) == pytest.approx(1.0)
    # one run of ties: single point at recall 1, precision 0.5
    assert aupr(np.zeros(4), np.array([True, False, True, False])) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        aupr(np.zeros(3), np.ones(3, dtype=bool))


def test_classify_subgraph_identity_and_uncalibrated():
    model = EncoderModel.initialize(SMALL, seed=0)
    with pytest.raises(ValueError):
        classify_subgraph(model, path(3, 0), path(3, 0))
    model.threshold = 1e-6
    ok, e = classify_subgraph(model, complete(4, 1), complete(4, 1))
    assert ok and e == 0.0


# -- training loop -------------------------------------------------------------------------


def _tiny_train(batches=5, eval_every=2, seed=0):
    cfg = TrainConfig(batch_size=8, batches=batches, eval_every=eval_every, seed=seed, holdout_pairs=20, validation_pairs=20)
    return train(cfg, model_config=SMALL)


def test_training_curve_cadence():
    for batches, every in ((5, 2), (6, 3), (1, 4)):
        res = _tiny_train(batches, every)
        assert len(res.curve) == math.ceil(batches / every) + 1
        assert res.curve[0].batch == 0 and res.curve[-1].batch == batches
        assert len(res.losses) == batches


def test_training_is_deterministic(tmp_path):
    a, b = _tiny_train(seed=4), _tiny_train(seed=4)
    a.model.save(tmp_path / "a.ckpt")
    b.model.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert a.model.threshold is not None


def test_checkpoint_round_trip_preserves_embeddings(tmp_path):
    model = _tiny_train().model
    model.save(tmp_path / "m.ckpt")
    back = EncoderModel.load(tmp_path / "m.ckpt")
    assert back.config == SMALL and back.threshold == model.threshold
    g = cycle(5, 0)
    assert np.array_equal(embed(back, g), embed(model, g))


def test_eval_set_is_seeded():
    a, b = EvalSet.generate(1, 9, 30), EvalSet.generate(1, 9, 30)
    assert [(p.small, p.big, p.label) for p in a.pairs] == [(p.small, p.big, p.label) for p in b.pairs]
    assert a.labels.sum() == 15
