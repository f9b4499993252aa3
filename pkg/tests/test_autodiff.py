import numpy as np
import pytest
import scipy.sparse as sp

from motif_forge import autodiff as ad


def _numeric_grad(fn, arrays, idx, h=1e-5):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. ``arrays[idx]``."""
    x = arrays[idx]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = fn(*arrays)
        x[i] = old - h
        down = fn(*arrays)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def _check(op, shapes, rng, tol=1e-5, positive=False, **kw):
    arrays = [rng.normal(size=s) for s in shapes]
    if positive:
        arrays = [np.abs(a) + 0.1 for a in arrays]
    # random projection turns any output into a scalar
    out_shape = op(*[ad.Tensor(a) for a in arrays], **kw).shape
    proj = rng.normal(size=out_shape)

    def scalar(*arrs):
        return float(np.sum(op(*[ad.Tensor(a) for a in arrs], **kw).data * proj))

    with ad.Tape() as tape:
        leaves = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
        loss = ad.sum_all(ad.mul_const(op(*leaves, **kw), proj))
    tape.backward(loss)
    for i, leaf in enumerate(leaves):
        num = _numeric_grad(scalar, arrays, i)
        rel = np.max(np.abs(num - leaf.grad)) / max(1.0, np.max(np.abs(num)))
        assert rel < tol, (op.__name__, i, rel)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_matmul_gradient_5x4_4x3(rng):
    _check(ad.matmul, [(5, 4), (4, 3)], rng, tol=1e-6)


@pytest.mark.parametrize("trial", range(3))
def test_primitive_gradients(trial):
    rng = np.random.default_rng(100 + trial)
    r, c = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    _check(ad.add, [(r, c), (r, c)], rng)
    _check(ad.add, [(r, c), (1, c)], rng)
    _check(ad.sub, [(r, c), (r, c)], rng)
    _check(ad.relu, [(r, c)], rng)
    _check(ad.leaky_relu, [(r, c)], rng)
    _check(ad.hinge, [(r, c), (r, c)], rng)
    _check(ad.absolute, [(r, c)], rng)
    _check(lambda a, b: ad.concat([a, b]), [(r, c), (r, 2)], rng)
    _check(lambda x: ad.scale(x, 0.7), [(r, c)], rng)
    _check(ad.scalar_mul, [(r, c), (1, 1)], rng)
    _check(lambda x: ad.add_scalar(x, 2.0), [(r, c)], rng)
    _check(ad.row_sq_norm, [(r, c)], rng)
    _check(ad.sum_all, [(r, c)], rng)
    _check(ad.mean_all, [(r, c)], rng)
    _check(ad.linear, [(r, c), (c, 3), (1, 3)], rng)
    s = sp.random(4, r, density=0.5, random_state=trial, format="csr")
    _check(lambda x: ad.spmm(s, x), [(r, c)], rng)
    _check(lambda x: ad.segment_sum(x, np.arange(r) % 2, 2), [(r, c)], rng)
    const = rng.normal(size=(r, c))
    _check(lambda x: ad.mul_const(x, const), [(r, c)], rng)


def test_relu_subgradient_convention():
    with ad.Tape() as tape:
        x = ad.Tensor([[-1.0, 0.0, 2.0]], requires_grad=True)
        loss = ad.sum_all(ad.relu(x))
    tape.backward(loss)
    assert x.grad.tolist() == [[0.0, 0.0, 1.0]]


def test_hinge_zero_at_tie():
    with ad.Tape() as tape:
        a = ad.Tensor([[1.0, 2.0]], requires_grad=True)
        b = ad.Tensor([[1.0, 1.0]], requires_grad=True)
        loss = ad.sum_all(ad.hinge(a, b))
    tape.backward(loss)
    assert a.grad.tolist() == [[0.0, 1.0]]
    assert b.grad.tolist() == [[0.0, -1.0]]


def test_concat_splits_gradient():
    with ad.Tape() as tape:
        a = ad.Tensor(np.ones((2, 2)), requires_grad=True)
        b = ad.Tensor(np.ones((2, 3)), requires_grad=True)
        weights = np.arange(10.0).reshape(2, 5)
        loss = ad.sum_all(ad.mul_const(ad.concat([a, b]), weights))
    tape.backward(loss)
    assert np.array_equal(np.hstack([a.grad, b.grad]), weights)


def test_shape_errors():
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError):
        ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((3, 3))))
    with pytest.raises(ad.ShapeError):
        ad.Tensor(np.ones((2, 2, 2)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_forward_is_reported():
    with pytest.raises(ad.NonFiniteError):
        with ad.Tape():
            x = ad.Tensor([[1e308]], requires_grad=True)
            ad.scale(x, 10.0)


# -- Adam ------------------------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    state = ad.AdamState()
    params = {"w": np.array([[0.5, -1.0]])}
    out = ad.adam_step(state, params, {"w": np.zeros((1, 2))})
    assert np.array_equal(out["w"], params["w"])


def test_adam_first_step_by_hand():
    lr, eps = 1e-4, 1e-8
    state = ad.AdamState(lr=lr, eps=eps)
    out = ad.adam_step(state, {"w": np.array([[0.0]])}, {"w": np.array([[1.0]])})
    # m_hat = 1, v_hat = 1 after bias correction
    assert out["w"][0, 0] == pytest.approx(-lr * 1.0 / (1.0 + eps), rel=1e-12)


def test_adam_second_step_by_hand():
    state = ad.AdamState(lr=0.1)
    p = {"w": np.array([[1.0]])}
    p = ad.adam_step(state, p, {"w": np.array([[2.0]])})
    p = ad.adam_step(state, p, {"w": np.array([[-1.0]])})
    m = 0.9 * (0.1 * 2.0) + 0.1 * -1.0
    v = 0.999 * (0.001 * 4.0) + 0.001 * 1.0
    m_hat = m / (1 - 0.9**2)
    v_hat = v / (1 - 0.999**2)
    expected = 1.0 - 0.1 * 2 / (2 + 1e-8) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert p["w"][0, 0] == pytest.approx(expected, rel=1e-12)


def test_adam_rejects_non_finite_gradient():
    state = ad.AdamState()
    with pytest.raises(ad.NonFiniteError, match="'bad'"):
        ad.adam_step(state, {"bad": np.zeros((1, 1))}, {"bad": np.array([[np.nan]])})
    assert state.step == 0


def test_adam_is_deterministic():
    def run():
        rng = np.random.default_rng(4)
        state = ad.AdamState(lr=1e-2)
        p = {"w": rng.normal(size=(3, 3))}
        for _ in range(100):
            p = ad.adam_step(state, p, {"w": 2 * p["w"] + rng.normal(size=(3, 3))})
        return p["w"]

    assert np.array_equal(run(), run())


# -- checkpoints ------------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {"b": rng.normal(size=(1, 4)), "a.w": rng.normal(size=(3, 2))}
    ad.save_tensors(tmp_path / "m.ckpt", tensors, {"hidden": 4})
    back, meta = ad.load_tensors(tmp_path / "m.ckpt")
    assert meta == {"hidden": 4}
    assert set(back) == set(tensors)
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw.startswith(ad.MAGIC)


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "x").write_bytes(b"hello world")
    with pytest.raises(ValueError):
        ad.load_tensors(tmp_path / "x")
