import numpy as np
import pytest

from crysgen import autodiff as ad


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat array."""
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def test_add_elementwise():
    out = ad.add(ad.Tensor([1.0, 2.0]), ad.Tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_matmul_identity():
    m = np.arange(9.0).reshape(3, 3)
    out = ad.matmul(ad.Tensor(np.eye(3)), ad.Tensor(m))
    np.testing.assert_array_equal(out.data, m)


def test_softmax_symmetry():
    out = ad.softmax(ad.Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=1e-15)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        ad.add(ad.Tensor([1.0, 2.0]), ad.Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))


def test_square_gradient():
    x = ad.parameter(3.0)
    loss = ad.mul(x, x)
    loss.backward()
    assert x.grad == pytest.approx(6.0)


def test_linear_map_gradient():
    w = ad.parameter(np.ones((2, 3)))
    v = ad.Tensor([[1.0], [2.0], [3.0]])
    loss = ad.sum_(ad.matmul(w, v))
    loss.backward()
    np.testing.assert_allclose(w.grad, np.broadcast_to([1.0, 2.0, 3.0], (2, 3)))


def test_non_scalar_loss_rejected():
    x = ad.parameter([1.0, 2.0])
    with pytest.raises(ValueError):
        ad.backward(ad.mul(x, x))


def test_double_backward_rejected():
    x = ad.parameter([1.0, 2.0])
    loss = ad.sum_(ad.mul(x, x))
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_shared_subgraph_backward_rejected():
    x = ad.parameter([1.0, 2.0])
    y = ad.mul(x, x)
    ad.sum_(y).backward()
    with pytest.raises(RuntimeError):
        ad.sum_(ad.mul(y, 2.0)).backward()


def test_gather_rows_gradient():
    table = ad.parameter(np.arange(12.0).reshape(4, 3))
    out = ad.gather_rows(table, [1, 1, 3])
    ad.sum_(out).backward()
    expected = np.zeros((4, 3))
    expected[1] = 2.0
    expected[3] = 1.0
    np.testing.assert_array_equal(table.grad, expected)


_UNARY_AD = [ad.tanh, ad.sin, ad.cos, lambda t: ad.mul(t, 0.5), lambda t: ad.add(t, 0.1)]
_UNARY_NP = [np.tanh, np.sin, np.cos, lambda t: t * 0.5, lambda t: t + 0.1]


def _random_graph(seed: int):
    """Random composition of supported ops, evaluable both symbolically and numerically."""
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(2, 6))
    width = int(rng.integers(2, 9))
    unary = [int(u) for u in rng.integers(0, len(_UNARY_AD), size=depth)]
    n_params = width * width * depth + width
    flat0 = rng.normal(scale=0.5, size=n_params)

    def split(flat):
        mats = [flat[k * width * width:(k + 1) * width * width].reshape(width, width)
                for k in range(depth)]
        v0 = flat[depth * width * width:].reshape(width, 1)
        return mats, v0

    def loss_tensor(flat):
        mats, v0 = split(flat)
        params = [ad.parameter(m) for m in mats] + [ad.parameter(v0)]
        x = params[-1]
        for w, u in zip(params[:depth], unary):
            x = _UNARY_AD[u](ad.matmul(w, x))
        loss = ad.softmax(x, axis=0).mean() + ad.sum_(ad.mul(x, x))
        return loss, params

    def loss_numeric(flat):
        mats, v0 = split(flat)
        x = v0
        for m, u in zip(mats, unary):
            x = _UNARY_NP[u](m @ x)
        soft = np.exp(x - x.max())
        soft = soft / soft.sum()
        return soft.mean() + (x * x).sum()

    return loss_tensor, loss_numeric, flat0


def test_random_graphs_match_finite_differences():
    """Gradients of 100 random op compositions agree with central differences."""
    worst = 0.0
    for seed in range(100):
        loss_tensor, loss_numeric, flat0 = _random_graph(seed)
        loss, params = loss_tensor(flat0)
        loss.backward()
        grad_ad = np.concatenate([p.grad.ravel() for p in params])
        grad_fd = finite_diff_grad(loss_numeric, flat0)
        denom = np.maximum(np.maximum(np.abs(grad_fd), np.abs(grad_ad)), 1e-3)
        rel = np.max(np.abs(grad_ad - grad_fd) / denom)
        worst = max(worst, rel)
    assert worst < 1e-4


def test_relu_gradient_at_safe_points():
    x = ad.parameter([-1.5, 0.5, 2.0])
    ad.sum_(ad.mul(ad.relu(x), ad.Tensor([1.0, 2.0, 3.0]))).backward()
    np.testing.assert_allclose(x.grad, [0.0, 2.0, 3.0])


def test_log_softmax_matches_manual():
    x = ad.parameter(np.array([[0.3, -1.2, 2.0]]))
    out = ad.log_softmax(x)
    manual = x.data - np.log(np.exp(x.data).sum())
    np.testing.assert_allclose(out.data, manual, atol=1e-12)
    ad.sum_(ad.mul(out, out)).backward()
    fd = finite_diff_grad(
        lambda f: ((f.reshape(1, 3) - np.log(np.exp(f).sum())) ** 2).sum(), x.data.ravel().copy()
    )
    np.testing.assert_allclose(x.grad.ravel(), fd, atol=1e-7)
