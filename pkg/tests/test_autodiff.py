import numpy as np
import pytest

from lanesim import autodiff as ad
from lanesim.autodiff import Tensor


def numeric_grad(f, x, h=1e-6):
    """Central finite differences of scalar f at array x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f()
        flat[i] = keep - h
        down = f()
        flat[i] = keep
        gf[i] = (up - down) / (2 * h)
    return g


def check_op(build, *shapes, seed=0, tol=1e-6):
    """Compare reverse-mode grads of a scalar graph against finite differences."""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]
    loss = build(*tensors)
    loss.backward()
    for t in tensors:
        fd = numeric_grad(lambda: float(build(*tensors).data), t.data)
        got = t.grad if t.grad is not None else np.zeros_like(t.data)
        np.testing.assert_allclose(got, fd, rtol=tol, atol=tol)


def test_add_broadcast():
    check_op(lambda a, b: ad.sum_(ad.mul(ad.add(a, b), ad.add(a, b))), (3, 4), (4,))


def test_mul_broadcast():
    check_op(lambda a, b: ad.sum_(ad.mul(a, b)), (2, 3, 4), (3, 1))


def test_matmul_2d():
    check_op(lambda a, b: ad.sum_(ad.matmul(a, b)), (3, 4), (4, 5))


def test_matmul_batched_vs_2d_weight():
    check_op(lambda a, b: ad.sum_(ad.square(ad.matmul(a, b))), (2, 3, 4), (4, 5))


def test_matmul_fully_batched():
    check_op(lambda a, b: ad.sum_(ad.square(ad.matmul(a, b))), (2, 3, 4), (2, 4, 5))


def test_linear_matches_manual():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=2), requires_grad=True)
    out = ad.linear(x, w, b)
    np.testing.assert_allclose(out.data, x.data @ w.data + b.data)
    check_op(lambda xx, ww, bb: ad.sum_(ad.tanh(ad.linear(xx, ww, bb))), (5, 3), (3, 2), (2,))


def test_tanh_exp_log_square():
    check_op(lambda a: ad.sum_(ad.tanh(a)), (4, 4))
    check_op(lambda a: ad.sum_(ad.exp(a)), (3,))
    check_op(lambda a: ad.sum_(ad.log(ad.exp(a))), (3,))
    check_op(lambda a: ad.sum_(ad.square(a)), (5,))


def test_reductions():
    check_op(lambda a: ad.sum_(ad.square(ad.sum_(a, axis=1, keepdims=True))), (3, 4))
    check_op(lambda a: ad.sum_(ad.square(ad.mean(a, axis=0))), (3, 4))
    check_op(lambda a: ad.mean(ad.square(a)), (2, 5))


def test_reshape_swap_concat_getitem():
    check_op(lambda a: ad.sum_(ad.square(ad.reshape(a, (2, 6)))), (3, 4))
    check_op(lambda a: ad.sum_(ad.square(ad.swapaxes(a, 0, 1))), (3, 4))
    check_op(lambda a, b: ad.sum_(ad.square(ad.concat([a, b], axis=1))), (2, 3), (2, 2))
    check_op(lambda a: ad.sum_(ad.square(a[1:, :2])), (4, 3))


def test_clip_gradient_gate():
    x = Tensor(np.array([-2.0, 0.5, 2.0]), requires_grad=True)
    ad.sum_(ad.clip(x, -1.0, 1.0)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_minimum_routes_to_smaller_and_ties_to_first():
    a = Tensor(np.array([1.0, 5.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([3.0, 4.0, 2.0]), requires_grad=True)
    ad.sum_(ad.minimum(a, b)).backward()
    np.testing.assert_array_equal(a.grad, [1.0, 0.0, 1.0])
    np.testing.assert_array_equal(b.grad, [0.0, 1.0, 0.0])


def test_gather_last():
    logits = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    idx = np.array([0, 3, 1])
    out = ad.gather_last(logits, idx)
    np.testing.assert_array_equal(out.data[:, 0], [0.0, 7.0, 9.0])
    ad.sum_(ad.square(out)).backward()
    expected = np.zeros((3, 4))
    expected[[0, 1, 2], idx] = 2 * np.array([0.0, 7.0, 9.0])
    np.testing.assert_array_equal(logits.grad, expected)


def test_softmax_probability_vector():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(6, 9)) * 5)
    y = ad.softmax(x, axis=-1)
    np.testing.assert_allclose(y.data.sum(axis=-1), 1.0, atol=1e-12)
    check_op(lambda a: ad.sum_(ad.square(ad.softmax(a, axis=-1))), (3, 5))


def test_masked_softmax_zeroes_masked_entries():
    x = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]), requires_grad=True)
    mask = np.array([[True, False, True, True]])
    y = ad.softmax(x, axis=-1, mask=mask)
    assert y.data[0, 1] == 0.0
    np.testing.assert_allclose(y.data.sum(), 1.0, atol=1e-15)
    ad.sum_(ad.square(y)).backward()
    assert x.grad[0, 1] == 0.0


def test_log_softmax():
    check_op(lambda a: ad.sum_(ad.square(ad.log_softmax(a, axis=-1))), (4, 6))
    x = Tensor(np.array([[1000.0, 0.0]]))
    y = ad.log_softmax(x, axis=-1)
    assert np.isfinite(y.data).all()


def test_no_grad_suppresses_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.mul(x, 2.0)
    assert y._backward is None and not y.requires_grad


def test_backward_requires_scalar_and_finite():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.mul(x, 2.0).backward()
    with np.errstate(invalid="ignore"):
        bad = ad.log(Tensor(np.array(-1.0)))
    with pytest.raises(FloatingPointError):
        ad.add(bad, Tensor(np.array(0.0))).backward()


def test_grad_accumulates_across_uses():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = ad.add(ad.mul(x, 3.0), ad.square(x))
    ad.sum_(y).backward()
    np.testing.assert_allclose(x.grad, [3.0 + 4.0])
