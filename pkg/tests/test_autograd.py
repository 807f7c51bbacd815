import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pedcross.autograd import Tensor, concat, no_grad, stack
from pedcross.gradcheck import GradCheckError, grad_check


def test_tensor_defaults_to_float32():
    t = Tensor([1, 2, 3])
    assert t.dtype == np.float32
    assert Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float64


def test_backward_requires_scalar():
    t = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (t * 2.0).backward()


def test_simple_chain_gradients():
    x = Tensor([2.0, -3.0], requires_grad=True)
    y = ((x * x) * 3.0).sum()
    y.backward()
    np.testing.assert_allclose(x.grad, [12.0, -18.0], rtol=1e-6)


def test_broadcast_gradient_unbroadcasts():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    (a + b).sum().backward()
    assert a.grad.shape == (3, 4)
    assert b.grad.shape == (4,)
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))


def test_grad_accumulates_across_uses():
    x = Tensor([1.0], requires_grad=True)
    y = (x * 2.0 + x * 5.0).sum()
    y.backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_no_grad_builds_no_graph():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = (x * x).sum()
    assert y._backward is None and not y.requires_grad


def test_matmul_shape_error_names_shapes():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((4, 2)))
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 2\)"):
        a @ b


def test_concat_and_stack_gradients(rng):
    a = Tensor(rng.standard_normal((2, 3)).astype(np.float64),
               requires_grad=True)
    b = Tensor(rng.standard_normal((2, 3)).astype(np.float64),
               requires_grad=True)

    def loss():
        c = concat([a, b], axis=1)
        s = stack([a, b], axis=0)
        return (c ** 2).sum() + (s ** 3).sum()

    assert grad_check(loss, [("a", a), ("b", b)], tol=1e-6).ok


def test_getitem_gradient(rng):
    x = Tensor(rng.standard_normal((4, 5)).astype(np.float64),
               requires_grad=True)

    def loss():
        return (x[1:3, ::2] ** 2).sum()

    assert grad_check(loss, [("x", x)], tol=1e-6).ok


@given(st.integers(0, 2 ** 31 - 1))
def test_elementwise_grads_match_finite_differences(seed):
    r = np.random.default_rng(seed)
    x = Tensor(r.standard_normal((3, 4)) + 2.5, requires_grad=True)

    def loss():
        from pedcross.autograd import exp, log, sqrt

        return (exp(x * 0.3) + log(x + 5.0) + sqrt(x + 6.0) / x).sum()

    assert grad_check(loss, [("x", x)], tol=1e-6).ok


def test_forward_determinism_bitwise(rng):
    x = Tensor(rng.standard_normal((8, 8)).astype(np.float32))
    w = Tensor(rng.standard_normal((8, 8)).astype(np.float32))
    a = ((x @ w) * 1.7).numpy().copy()
    b = ((x @ w) * 1.7).numpy().copy()
    assert np.array_equal(a, b)


def test_gradcheck_detects_corrupted_backward():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)

    def loss():
        from pedcross.autograd import _make

        def backward(g):
            # deliberately wrong: analytic gradient scaled by 1.01
            x._accumulate(g * 2.0 * x.data * 1.01)

        return _make((x.data ** 2).sum(), (x,), backward)

    report = grad_check(loss, [("x", x)], tol=1e-4)
    assert not report.ok


def test_gradcheck_aborts_on_nonfinite_loss():
    x = Tensor(np.array([1.0]), requires_grad=True)

    def loss():
        from pedcross.autograd import log

        return log(x - 2.0).sum()  # log of a negative number

    with pytest.raises(GradCheckError, match="not finite"):
        grad_check(loss, [("x", x)])


def test_backward_leaves_finite_grads_everywhere(rng):
    from pedcross import functional as F

    x = Tensor(rng.standard_normal((4, 6)).astype(np.float32),
               requires_grad=True)
    w = Tensor(rng.standard_normal((6, 3)).astype(np.float32),
               requires_grad=True)
    (F.softmax(F.gelu(F.linear(x, w)), axis=-1) ** 2).sum().backward()
    for t in (x, w):
        assert t.grad is not None and np.all(np.isfinite(t.grad))
