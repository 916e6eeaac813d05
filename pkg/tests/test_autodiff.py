import numpy as np
import pytest

from helpers import numeric_grad
from scadabridge.pinn import autodiff as ad
from scadabridge.pinn.autodiff import Tensor

RNG = np.random.default_rng(0)


def _check(build, *shapes, positive=False, tol=1e-6):
    arrays = [RNG.uniform(0.5, 1.5, s) if positive else RNG.normal(size=s) for s in shapes]
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    w = RNG.normal(size=build(*ts).shape)

    def value():
        return float(np.sum(build(*[Tensor(a) for a in arrays]).data * w))

    out = build(*ts)
    ad.sum(out * w).backward()
    for t, a in zip(ts, arrays):
        num = numeric_grad(value, a)
        np.testing.assert_allclose(t.grad, num, rtol=tol, atol=tol)


@pytest.mark.parametrize("build,shapes", [
    (lambda a, b: a + b, [(3, 4), (4,)]),
    (lambda a, b: a - b, [(2, 3, 4), (3, 1)]),
    (lambda a, b: a * b, [(3, 4), (1, 4)]),
    (lambda a, b: a @ b, [(2, 3, 4), (4, 5)]),
    (lambda a, b: a @ b, [(2, 3, 4), (2, 4, 2)]),
    (lambda a: ad.transpose(a), [(2, 3, 4)]),
    (lambda a: ad.reshape(a, (6, 2)), [(3, 4)]),
    (lambda a: ad.sum(a, axis=1, keepdims=True), [(3, 4)]),
    (lambda a: ad.mean(a, axis=-1), [(2, 3, 4)]),
    (lambda a: ad.exp(a), [(3, 3)]),
    (lambda a: ad.sin(a), [(3, 3)]),
    (lambda a: ad.cos(a), [(3, 3)]),
    (lambda a: ad.tanh(a), [(3, 3)]),
    (lambda a: ad.softmax(a, axis=-1), [(2, 3, 4)]),
    (lambda a: a[:, 1:, :] - a[:, :-1, :] * 2.0, [(2, 4, 3)]),
    (lambda a, b: ad.concat([a, b], axis=-1), [(2, 3), (2, 4)]),
])
def test_op_gradients(build, shapes):
    _check(build, *shapes)


@pytest.mark.parametrize("build,shapes", [
    (lambda a, b: a / b, [(3, 4), (3, 4)]),
    (lambda a: ad.log(a), [(3, 3)]),
    (lambda a: ad.sqrt(a), [(3, 3)]),
    (lambda a: a ** 3, [(3, 3)]),
])
def test_positive_domain_gradients(build, shapes):
    _check(build, *shapes, positive=True)


def test_clip_gradient_masks():
    a = Tensor(np.array([-2.0, 0.0, 2.0]), requires_grad=True)
    ad.sum(ad.clip(a, -1.0, 1.0)).backward()
    np.testing.assert_array_equal(a.grad, [0.0, 1.0, 0.0])


def test_shared_subexpression_accumulates():
    a = Tensor(np.array([3.0]), requires_grad=True)
    b = a * a
    ad.sum(b + b).backward()
    assert a.grad[0] == pytest.approx(12.0)


def test_softmax_rows_sum_to_one():
    s = ad.softmax(Tensor(RNG.normal(size=(5, 7)) * 30), axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-9)
