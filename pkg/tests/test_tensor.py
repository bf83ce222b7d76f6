"""Backward-pass oracles for every primitive, plus the gradient checker."""

import math

import numpy as np
import pytest

import lgdn.tensor as T
from lgdn.errors import (NearZeroNorm, NonFiniteLoss, NonFiniteTensor,
                         ShapeMismatch)
from lgdn.tensor import Tensor, grad_check, no_grad, parameter


def _rand(rng, shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, size=shape)


# one scalar-valued closure per primitive; weights make the reduction
# direction-sensitive so a wrong Jacobian cannot hide in a symmetric sum
PRIMITIVES = {
    "add": lambda a, b, w: T.tsum(T.add(a, b) * w),
    "add_bias": lambda a, v, w: T.tsum(T.add(a, v) * w),
    "sub": lambda a, b, w: T.tsum(T.sub(a, b) * w),
    "mul": lambda a, b, w: T.tsum(T.mul(a, b) * w),
    "div": lambda a, p, w: T.tsum(T.div(a, p) * w),
    "scale": lambda a, w: T.tsum(T.scale(a, -1.7) * w),
    "exp": lambda a, w: T.tsum(T.texp(a) * w),
    "log": lambda p, w: T.tsum(T.tlog(p) * w),
    "tanh": lambda a, w: T.tsum(T.ttanh(a) * w),
    "sqrt": lambda p, w: T.tsum(T.tsqrt(p) * w),
    "matmul": lambda a, b, w: T.tsum(T.matmul(a, b) * w),
    "softmax": lambda a, w: T.tsum(T.softmax(a, axis=-1) * w),
    "logsumexp": lambda a, w: T.tsum(T.logsumexp(a, axis=-1) * w),
    "mean": lambda a, w: T.tsum(T.tmean(a, axis=0) * w),
    "concat": lambda a, b, w: T.tsum(T.concat([a, b], axis=0) * w),
    "take_row": lambda a, w: T.tsum(T.take_row(a, 1) * w),
    "slice_rows": lambda a, w: T.tsum(T.slice_rows(a, 1, 3) * w),
    "transpose": lambda a, w: T.tsum(T.transpose(a) * w),
    "reshape": lambda a, w: T.tsum(T.reshape(a, (12,)) * w),
    "l2_normalize": lambda v, w: T.tsum(T.l2_normalize(v) * w),
    "layer_norm": lambda a, g, b, w: T.tsum(T.layer_norm(a, g, b) * w),
    "affine": lambda a, m, v, w: T.tsum(T.affine(a, m, v) * w),
    "attention_core": lambda q, k, v, w: T.tsum(
        T.attention_core(q, k, v, np.array([0.0, 0.0, -1e30]), 0.7) * w),
}


@pytest.mark.parametrize("seed", range(100))
def test_every_primitive_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    a = parameter(_rand(rng, (3, 4)))
    b = parameter(_rand(rng, (3, 4)))
    pos = parameter(_rand(rng, (3, 4), lo=0.5, hi=2.0))
    vec = parameter(_rand(rng, (4,)))
    mat = parameter(_rand(rng, (4, 3)))
    q = parameter(_rand(rng, (2, 4)))
    kv = parameter(_rand(rng, (3, 4)))

    cases = {
        "add": (a, b, T.constant(_rand(rng, (3, 4)))),
        "add_bias": (a, vec, T.constant(_rand(rng, (3, 4)))),
        "sub": (a, b, T.constant(_rand(rng, (3, 4)))),
        "mul": (a, b, T.constant(_rand(rng, (3, 4)))),
        "div": (a, pos, T.constant(_rand(rng, (3, 4)))),
        "scale": (a, T.constant(_rand(rng, (3, 4)))),
        "exp": (a, T.constant(_rand(rng, (3, 4)))),
        "log": (pos, T.constant(_rand(rng, (3, 4)))),
        "tanh": (a, T.constant(_rand(rng, (3, 4)))),
        "sqrt": (pos, T.constant(_rand(rng, (3, 4)))),
        "matmul": (a, mat, T.constant(_rand(rng, (3, 3)))),
        "softmax": (a, T.constant(_rand(rng, (3, 4)))),
        "logsumexp": (a, T.constant(_rand(rng, (3,)))),
        "mean": (a, T.constant(_rand(rng, (4,)))),
        "concat": (a, b, T.constant(_rand(rng, (6, 4)))),
        "take_row": (a, T.constant(_rand(rng, (4,)))),
        "slice_rows": (a, T.constant(_rand(rng, (2, 4)))),
        "transpose": (a, T.constant(_rand(rng, (4, 3)))),
        "reshape": (a, T.constant(_rand(rng, (12,)))),
        "l2_normalize": (vec, T.constant(_rand(rng, (4,)))),
        "layer_norm": (a, parameter(_rand(rng, (4,))),
                       parameter(_rand(rng, (4,))), T.constant(_rand(rng, (3, 4)))),
        "affine": (a, mat, parameter(_rand(rng, (3,))),
                   T.constant(_rand(rng, (3, 3)))),
        "attention_core": (q, kv, parameter(_rand(rng, (3, 4))),
                           T.constant(_rand(rng, (2, 4)))),
    }
    for name, fn in PRIMITIVES.items():
        args = cases[name]
        params = [t for t in args if t.requires_grad]
        err = grad_check(lambda: fn(*args), params, eps=1e-5)
        assert err < 1e-5, f"{name}: rel err {err}"


def test_softmax_rows_sum_to_one_and_positive():
    rng = np.random.default_rng(0)
    x = T.constant(rng.uniform(-30, 30, size=(50, 7)))
    s = T.softmax(x, axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    assert (s > 0).all()


def test_gradient_accumulation_matches_algebraic_rewrite():
    # y = x*a + x*b must give the same x-gradient as y = x*(a+b)
    rng = np.random.default_rng(1)
    vals = rng.normal(size=(3, 3))
    a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))

    x1 = parameter(vals.copy())
    T.tsum(x1 * T.constant(a) + x1 * T.constant(b)).backward()
    x2 = parameter(vals.copy())
    T.tsum(x2 * T.constant(a + b)).backward()
    np.testing.assert_allclose(x1.grad, x2.grad, atol=1e-12)


def test_backward_reverse_order_single_visit():
    visits = []
    x = parameter(np.array(2.0))

    def spy(node, inner):
        def vjp(g):
            visits.append(node)
            return inner(g)
        return vjp

    y = T.texp(x)
    y._vjp = spy("exp", y._vjp)
    z = T.tlog(y)
    z._vjp = spy("log", z._vjp)
    z.backward()
    assert visits == ["log", "exp"]
    np.testing.assert_allclose(x.grad, 1.0, atol=1e-15)  # log(exp(x)) = x


def test_non_finite_values_rejected():
    with pytest.raises(NonFiniteTensor):
        Tensor(np.array([1.0, np.nan]))
    with pytest.raises(NonFiniteTensor):
        Tensor(np.array([np.inf]))
    with pytest.raises(NonFiniteTensor):
        T.tlog(T.constant(np.array([0.0])))  # -inf output


def test_no_grad_builds_no_graph():
    x = parameter(np.ones(3))
    with no_grad():
        y = T.tsum(x * x)
    assert not y.requires_grad and y._parents == ()


def test_l2_normalize_examples():
    out = T.l2_normalize(T.constant([3.0, 4.0]))
    np.testing.assert_allclose(out.data, [0.6, 0.8], atol=1e-15)

    u = np.array([1.0, 0.0, 0.0])
    np.testing.assert_allclose(T.l2_normalize(T.constant(u)).data, u, atol=1e-15)

    with pytest.raises(NearZeroNorm):
        T.l2_normalize(T.constant([0.0, 0.0]))


def test_cosine_examples():
    v = T.constant([0.3, -1.2, 2.0])
    assert T.cosine(v, v).item() == pytest.approx(1.0, abs=1e-12)
    assert T.cosine(T.constant([1.0, 0.0]),
                    T.constant([0.0, 1.0])).item() == pytest.approx(0.0, abs=1e-12)
    assert T.cosine(T.constant([1.0, 0.0]),
                    T.constant([-1.0, 0.0])).item() == pytest.approx(-1.0, abs=1e-12)
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = T.constant(rng.normal(size=5))
        b = T.constant(rng.normal(size=5))
        assert -1.0 - 1e-12 <= T.cosine(a, b).item() <= 1.0 + 1e-12


class TestGradCheck:
    def test_exact_polynomial(self):
        rng = np.random.default_rng(7)
        x = parameter(rng.normal(size=6))
        err = grad_check(lambda: T.tsum(x * x), [x], eps=1e-5)
        assert err < 1e-8

    def test_softmax_cross_entropy_matches_hand_derivation(self):
        logits = parameter(np.array([1.0, 2.0, 3.0]))
        target = 2

        def f():
            return T.logsumexp(logits) - T.element(logits, target)

        err = grad_check(f, [logits], eps=1e-5)
        assert err < 1e-5
        loss = f()
        logits.zero_grad()
        loss.backward()
        p = np.exp(logits.data - logits.data.max())
        p /= p.sum()
        onehot = np.eye(3)[target]
        np.testing.assert_allclose(logits.grad, p - onehot, atol=1e-12)

    def test_eps_bounds_enforced(self):
        x = parameter(np.ones(2))
        with pytest.raises(ValueError):
            grad_check(lambda: T.tsum(x), [x], eps=1e-2)

    def test_non_finite_loss_raises(self):
        x = parameter(np.array([0.0]))
        with pytest.raises((NonFiniteLoss, NonFiniteTensor)):
            grad_check(lambda: T.tsum(T.tlog(x)), [x], eps=1e-5)

    def test_scalar_required(self):
        x = parameter(np.ones(3))
        with pytest.raises(ShapeMismatch):
            grad_check(lambda: x * x, [x], eps=1e-5)


def test_loss_mvcl_two_pair_gradcheck():
    # raw parameter vectors, normalized inside the closure so the check
    # covers the normalization Jacobian as well
    from lgdn.objectives import ContrastiveBatch, loss_mvcl

    rng = np.random.default_rng(11)
    raw = [parameter(rng.normal(size=6)) for _ in range(4)]
    mom_v = [rng.normal(size=6) for _ in range(2)]
    mom_l = [rng.normal(size=6) for _ in range(2)]
    mom_v = [v / np.linalg.norm(v) for v in mom_v]
    mom_l = [v / np.linalg.norm(v) for v in mom_l]
    bank_v = np.stack([v / np.linalg.norm(v) for v in rng.normal(size=(2, 6))])
    bank_l = np.stack([v / np.linalg.norm(v) for v in rng.normal(size=(2, 6))])

    def f():
        batch = ContrastiveBatch(
            video=[T.l2_normalize(raw[0]), T.l2_normalize(raw[1])],
            text=[T.l2_normalize(raw[2]), T.l2_normalize(raw[3])],
            mom_video=mom_v, mom_text=mom_l,
            frames=[[], []], mom_frames=[None, None],
            salient=[[], []], tau=0.07,
        )
        return loss_mvcl(batch, bank_v, bank_l).total

    assert grad_check(f, raw, eps=1e-5) < 1e-4
