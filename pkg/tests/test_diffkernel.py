import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnhp import diffkernel as dk
from bnhp.errors import NonFinite, UnsupportedPrimitive


def test_forward_tau_softplus_example():
    val, d = dk.forward_tau(lambda t: dk.softplus(2.0 * t), tau=0.0)
    assert val == pytest.approx(math.log(2.0))
    assert d == pytest.approx(1.0)


def test_forward_tau_constant():
    val, d = dk.forward_tau(lambda t, c: c, 3.0, tau=1.0)
    assert val == 3.0 and d == 0.0


def test_value_and_grad_quadratic():
    w = {"a": np.array([1.0, -2.0, 3.0])}
    val, g = dk.value_and_grad(lambda v: dk.sum_(dk.square(v["a"])), w)
    assert val == pytest.approx(14.0)
    assert np.allclose(g["a"], [2.0, -4.0, 6.0])


def test_unused_weight_has_zero_grad():
    w = {"a": np.ones(2), "b": np.ones(3)}
    _, g = dk.value_and_grad(lambda v: dk.sum_(v["a"] * 2.0), w)
    assert np.array_equal(g["b"], np.zeros(3))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss():
    with pytest.raises(NonFinite):
        dk.value_and_grad(lambda v: dk.sum_(dk.log(v["a"])), {"a": np.array([0.0])})


def test_unsupported_power():
    tape = dk.Tape()
    x = tape.var(1.0)
    with pytest.raises(UnsupportedPrimitive):
        x ** 3
    with pytest.raises(UnsupportedPrimitive):
        tape.apply("erf", x)


def test_cross_tape_rejected():
    a, b = dk.Tape().var(1.0), dk.Tape().var(2.0)
    with pytest.raises(UnsupportedPrimitive):
        a + b


def test_replay_reproduces_forward():
    tape = dk.Tape()
    x = tape.var(np.array([[0.3, -0.2]]))
    W = tape.var(np.array([[1.0], [2.0]]))
    y = dk.tanh(x @ W)
    assert tape.replay()[y.index] == pytest.approx(y.value)


def test_softplus_stable_for_large_inputs():
    assert dk.softplus(np.array(800.0)) == pytest.approx(800.0)
    assert dk.softplus(np.array(-800.0)) == 0.0
    assert dk.sigmoid(np.array(-800.0)) == pytest.approx(0.0)


def _mlp_loss(v, x):
    h = dk.tanh(x @ v["W1"] + v["b1"])
    out = dk.softplus(h @ v["W2"])
    return dk.sum_(dk.log(out) - out)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_matches_central_difference(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3))
    w = {"W1": rng.normal(size=(3, 5)), "b1": rng.normal(size=5), "W2": rng.normal(size=(5, 1))}
    _, g = dk.value_and_grad(lambda v: _mlp_loss(v, x), w)
    num = dk.central_difference(lambda p: float(_mlp_loss(p, x)), w)
    for k in w:
        assert np.allclose(g[k], num[k], rtol=1e-5, atol=1e-7)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 3))
def test_forward_tau_matches_difference(tau, a):
    f = lambda t: dk.softplus(dk.tanh(a * t) * 2.0 + t)
    val, d = dk.forward_tau(f, tau=np.array(tau))
    h = 1e-6
    num = (f(np.array(tau + h)) - f(np.array(tau - h))) / (2 * h)
    assert d == pytest.approx(num, rel=1e-5, abs=1e-8)


def test_forward_over_reverse_gradient_of_derivative():
    # d/da of d/dt softplus(a t) at t=1 is sigmoid(a) + a*sigmoid'(a)
    a = 0.7
    tape = dk.Tape()
    av = tape.var(np.array(a))
    _, dt = dk.forward_tau(lambda t, w: dk.softplus(w * t), av, tau=np.array(1.0))
    grads = tape.backward(dt)
    s = 1 / (1 + math.exp(-a))
    assert grads[av.index] == pytest.approx(s + a * s * (1 - s))
