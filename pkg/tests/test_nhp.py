import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnhp import diffkernel as dk
from bnhp import bayes, nhp
from bnhp.errors import ShapeMismatch, TooShort
from bnhp.events import make_windows, stack_windows
from bnhp.simulate import simulate_poisson
from conftest import frozen_linear, toy_model, toy_windows


def test_frozen_linear_log_likelihood():
    c = 0.8
    m = frozen_linear(c)
    w = toy_windows(6)
    taus = np.array([x.target_tau for x in w])
    assert nhp.log_likelihood(m, w) == pytest.approx(len(w) * math.log(c) - c * taus.sum(), rel=1e-10)


def test_one_unit_softplus_closed_form():
    # tanh in its linear regime with eps in, 1/eps out: Phi = softplus(tau + b) - softplus(b)
    eps, b = 1e-4, 0.4
    P = nhp.init_params(hidden_size=2, n_layers=1, units=1, rng=0)
    P.update(haz_Wtau=np.full((1, 1), nhp._softplus_inv(eps)), haz_Wout=np.full((1, 1), nhp._softplus_inv(1 / eps)),
             haz_Wh=np.full((2, 1), -800.0), haz_Wt=np.full((1, 1), -800.0),
             haz_Wskip=np.full((1, 1), -800.0), haz_b0=np.zeros(1), haz_bout=np.array([b]))
    m = nhp.NhpModel(P, 2, 1, 1, M=3)
    h = nhp.encode_history(m, toy_windows(1)[0])
    tau = np.array([0.5, 1.0, 2.0])
    sp = lambda x: np.log1p(np.exp(x))
    assert np.allclose(nhp.cumulative_hazard(m, h, 1.0, tau), sp(tau + b) - sp(b), rtol=1e-6)
    assert np.allclose(nhp.hazard(m, h, 1.0, tau), 1 / (1 + np.exp(-(tau + b))), rtol=1e-6)


def test_phi_zero_at_origin_and_hazard_positive():
    m = toy_model()
    h = nhp.encode_history(m, toy_windows(1)[0])
    assert nhp.cumulative_hazard(m, h, 2.0, 0.0) == 0.0
    assert np.all(nhp.hazard(m, h, 2.0, np.linspace(0, 20, 50)) > 0)


def test_hazard_is_derivative_of_phi():
    m = toy_model(seed=4)
    h = nhp.encode_history(m, toy_windows(1)[0])
    tau, d = np.array([0.3, 1.7]), 1e-6
    num = (nhp.cumulative_hazard(m, h, 1.0, tau + d) - nhp.cumulative_hazard(m, h, 1.0, tau - d)) / (2 * d)
    assert np.allclose(nhp.hazard(m, h, 1.0, tau), num, rtol=1e-6)


def test_negative_tau_rejected():
    m = toy_model()
    with pytest.raises(ValueError):
        nhp.cumulative_hazard(m, np.zeros(3), 0.0, -1.0)


def test_shape_mismatch_and_empty():
    m = toy_model(M=4)
    with pytest.raises(ShapeMismatch):
        nhp.log_likelihood(m, toy_windows(3, M=3))
    with pytest.raises(TooShort):
        nhp.log_likelihood(m, [])


def test_likelihood_gradient_matches_finite_difference():
    m = toy_model(seed=2)
    w = stack_windows(toy_windows(5))
    _, g = dk.value_and_grad(lambda P: nhp.log_likelihood(m, w, P=P), m.params)
    num = dk.central_difference(lambda P: nhp.log_likelihood(m, w, P=P), m.params)
    for k in g:
        assert np.allclose(g[k], num[k], rtol=1e-4, atol=1e-6), k


def test_calibrate_init_sets_median_hazard():
    w = make_windows(simulate_poisson(1.0, 600, seed=1), 5)
    m = bayes.build_model(w, bayes.NO_DROPOUT, nhp.ModelConfig(8, 2, 8, 5), seed=3)
    b = stack_windows(w)
    h = nhp.encode(m.params, b.taus / m.tau_scaler)
    _, lam = nhp.phi_and_hazard(m, m.params, h, b.anchor, b.target)
    assert 0.5 < np.median(lam) * m.tau_scaler < 2.0
    assert dk.softplus(m.params["haz_Wskip"])[0, 0] == pytest.approx(nhp.SKIP_SHARE)


def test_fit_scalers():
    w = toy_windows(10)
    tau_s, time_s = nhp.fit_scalers(w)
    b = stack_windows(w)
    assert tau_s == pytest.approx(b.target.mean())
    assert time_s == pytest.approx((b.anchor + b.target).max())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_phi_monotone_for_random_nets(seed):
    m = toy_model(seed=seed)
    rng = np.random.default_rng(seed)
    for k in m.params:
        if k.startswith("haz_W"):
            m.params[k] = m.params[k] + rng.normal(0, 2, size=m.params[k].shape)
    h = nhp.encode_history(m, toy_windows(1, seed=seed % 50 + 1)[0])
    tau = np.linspace(0, 30, 200)
    phi = nhp.cumulative_hazard(m, h, 3.0, tau)
    assert phi[0] == 0.0
    assert np.all(np.diff(phi) >= -1e-12)
