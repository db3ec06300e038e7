import sys

import numpy as np
import pytest

from bnhp import nhp
from bnhp.events import EventSequence, make_windows, stack_windows
from bnhp.simulate import simulate_poisson


def toy_model(H=3, L=2, units=4, M=3, seed=0, tau_scaler=1.0, time_scaler=10.0):
    rng = np.random.default_rng(seed)
    params = nhp.init_params(H, L, units, rng)
    for k in params:
        if k.startswith("haz_b") or k.startswith("enc_b"):
            params[k] = rng.normal(0, 0.3, size=np.shape(params[k]))
    return nhp.NhpModel(params, H, L, units, M, tau_scaler, time_scaler)


def toy_windows(n=5, M=3, seed=1):
    rng = np.random.default_rng(seed)
    times = np.cumsum(rng.exponential(1.0, size=n + M))
    return make_windows(EventSequence("t", times), M)[:n]


def frozen_linear(c, M=3, H=3, L=2, units=4):
    """Model whose network path is switched off, leaving Phi(tau) = c * tau."""
    m = toy_model(H, L, units, M)
    m.params["haz_Wout"] = np.full_like(m.params["haz_Wout"], -800.0)
    m.params["haz_Wskip"] = np.full((1, 1), nhp._softplus_inv(c))
    return m


@pytest.fixture
def poisson_seq():
    return simulate_poisson(1.0, 400, seed=3)


@pytest.fixture
def small_batch():
    return stack_windows(toy_windows(5))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
