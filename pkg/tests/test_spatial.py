import math

import numpy as np
import pytest
from scipy.stats import norm

from bnhp import bayes, nhp
from bnhp import predict as pr
from bnhp import spatial as sp
from bnhp.errors import SchemaError
from bnhp.events import make_windows, stack_windows
from bnhp.simulate import simulate_poisson, simulate_st_poisson

CFG = nhp.ModelConfig(6, 2, 6, 4)


@pytest.fixture(scope="module")
def st_windows():
    return make_windows(simulate_st_poisson(1.0, 120, seed=5), 4)


@pytest.fixture(scope="module")
def st_model(st_windows):
    return sp.build_st_model(st_windows, bayes.DropoutSpec(), CFG, seed=2, spatial_units=5)


def test_gaussian_density_matches_scipy():
    x = np.array([[0.3, -1.2]])
    mu = np.array([[0.1, -1.0]])
    sig = np.array([[0.5, 2.0]])
    expect = norm.logpdf(0.3, 0.1, 0.5) + norm.logpdf(-1.2, -1.0, 2.0)
    assert sp.gaussian_log_density(x, mu, sig)[0] == pytest.approx(expect)


def test_model_shapes_and_names(st_model):
    assert st_model.spatial_widths == [5, 5]
    assert st_model.spatial_weight_names() == ["sp_Wh", "sp_Wx", "sp_W1", "sp_Wmu", "sp_Wsig"]
    assert st_model.params["sp_Wx"].shape == (8, 5)
    copy = st_model.copy()
    assert isinstance(copy, sp.StModel) and copy.step_std == st_model.step_std
    assert isinstance(st_model.temporal, nhp.NhpModel)


def test_spatial_params_positive_sigma(st_model, st_windows):
    b = stack_windows(st_windows)
    h = nhp.encode(st_model.params, b.taus / st_model.tau_scaler)
    mu, sigma = sp.spatial_params(st_model, st_model.params, h, b.prev_locs)
    assert mu.shape == sigma.shape == (len(b), 2)
    assert np.all(sigma >= sp.SIGMA_FLOOR)


def test_spatial_log_density_single_window(st_model, st_windows):
    w = st_windows[0]
    h = nhp.encode_history(st_model, w)
    val = sp.spatial_log_density(st_model, h, w.prev_locs, w.target_loc)
    _, _, s = sp.st_event_terms(st_model, st_model.params, [w])
    assert val == pytest.approx(s[0])
    with pytest.raises(ValueError):
        sp.spatial_log_density(st_model, h, w.prev_locs[:2], w.target_loc)


def test_joint_likelihood_is_temporal_plus_spatial(st_model, st_windows):
    lp, phi, s = sp.st_event_terms(st_model, st_model.params, st_windows)
    assert sp.st_log_likelihood(st_model, st_windows) == pytest.approx(np.sum(lp - phi + s))
    assert nhp.log_likelihood(st_model.temporal, st_windows) == pytest.approx(np.sum(lp - phi))


def test_requires_locations():
    w = make_windows(simulate_poisson(1.0, 50, seed=1), 4)
    with pytest.raises(SchemaError):
        sp.build_st_model(w, bayes.DropoutSpec(), CFG)


def test_st_gradient_matches_finite_difference(st_model, st_windows):
    from bnhp import diffkernel as dk
    b = stack_windows(st_windows[:4])
    f = lambda P: sp.st_log_likelihood(st_model, b, P=P)
    _, g = dk.value_and_grad(f, st_model.params)
    sub = {k: st_model.params[k] for k in ("sp_Wmu", "sp_bsig", "sp_W1")}
    num = dk.central_difference(lambda Q: f({**st_model.params, **Q}), sub)
    for k in sub:
        assert np.allclose(g[k], num[k], rtol=1e-4, atol=1e-6)


def test_location_predictions(st_model, st_windows):
    cfg = pr.PredictConfig(S=6)
    preds = sp.predict_locations(st_model, st_windows[:3], bayes.DropoutSpec(), cfg, seed=3)
    assert preds[0].samples.shape == (6, 2)
    assert np.all(preds[0].sigma > 0)
    again = sp.predict_location(st_model, st_windows[1], bayes.DropoutSpec(), cfg, seed=3)
    assert np.allclose(again.samples, preds[1].samples)


def test_mu_only_without_dropout_has_zero_spread(st_model, st_windows):
    preds = sp.predict_locations(st_model, st_windows[:3], bayes.NO_DROPOUT, pr.PredictConfig(S=4), mu_only=True)
    assert all(np.all(p.sigma == 0) for p in preds)


def test_deterministic_mc_density(st_model, st_windows):
    t, s, j = sp.mc_st_log_density(st_model, st_windows, bayes.NO_DROPOUT, 3, 0)
    assert np.allclose(j, t + s)
    lp, phi, sd = sp.st_event_terms(st_model, st_model.params, st_windows)
    assert np.allclose(s, sd)


def test_st_csv_columns(st_model, st_windows, tmp_path):
    cfg = pr.PredictConfig(S=3)
    tp = pr.predict_windows(st_model.temporal, st_windows[:2], cfg=cfg)
    lp = sp.predict_locations(st_model, st_windows[:2], cfg=cfg)
    path = tmp_path / "st.csv"
    sp.write_st_predictions_csv(tp, lp, path, cfg.k_levels)
    t = pr.read_predictions_csv(path)
    assert t.extra["pred_lat"].tolist() == [p.mean[0] for p in lp]
    assert t.log_density.tolist() == [p.log_density for p in tp]
    assert t.extra["log_density_spatial"].tolist() == [p.log_density for p in lp]


def test_st_train_runs(st_model, st_windows):
    cfg = bayes.TrainConfig(lr=1e-3, epochs=2, batch_size=64, valid_mc_samples=2)
    m, trace = sp.st_train(st_model, st_windows[:80], st_windows[80:], bayes.DropoutSpec(), cfg)
    assert isinstance(m, sp.StModel) and len(trace.valid_mnll) == 2
    assert all(math.isfinite(v) for v in trace.valid_mnll)
