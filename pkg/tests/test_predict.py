import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnhp import bayes, nhp
from bnhp import predict as pr
from bnhp.errors import MaxIter, NoBracket, SchemaError
from conftest import frozen_linear, toy_model, toy_windows

LN2 = math.log(2)


@pytest.mark.parametrize("phi,expected", [
    (lambda t: t, LN2),
    (lambda t: 2 * t, LN2 / 2),
    (lambda t: t * t, math.sqrt(LN2)),
])
def test_bisect_oracles(phi, expected):
    assert pr.bisect_median(phi) == pytest.approx(expected, abs=1e-7)


def test_bisect_vec_rows_and_start():
    rates = np.array([0.5, 1.0, 1000.0])
    out = pr.bisect_vec(lambda tau, rows: rates[rows] * tau, 3, start=0.01)
    assert np.allclose(out, LN2 / rates, rtol=1e-6)


def test_bisect_errors():
    with pytest.raises(NoBracket):
        pr.bisect_median(lambda t: 0.0)
    with pytest.raises(MaxIter):
        pr.bisect_median(lambda t: t, pr.PredictConfig(bisect_tol=1e-300, bisect_max_iter=5))


def test_summarize_population_sigma():
    mean, sigma, bounds = pr.summarize([1.0, 3.0], (1.0, 2.0))
    assert (mean, sigma) == (2.0, 1.0)
    assert bounds == {1.0: (1.0, 3.0), 2.0: (0.0, 4.0)}


def test_summarize_identical_samples_exact():
    mean, sigma, _ = pr.summarize([0.1 + 0.2] * 7, (1.0,))
    assert mean == 0.1 + 0.2 and sigma == 0.0


def test_predict_config_validation():
    with pytest.raises(ValueError):
        pr.PredictConfig(S=0)
    with pytest.raises(ValueError):
        pr.PredictConfig(k_levels=(0.0,))


def test_frozen_linear_predicts_ln2_over_c():
    m = frozen_linear(2.0)
    p = pr.predict_next(m, toy_windows(1)[0], spec=bayes.DropoutSpec(), cfg=pr.PredictConfig(S=5))
    w = toy_windows(1)[0]
    # dropout leaves the skip path alone, so every sample agrees
    assert p.mean == pytest.approx(w.anchor_time + LN2 / 2.0, abs=1e-7)
    assert p.sigma == pytest.approx(0.0, abs=1e-9)
    assert p.log_density == pytest.approx(math.log(2.0) - 2.0 * w.target_tau)


def test_zero_dropout_gives_zero_sigma():
    m = toy_model()
    preds = pr.predict_windows(m, toy_windows(4), spec=bayes.NO_DROPOUT, cfg=pr.PredictConfig(S=6))
    assert all(p.sigma == 0.0 for p in preds)
    assert all(p.bounds[5.0] == (p.mean, p.mean) for p in preds)


def test_predictions_match_sample_median():
    m = toy_model(seed=3)
    w = toy_windows(3)
    preds = pr.predict_windows(m, w, spec=bayes.DropoutSpec(), cfg=pr.PredictConfig(S=8), seed=1)
    h = nhp.encode_history(m, w[0])
    det = pr.predict_next(m, w[0], spec=bayes.NO_DROPOUT, cfg=pr.PredictConfig(S=1))
    assert nhp.cumulative_hazard(m, h, w[0].anchor_time, det.mean - w[0].anchor_time) == pytest.approx(LN2, abs=1e-6)
    assert len(preds[0].samples) == 8 and preds[0].sigma > 0


def test_predictions_do_not_depend_on_batching():
    m = toy_model(seed=3)
    w = toy_windows(4)
    cfg = pr.PredictConfig(S=5)
    together = pr.predict_windows(m, w, cfg=cfg, seed=9)
    alone = pr.predict_next(m, w[2], cfg=cfg, seed=9)
    assert np.allclose(together[2].samples, alone.samples)


def test_rolling_predict_uses_test_segment(poisson_seq):
    m = toy_model(M=3, time_scaler=400.0)
    preds = pr.rolling_predict(m, poisson_seq, spec=bayes.NO_DROPOUT, cfg=pr.PredictConfig(S=1))
    n = len(poisson_seq)
    assert preds[0].event_index == n - len(preds)
    assert preds[-1].event_index == n - 1


def test_csv_round_trip(tmp_path):
    m = toy_model()
    preds = pr.predict_windows(m, toy_windows(3), cfg=pr.PredictConfig(S=4))
    path = tmp_path / "p.csv"
    pr.write_predictions_csv(preds, path)
    t = pr.read_predictions_csv(path)
    assert t.mean.tolist() == [p.mean for p in preds]
    assert t.bounds[2.0][1].tolist() == [p.bounds[2.0][1] for p in preds]
    assert t.log_density.tolist() == [p.log_density for p in preds]
    assert path.read_text().splitlines()[0] == ",".join(pr.prediction_columns((1.0, 2.0, 5.0)))


def test_csv_schema_errors(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("sequence_id,event_index\na,1\n")
    with pytest.raises(SchemaError):
        pr.read_predictions_csv(path)
    path.write_text("sequence_id,event_index,actual_time,pred_mean,pred_sigma\na,1,2,3\n")
    with pytest.raises(SchemaError):
        pr.read_predictions_csv(path)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100.0), st.floats(0.5, 3.0))
def test_bisect_power_law(c, p):
    tau = pr.bisect_median(lambda t: c * t ** p)
    assert c * tau ** p == pytest.approx(LN2, abs=1e-7)
