import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnhp import metrics as mt
from bnhp.errors import EmptyData, LengthMismatch, MissingLevel, NonFinite, ZeroVariance
from bnhp.predict import TimePrediction, summarize
from bnhp.simulate import simulate_poisson


def tp(mean, sigma, actual, ks=(1.0, 2.0)):
    m, s, b = summarize([mean - sigma, mean + sigma], ks)
    return TimePrediction(np.array([mean]), m, s, b, actual, 0.0)


def test_mnll_cases():
    assert mt.mnll([0.0, 0.0, 0.0]) == 0.0
    with pytest.raises(NonFinite):
        mt.mnll([0.0, -np.inf])
    with pytest.raises(EmptyData):
        mt.mnll([])


def test_mnll_unit_poisson():
    tau = np.diff(simulate_poisson(1.0, 10_000.0, seed=0).times)
    assert mt.mnll(-tau) == pytest.approx(1.0, abs=0.05)


def test_mae_cases():
    assert mt.mae([1, 3], [2, 2]) == 1.0
    assert mt.mae([4, 5], [4, 5]) == 0.0
    assert mt.mae(np.array([1, 3]) + 7.5, np.array([2, 2]) + 7.5) == 1.0
    with pytest.raises(LengthMismatch):
        mt.mae([1], [1, 2])


def test_pic_counting():
    preds = [tp(0, 1, 0.5), tp(0, 1, 3.0), tp(0, 1, -0.9), tp(0, 1, -1.5)]
    actual = [p.actual for p in preds]
    assert mt.pic_at_k(preds, actual, 1) == 0.5
    assert mt.pic_at_k(preds, actual, 2) == 0.75
    with pytest.raises(MissingLevel):
        mt.pic_at_k(preds, actual, 5)


def test_pic_zero_sigma_and_huge_k():
    preds = [tp(1.0, 0.0, 1.3), tp(2.0, 0.0, 1.9)]
    assert mt.pic_at_k(preds, [1.3, 1.9], 1) == 0.0
    wide = [tp(0, 1, 5e8, ks=(1e9,))]
    assert mt.pic_at_k(wide, [5e8], 1e9) == 1.0


def test_spatial_coverage_needs_both_coordinates():
    lo = np.array([[0, 0], [0, 0]])
    hi = np.array([[1, 1], [1, 1]])
    assert mt.coverage(lo, hi, np.array([[0.5, 0.5], [0.5, 2.0]])) == 0.5


def test_pil_cases():
    assert mt.pil([0, 0]) == (0.0, 0.0)
    assert mt.pil([1, 3]) == (4.0, 4.0)
    assert mt.pil([1, 3], k=2)[0] == 8.0


def test_quantile_table_cases():
    flat = mt.avg_pil_quantile([0.1, 0.5, 0.2, 0.9], [0.3] * 4)
    assert all(v == pytest.approx(0.6) for _, v in flat)
    ad = np.arange(1.0, 21.0)
    table = mt.avg_pil_quantile(ad, ad * 0.1)
    vals = [v for _, v in table]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert table[-1][1] == pytest.approx(np.mean(2 * ad * 0.1))
    with pytest.raises(LengthMismatch):
        mt.avg_pil_quantile([1, 2], [1])


def test_spearman_cases():
    assert mt.spearman([1, 2, 3, 4], [2, 1, 4, 3]) == pytest.approx(0.6)
    x = np.array([0.3, 1.2, -4.0, 7.0])
    assert mt.spearman(x, 2 * x) == 1.0
    assert mt.spearman(x, -x) == -1.0
    with pytest.raises(ZeroVariance):
        mt.spearman([1, 1, 1], [1, 2, 3])


def test_spearman_ties_average_ranks():
    # ranks x: 1.5 1.5 3 ; y: 1 2 3
    expect = np.corrcoef([1.5, 1.5, 3], [1, 2, 3])[0, 1]
    assert mt.spearman([5, 5, 9], [1, 2, 3]) == pytest.approx(expect)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40, unique=True), st.floats(0.1, 3.0))
def test_spearman_strictly_increasing_map(xs, p):
    x = np.array(xs)
    assert mt.spearman(x, np.sign(x) * np.abs(x) ** p + 3 * x) == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(0, 5), st.floats(-10, 10)), min_size=1, max_size=30))
def test_pic_monotone_in_k(rows):
    preds = [tp(m, s, a, ks=(1.0, 2.0, 5.0)) for m, s, a in rows]
    actual = [a for _, _, a in rows]
    pics = [mt.pic_at_k(preds, actual, k) for k in (1.0, 2.0, 5.0)]
    assert pics[0] <= pics[1] <= pics[2]


def test_evaluate_report_round_trip(tmp_path):
    preds = [tp(0, 1, 0.5), tp(0, 2, 3.0), tp(1, 0.5, 0.9)]
    rep = mt.evaluate_predictions(preds, k_levels=(1.0, 2.0))
    assert rep.n_events == 3 and rep.mnll == 0.0 and rep.mnll_spatial is None
    d = json.loads(rep.to_json(tmp_path / "m.json"))
    assert list(d) == list(mt.REPORT_KEYS)
    assert mt.MetricsReport.from_dict(d) == rep
    assert "PIC@2" in rep.format_table("x")


def test_evaluate_spatial_mnll_is_sum():
    times = {"actual": [1.0, 2.0], "mean": [1.0, 2.5], "sigma": [0.0, 0.5],
             "bounds": {1.0: ([1.0, 2.0], [1.0, 3.0])}, "log_density": [-1.0, -2.0]}
    locs = {"actual": [[0, 0], [1, 1]], "mean": [[0, 0], [1, 2]],
            "bounds": {1.0: ([[0, 0], [0, 0]], [[1, 1], [1, 1]])}, "log_density": [-0.5, -0.5]}
    rep = mt.evaluate(times, locs, k_levels=(1.0,), mnll_comparable=False)
    assert rep.mnll == pytest.approx(2.0) and rep.mnll_spatial == 0.5
    assert rep.mae_lon == 0.5 and rep.pic_spatial == {1.0: 1.0}
    assert "*" in rep.format_table()


def test_spearman_none_when_sigma_constant():
    preds = [tp(0, 0, 1.0), tp(0, 0, 2.0)]
    assert mt.evaluate_predictions(preds, k_levels=(1.0,)).spearman_ad_pil is None
