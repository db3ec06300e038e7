"""Next-event time prediction with Monte-Carlo dropout.

For every window and every dropout sample the predictive median inter-arrival
is found by bisection on ``Phi(tau) = log 2``. The S per-sample predicted
times are then summarised by their mean, population standard deviation and
``mean +/- k * sigma`` bounds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import bayes, nhp
from .errors import MaxIter, NoBracket, SchemaError, TooShort
from .events import make_windows, split_bounds, stack_windows

LOG2 = math.log(2.0)
MAX_DOUBLINGS = 60


@dataclass(frozen=True)
class PredictConfig:
    S: int = 50
    k_levels: tuple = (1.0, 2.0, 5.0)
    bisect_tol: float = 1e-8
    bisect_max_iter: int = 200
    persist_masks: bool = False

    def __post_init__(self):
        object.__setattr__(self, "k_levels", tuple(float(k) for k in self.k_levels))
        if self.S < 1:
            raise ValueError(f"S must be >= 1, got {self.S}")
        if any(not k > 0 for k in self.k_levels):
            raise ValueError(f"k levels must be positive, got {self.k_levels}")
        if not self.bisect_tol > 0:
            raise ValueError("bisect_tol must be positive")


@dataclass
class TimePrediction:
    samples: np.ndarray
    mean: float
    sigma: float
    bounds: dict
    actual: float | None = None
    log_density: float | None = None
    event_index: int = 0
    sequence_id: str = ""


def summarize(samples, k_levels):
    """Mean, population sigma and k-sigma bounds of MC samples.

    The mean is accumulated as offsets from the first sample so identical
    samples give exactly that value and exactly zero spread.
    """
    x = np.asarray(samples, dtype=np.float64)
    x0 = x[0]
    mean = float(x0 + np.mean(x - x0))
    sigma = float(np.sqrt(np.mean((x - mean) ** 2)))
    bounds = {k: (mean - k * sigma, mean + k * sigma) for k in k_levels}
    return mean, sigma, bounds


def bisect_vec(phi, n, start=1.0, target=LOG2, tol=1e-8, max_iter=200):
    """Solve ``phi(tau)[i] = target`` for every row of a monotone map.

    ``phi(tau, rows)`` evaluates rows ``rows`` at ``tau`` (both 1-D). The upper
    bracket starts at ``start`` and doubles until it exceeds the target.
    """
    hi = np.full(n, float(start))
    need = np.arange(n)
    for _ in range(MAX_DOUBLINGS + 1):
        vals = phi(hi[need], need)
        need = need[vals <= target]
        if need.size == 0:
            break
        hi[need] *= 2.0
    else:
        raise NoBracket(f"cumulative hazard stays below {target:.6g} up to tau={start * 2.0**MAX_DOUBLINGS:.3g} "
                        f"for rows {need[:10].tolist()}")
    lo = np.zeros(n)
    out = np.full(n, np.nan)
    active = np.arange(n)
    for _ in range(max_iter):
        mid = 0.5 * (lo[active] + hi[active])
        resid = phi(mid, active) - target
        done = np.abs(resid) <= tol
        out[active[done]] = mid[done]
        below = resid < 0
        lo[active[below]] = mid[below]
        hi[active[~below]] = mid[~below]
        active = active[~done]
        if active.size == 0:
            return out
    raise MaxIter(f"bisection did not reach tolerance {tol} in {max_iter} iterations for rows "
                  f"{active[:10].tolist()}")


def bisect_median(phi, cfg: PredictConfig = PredictConfig(), start=1.0, target=LOG2):
    """Scalar front end: the tau with ``phi(tau) = target`` (log 2 gives the median)."""
    out = bisect_vec(lambda tau, rows: np.array([phi(float(t)) for t in tau]), 1, start, target,
                     cfg.bisect_tol, cfg.bisect_max_iter)
    return float(out[0])


def _sample_medians(model, batch, spec, cfg, seed, chunk=20000):
    """Per-(window, sample) median inter-arrival and log density at the target.

    Returns two (n, S) arrays.
    """
    S = cfg.S
    n = len(batch)
    if spec.is_deterministic:
        med, logp = _medians_for_rows(model, batch, None, cfg)
        return np.repeat(med[:, None], S, axis=1), np.repeat(logp[:, None], S, axis=1)
    shapes = bayes.MaskShapes.of(model)
    per = max(1, chunk // S)
    meds, logps = [], []
    for start in range(0, n, per):
        sub = batch.take(np.arange(start, min(n, start + per)))
        masks = bayes.mc_masks(spec, shapes, seed, sub, S, persist=cfg.persist_masks)
        rows = sub.take(np.repeat(np.arange(len(sub)), S))
        med, logp = _medians_for_rows(model, rows, masks, cfg)
        meds.append(med.reshape(-1, S))
        logps.append(logp.reshape(-1, S))
    return np.concatenate(meds), np.concatenate(logps)


def _medians_for_rows(model, rows, masks, cfg):
    P = model.params
    rin = rrec = fnn = None
    if masks is not None:
        rin, rrec, fnn = masks.rnn_input, masks.rnn_recurrent, masks.fnn
    h = nhp.encode(P, rows.taus / model.tau_scaler, rin, rrec)

    def phi(tau, idx):
        sub_masks = None if fnn is None else [m[idx] for m in fnn]
        val, _ = nhp.phi_and_hazard(model, P, h[idx], rows.anchor[idx], tau, sub_masks, need_hazard=False)
        return val

    med = bisect_vec(phi, len(rows), start=model.tau_scaler, tol=cfg.bisect_tol, max_iter=cfg.bisect_max_iter)
    phi_t, lam_t = nhp.phi_and_hazard(model, P, h, rows.anchor, rows.target, fnn)
    logp = np.log(np.maximum(lam_t, nhp.HAZARD_FLOOR)) - phi_t
    return med, logp


def predict_windows(model, windows, spec=bayes.DropoutSpec(), cfg: PredictConfig = PredictConfig(), seed=0):
    """One TimePrediction per window (vectorised over windows and samples)."""
    batch = stack_windows(windows)
    meds, logps = _sample_medians(model, batch, spec, cfg, seed)
    out = []
    for i in range(len(batch)):
        samples = batch.anchor[i] + meds[i]
        mean, sigma, bounds = summarize(samples, cfg.k_levels)
        lp = logps[i]
        m = lp.max()
        out.append(TimePrediction(
            samples=samples, mean=mean, sigma=sigma, bounds=bounds,
            actual=float(batch.anchor[i] + batch.target[i]),
            log_density=float(m + np.log(np.mean(np.exp(lp - m)))),
            event_index=int(batch.event_index[i]),
            sequence_id=batch.sequence_ids[i] if batch.sequence_ids else "",
        ))
    return out


def predict_next(model, window, spec=bayes.DropoutSpec(), cfg: PredictConfig = PredictConfig(), seed=0):
    return predict_windows(model, [window], spec, cfg, seed)[0]


def rolling_predict(model, seq, spec=bayes.DropoutSpec(), cfg: PredictConfig = PredictConfig(), seed=0,
                    start=None):
    """1-step-ahead predictions for events ``start`` onward (default: the test segment).

    Every window is built from the observed history, never from predictions.
    """
    if start is None:
        start = split_bounds(len(seq))[1]
    windows = make_windows(seq, model.M, start=start)
    if not windows:
        raise TooShort("no windows to predict")
    return predict_windows(model, windows, spec, cfg, seed)


def _k_label(k):
    return f"{int(k)}" if float(k).is_integer() else f"{k:g}"


def prediction_columns(k_levels):
    cols = ["sequence_id", "event_index", "actual_time", "pred_mean", "pred_sigma"]
    for k in k_levels:
        cols += [f"lo_k{_k_label(k)}", f"hi_k{_k_label(k)}"]
    return cols + ["log_density"]


def _fmt_opt(x):
    return "" if x is None else repr(float(x))


def write_predictions_csv(preds, path, k_levels=(1.0, 2.0, 5.0)):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(prediction_columns(k_levels))
        for p in preds:
            row = [p.sequence_id, p.event_index, repr(p.actual), repr(p.mean), repr(p.sigma)]
            for k in k_levels:
                lo, hi = p.bounds[k]
                row += [repr(lo), repr(hi)]
            w.writerow(row + [_fmt_opt(p.log_density)])


@dataclass
class PredictionTable:
    """Predictions read back from CSV, column-wise."""

    sequence_id: list
    event_index: np.ndarray
    actual: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray
    bounds: dict
    log_density: np.ndarray
    extra: dict = field(default_factory=dict)


def read_predictions_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise TooShort(f"{path}: no predictions")
    for i, r in enumerate(rows, start=2):
        if None in r or None in r.values():
            raise SchemaError(f"{path}:{i}: row length does not match the header")
    missing = [c for c in ("sequence_id", "event_index", "actual_time", "pred_mean", "pred_sigma") if c not in rows[0]]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    cols = rows[0].keys()
    ks = sorted(float(c[4:]) for c in cols if c.startswith("lo_k"))
    col = lambda name: np.array([float(r[name]) if r.get(name) not in (None, "") else np.nan for r in rows])
    bounds = {k: (col(f"lo_k{_k_label(k)}"), col(f"hi_k{_k_label(k)}")) for k in ks}
    extra = {c: col(c) for c in cols if c not in prediction_columns(ks) and c != "sequence_id"}
    return PredictionTable(
        sequence_id=[r["sequence_id"] for r in rows],
        event_index=np.array([int(r["event_index"]) for r in rows]),
        actual=col("actual_time"), mean=col("pred_mean"), sigma=col("pred_sigma"),
        bounds=bounds, log_density=col("log_density"), extra=extra,
    )
