"""Evaluation metrics: MNLL, MAE, PIC@k, PIL, the Avg-PIL quantile curve and
the Spearman correlation between absolute deviation and interval length.

Variances are population variances (divide by N). Quantiles use linear
interpolation between order statistics (numpy's default ``linear`` method).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyData, LengthMismatch, MissingLevel, NonFinite, ZeroVariance

DEFAULT_QUANTILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


def _vec(x, name):
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise EmptyData(f"{name} is empty")
    return a


def _same_length(a, b, what):
    if a.shape[0] != b.shape[0]:
        raise LengthMismatch(f"{what}: {a.shape[0]} vs {b.shape[0]}")


def mnll(log_densities):
    """Mean negative log density. A zero density (log of -inf) is an error."""
    lp = _vec(log_densities, "log densities")
    if not np.all(np.isfinite(lp)):
        raise NonFinite(f"{int(np.sum(~np.isfinite(lp)))} non-finite log densities")
    return float(-np.mean(lp))


def mae(predicted, actual):
    p, a = _vec(predicted, "predictions"), _vec(actual, "actuals")
    _same_length(p, a, "mae")
    return float(np.mean(np.abs(p - a)))


def coverage(lo, hi, actual):
    """Fraction of rows with lo <= actual <= hi. 2-D inputs need every column covered."""
    lo, hi, actual = (np.asarray(x, dtype=np.float64) for x in (lo, hi, actual))
    if not (lo.shape == hi.shape == actual.shape):
        raise LengthMismatch(f"bounds {lo.shape}/{hi.shape} vs actuals {actual.shape}")
    if actual.size == 0:
        raise EmptyData("no events")
    inside = (lo <= actual) & (actual <= hi)
    if inside.ndim > 1:
        inside = np.all(inside, axis=tuple(range(1, inside.ndim)))
    return float(np.mean(inside))


def _bounds_at(pred, k):
    for key, b in pred.bounds.items():
        if float(key) == float(k):
            return b
    raise MissingLevel(f"k={k} not among prediction levels {sorted(pred.bounds)}")


def pic_at_k(predictions, actuals, k):
    """Share of events inside ``mean +/- k sigma``.

    Works for time predictions (scalar bounds) and location predictions
    (per-coordinate bounds, where latitude AND longitude must both cover).
    """
    predictions = list(predictions)
    actual = np.asarray(actuals, dtype=np.float64)
    if len(predictions) != actual.shape[0]:
        raise LengthMismatch(f"{len(predictions)} predictions vs {actual.shape[0]} actuals")
    pairs = [_bounds_at(p, k) for p in predictions]
    lo = np.array([np.asarray(b[0], dtype=np.float64) for b in pairs])
    hi = np.array([np.asarray(b[1], dtype=np.float64) for b in pairs])
    return coverage(lo, hi, actual)


def pil(sigmas, k=1.0):
    """Mean and population variance of the interval length ``2 k sigma``."""
    s = _vec(sigmas, "sigmas")
    length = 2.0 * float(k) * s
    return float(np.mean(length)), float(np.var(length))


def avg_pil_quantile(abs_devs, sigmas, quantiles=DEFAULT_QUANTILES):
    """For each q, the mean of 2*sigma over events whose AD is at most the q-quantile of AD."""
    ad, s = _vec(abs_devs, "absolute deviations"), _vec(sigmas, "sigmas")
    _same_length(ad, s, "avg_pil_quantile")
    table = []
    for q in quantiles:
        cut = np.quantile(ad, float(q))
        table.append((float(q), float(np.mean(2.0 * s[ad <= cut]))))
    return table


def spearman(x, y):
    """Pearson correlation of average ranks."""
    x, y = _vec(x, "x"), _vec(y, "y")
    _same_length(x, y, "spearman")
    if x.size < 2:
        raise EmptyData("spearman needs at least two points")
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    sx, sy = float(np.sum(rx * rx)), float(np.sum(ry * ry))
    if sx == 0 or sy == 0:
        raise ZeroVariance("spearman is undefined for a constant input")
    return float(np.clip(np.sum(rx * ry) / np.sqrt(sx * sy), -1.0, 1.0))


REPORT_KEYS = (
    "mnll", "mnll_temporal", "mnll_spatial", "mae_time", "mae_lat", "mae_lon", "pic", "pic_spatial",
    "pil_mean", "pil_var", "spearman_ad_pil", "quantile_table", "mnll_comparable", "n_events",
)


@dataclass
class MetricsReport:
    """Every key is always present in the JSON form; inapplicable values are null."""

    mnll: float | None
    mae_time: float
    pic: dict
    pil_mean: float
    pil_var: float
    spearman_ad_pil: float | None
    quantile_table: list
    n_events: int
    mnll_comparable: bool = True
    mnll_temporal: float | None = None
    mnll_spatial: float | None = None
    mae_lat: float | None = None
    mae_lon: float | None = None
    pic_spatial: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["pic"] = {_key(k): v for k, v in self.pic.items()}
        d["pic_spatial"] = {_key(k): v for k, v in self.pic_spatial.items()}
        d["quantile_table"] = [list(r) for r in self.quantile_table]
        return {k: d[k] for k in REPORT_KEYS}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=False)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["pic"] = {float(k): v for k, v in d["pic"].items()}
        d["pic_spatial"] = {float(k): v for k, v in (d.get("pic_spatial") or {}).items()}
        d["quantile_table"] = [tuple(r) for r in d["quantile_table"]]
        return cls(**{k: d[k] for k in REPORT_KEYS})

    def format_table(self, name="model"):
        def f(v):
            return "-" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v))

        mn = f(self.mnll) + ("" if self.mnll_comparable else "*")
        cols = [("Model", name), ("MNLL", mn), ("MAE", f(self.mae_time))]
        cols += [(f"PIC@{_key(k)}", f(v)) for k, v in sorted(self.pic.items())]
        cols += [("PIL", f(self.pil_mean)), ("PIL var", f(self.pil_var)), ("Spearman", f(self.spearman_ad_pil))]
        if self.mae_lat is not None:
            cols += [("MAE lat", f(self.mae_lat)), ("MAE lon", f(self.mae_lon))]
            cols += [(f"sPIC@{_key(k)}", f(v)) for k, v in sorted(self.pic_spatial.items())]
        widths = [max(len(h), len(v)) for h, v in cols]
        head = "  ".join(h.rjust(w) for (h, _), w in zip(cols, widths))
        row = "  ".join(v.rjust(w) for (_, v), w in zip(cols, widths))
        return head + "\n" + row


def _key(k):
    k = float(k)
    return str(int(k)) if k.is_integer() else f"{k:g}"


def _finite_or_none(fn, *args):
    try:
        return fn(*args)
    except (ZeroVariance, NonFinite, EmptyData):
        return None


def evaluate(times, locations=None, k_levels=(1.0, 2.0, 5.0), quantiles=DEFAULT_QUANTILES,
             mnll_comparable=True):
    """Build a MetricsReport from column arrays.

    ``times`` maps ``actual``, ``mean``, ``sigma``, ``bounds`` ({k: (lo, hi)})
    and optionally ``log_density``. ``locations`` (spatio-temporal models)
    maps ``actual`` (n, 2), ``mean`` (n, 2), ``bounds`` ({k: (lo (n,2), hi (n,2))})
    and optionally ``log_density``.
    """
    actual = _vec(times["actual"], "actual times")
    mean = _vec(times["mean"], "predicted times")
    sigma = _vec(times["sigma"], "sigmas")
    _same_length(actual, mean, "predictions vs actuals")
    _same_length(actual, sigma, "sigmas vs actuals")

    def level(bounds, k):
        for key, b in bounds.items():
            if float(key) == float(k):
                return b
        raise MissingLevel(f"k={k} not among levels {sorted(bounds)}")

    pic = {float(k): coverage(*level(times["bounds"], k), actual) for k in k_levels}
    ad = np.abs(actual - mean)
    pil_mean, pil_var = pil(sigma, 1.0)
    lp = times.get("log_density")
    mnll_t = None if lp is None or np.all(np.isnan(np.asarray(lp, dtype=float))) else mnll(lp)
    report = MetricsReport(
        mnll=mnll_t, mae_time=mae(mean, actual), pic=pic, pil_mean=pil_mean, pil_var=pil_var,
        spearman_ad_pil=_finite_or_none(spearman, ad, 2.0 * sigma),
        quantile_table=avg_pil_quantile(ad, sigma, quantiles), n_events=int(actual.size),
        mnll_comparable=bool(mnll_comparable), mnll_temporal=mnll_t,
    )
    if locations is not None:
        la = np.asarray(locations["actual"], dtype=np.float64)
        lm = np.asarray(locations["mean"], dtype=np.float64)
        if la.shape != (actual.size, 2) or lm.shape != la.shape:
            raise LengthMismatch(f"location arrays {la.shape}/{lm.shape} for {actual.size} events")
        report.mae_lat = mae(lm[:, 0], la[:, 0])
        report.mae_lon = mae(lm[:, 1], la[:, 1])
        report.pic_spatial = {float(k): coverage(*level(locations["bounds"], k), la) for k in k_levels}
        slp = locations.get("log_density")
        if slp is not None and not np.all(np.isnan(np.asarray(slp, dtype=float))):
            report.mnll_spatial = mnll(slp)
            if report.mnll_temporal is not None:
                report.mnll = report.mnll_temporal + report.mnll_spatial
    return report


def evaluate_predictions(time_preds, loc_preds=None, k_levels=(1.0, 2.0, 5.0), quantiles=DEFAULT_QUANTILES,
                         mnll_comparable=True):
    """MetricsReport from TimePrediction (and LocationPrediction) objects."""
    time_preds = list(time_preds)
    if not time_preds:
        raise EmptyData("no predictions")
    ks = [float(k) for k in k_levels]
    times = {
        "actual": [p.actual for p in time_preds],
        "mean": [p.mean for p in time_preds],
        "sigma": [p.sigma for p in time_preds],
        "bounds": {k: (np.array([_bounds_at(p, k)[0] for p in time_preds]),
                       np.array([_bounds_at(p, k)[1] for p in time_preds])) for k in ks},
        "log_density": [np.nan if p.log_density is None else p.log_density for p in time_preds],
    }
    locs = None
    if loc_preds is not None:
        loc_preds = list(loc_preds)
        locs = {
            "actual": np.array([q.actual for q in loc_preds]),
            "mean": np.array([q.mean for q in loc_preds]),
            "bounds": {k: (np.array([_bounds_at(q, k)[0] for q in loc_preds]),
                           np.array([_bounds_at(q, k)[1] for q in loc_preds])) for k in ks},
            "log_density": [np.nan if q.log_density is None else q.log_density for q in loc_preds],
        }
    return evaluate(times, locs, ks, quantiles, mnll_comparable)


def evaluate_table(table, k_levels=None, quantiles=DEFAULT_QUANTILES, mnll_comparable=True):
    """MetricsReport from a predictions CSV read back with ``predict.read_predictions_csv``."""
    ks = sorted(table.bounds) if k_levels is None else [float(k) for k in k_levels]
    times = {"actual": table.actual, "mean": table.mean, "sigma": table.sigma, "bounds": table.bounds,
             "log_density": table.log_density}
    locs = None
    ex = table.extra
    if "pred_lat" in ex:
        lab = _key
        locs = {
            "actual": np.column_stack([ex["actual_lat"], ex["actual_lon"]]),
            "mean": np.column_stack([ex["pred_lat"], ex["pred_lon"]]),
            "bounds": {k: (np.column_stack([ex[f"lo_lat_k{lab(k)}"], ex[f"lo_lon_k{lab(k)}"]]),
                           np.column_stack([ex[f"hi_lat_k{lab(k)}"], ex[f"hi_lon_k{lab(k)}"]])) for k in ks},
            "log_density": ex.get("log_density_spatial"),
        }
    return evaluate(times, locs, ks, quantiles, mnll_comparable)
