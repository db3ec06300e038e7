"""Spatio-temporal extension: a Gaussian location head on the encoder state.

The next location is modelled as a diagonal Gaussian whose mean and scale come
from a small feed-forward net fed with the RNN history state and the M
previous locations. The net predicts a displacement from the latest location,
measured in units of the typical step size, so a fresh model already centres
on "stay where you are".
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import bayes, nhp
from . import diffkernel as dk
from . import predict as pr
from .errors import NonFinite, SchemaError, TooShort
from .events import stack_windows

SIGMA_FLOOR = 1e-4
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class StModel(nhp.NhpModel):
    """Temporal model plus spatial head; all weights share one params dict.

    ``loc_mean``/``loc_std`` standardise location inputs, ``step_std`` is the
    per-dimension spread of successive displacements in the training data.
    """

    spatial_layers: int = 2
    spatial_units: int = 16
    loc_mean: tuple = (0.0, 0.0)
    loc_std: tuple = (1.0, 1.0)
    step_std: tuple = (1.0, 1.0)

    def copy(self, params=None):
        params = self.params if params is None else params
        return StModel(
            {k: np.array(v, copy=True) for k, v in params.items()},
            self.hidden_size, self.n_layers, self.units, self.M, self.tau_scaler, self.time_scaler,
            spatial_layers=self.spatial_layers, spatial_units=self.spatial_units,
            loc_mean=self.loc_mean, loc_std=self.loc_std, step_std=self.step_std,
        )

    @property
    def spatial_widths(self):
        return [self.spatial_units] * self.spatial_layers

    def spatial_weight_names(self):
        names = ["sp_Wh", "sp_Wx"] + [f"sp_W{l}" for l in range(1, self.spatial_layers)]
        return names + ["sp_Wmu", "sp_Wsig"]

    @property
    def temporal(self):
        """The temporal part alone, as a plain NhpModel."""
        return nhp.NhpModel(self.params, self.hidden_size, self.n_layers, self.units, self.M,
                            self.tau_scaler, self.time_scaler)


@dataclass
class LocationPrediction:
    samples: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray
    bounds: dict
    actual: np.ndarray | None = None
    log_density: float | None = None
    event_index: int = 0
    sequence_id: str = ""


def _require_locations(batch):
    if batch.prev_locs is None or batch.target_loc is None:
        raise SchemaError("spatio-temporal model needs windows with lat/lon locations")


def init_spatial_params(hidden_size, M, layers, units, rng):
    rng = np.random.default_rng(rng)

    def glorot(fan_in, fan_out):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-r, r, size=(fan_in, fan_out))

    p = {"sp_Wh": glorot(hidden_size, units), "sp_Wx": glorot(2 * M, units), "sp_b0": np.zeros(units)}
    for l in range(1, layers):
        p[f"sp_W{l}"] = glorot(units, units)
        p[f"sp_b{l}"] = np.zeros(units)
    p["sp_Wmu"] = glorot(units, 2) * 0.1
    p["sp_bmu"] = np.zeros(2)
    p["sp_Wsig"] = glorot(units, 2) * 0.1
    p["sp_bsig"] = np.full(2, nhp._softplus_inv(1.0))
    return p


def build_st_model(train_windows, spec=bayes.DropoutSpec(), model_cfg=nhp.ModelConfig(), seed=11,
                   spatial_layers=2, spatial_units=16):
    batch = stack_windows(train_windows)
    _require_locations(batch)
    base = bayes.build_model(batch, spec, model_cfg, seed)
    locs = np.concatenate([batch.prev_locs.reshape(-1, 2), batch.target_loc])
    steps = batch.target_loc - batch.prev_locs[:, -1, :]
    loc_std = np.maximum(locs.std(axis=0), 1e-12)
    step_std = np.maximum(steps.std(axis=0), 1e-12)
    params = dict(base.params)
    params.update(init_spatial_params(base.hidden_size, base.M, spatial_layers, spatial_units,
                                      np.random.default_rng([int(seed), 1])))
    return StModel(params, base.hidden_size, base.n_layers, base.units, base.M, base.tau_scaler,
                   base.time_scaler, spatial_layers=spatial_layers, spatial_units=spatial_units,
                   loc_mean=tuple(locs.mean(axis=0)), loc_std=tuple(loc_std), step_std=tuple(step_std))


def spatial_params(model: StModel, P, h, prev_locs, masks=None):
    """Gaussian mean and scale (original units) for each row; both (n, 2)."""
    n = prev_locs.shape[0]
    x = ((prev_locs - np.asarray(model.loc_mean)) / np.asarray(model.loc_std)).reshape(n, -1)
    a = h @ P["sp_Wh"] + x @ P["sp_Wx"]
    if masks is not None:
        a = a * masks[0]
    v = dk.tanh(a + P["sp_b0"])
    for l in range(1, model.spatial_layers):
        a = v @ P[f"sp_W{l}"]
        if masks is not None:
            a = a * masks[l]
        v = dk.tanh(a + P[f"sp_b{l}"])
    step = np.asarray(model.step_std)
    mu = (v @ P["sp_Wmu"] + P["sp_bmu"]) * step + prev_locs[:, -1, :]
    sigma = dk.softplus(v @ P["sp_Wsig"] + P["sp_bsig"]) * step + SIGMA_FLOOR
    return mu, sigma


def gaussian_log_density(x, mu, sigma):
    """Sum over the two dimensions of univariate normal log-densities, per row."""
    z = (x - mu) / sigma
    terms = -0.5 * LOG_2PI - dk.log(sigma) - 0.5 * dk.square(z)
    return dk.sum_(terms, axis=1)


def spatial_log_density(model: StModel, h, prev_locs, x, masks=None, P=None):
    """log N(x; mu, diag sigma^2) for one window (``h`` length H, ``prev_locs`` (M, 2))."""
    P = model.params if P is None else P
    prev_locs = np.asarray(prev_locs, dtype=np.float64)
    if prev_locs.shape != (model.M, 2):
        raise ValueError(f"prev_locs must be ({model.M}, 2), got {prev_locs.shape}")
    mu, sigma = spatial_params(model, P, np.atleast_2d(h), prev_locs[None], masks)
    out = float(gaussian_log_density(np.asarray(x, dtype=np.float64)[None], mu, sigma)[0])
    if not np.isfinite(out):
        raise NonFinite(f"spatial log-density is {out}")
    return out


def st_event_terms(model: StModel, P, batch, masks=None):
    """Per-window (log hazard, Phi, spatial log density) at the observed targets."""
    batch = stack_windows(batch)
    _require_locations(batch)
    fnn = rin = rrec = sp = None
    if masks is not None:
        fnn, rin, rrec, sp = masks.fnn, masks.rnn_input, masks.rnn_recurrent, masks.spatial
    h = nhp.encode(P, batch.taus / model.tau_scaler, rin, rrec)
    phi, lam = nhp.phi_and_hazard(model, P, h, batch.anchor, batch.target, fnn)
    lam_val = lam.value if isinstance(lam, dk.Var) else lam
    model.clamp_count += int(np.sum(lam_val < nhp.HAZARD_FLOOR))
    log_lam = dk.log(dk.clamp_min(lam, nhp.HAZARD_FLOOR))
    mu, sigma = spatial_params(model, P, h, batch.prev_locs, sp or None)
    return log_lam, phi, gaussian_log_density(batch.target_loc, mu, sigma)


def st_log_likelihood(model: StModel, windows, masks=None, P=None):
    """Joint log-likelihood: temporal term plus spatial term, summed over windows."""
    if isinstance(windows, (list, tuple)) and not windows:
        raise TooShort("log-likelihood needs at least one window")
    P = model.params if P is None else P
    log_lam, phi, sp = st_event_terms(model, P, windows, masks)
    ll = dk.sum_(log_lam - phi + sp)
    val = ll.value if isinstance(ll, dk.Var) else ll
    if not np.all(np.isfinite(val)):
        raise NonFinite(f"joint log-likelihood is {val}")
    return ll if isinstance(ll, dk.Var) else float(ll)


def st_elbo_loss(model, batch, masks, cfg: bayes.TrainConfig, P=None):
    P = model.params if P is None else P
    nll = -st_log_likelihood(model, batch, masks, P=P)
    if cfg.l2_lambda == 0:
        return nll
    return nll + cfg.l2_lambda * bayes.l2_penalty(model, P, model.spatial_weight_names())


def mc_st_log_density(model, batch, spec, S, seed):
    """Per-window (temporal, spatial, joint) log of the MC-averaged densities."""
    batch = stack_windows(batch)
    n = len(batch)
    if spec.is_deterministic:
        lp, phi, sp = st_event_terms(model, model.params, batch)
        return lp - phi, sp, lp - phi + sp
    shapes = bayes.MaskShapes.of(model)
    t_all, s_all = [], []
    per = max(1, 20000 // S)
    for start in range(0, n, per):
        sub = batch.take(np.arange(start, min(n, start + per)))
        masks = bayes.mc_masks(spec, shapes, seed, sub, S)
        rows = sub.take(np.repeat(np.arange(len(sub)), S))
        lp, phi, sp = st_event_terms(model, model.params, rows, masks)
        t_all.append((lp - phi).reshape(-1, S))
        s_all.append(sp.reshape(-1, S))
    t, s = np.concatenate(t_all), np.concatenate(s_all)
    lme = bayes._log_mean_exp
    return lme(t), lme(s), lme(t + s)


def st_train(model: StModel, train_windows, valid_windows=None, spec=bayes.DropoutSpec(),
             cfg: bayes.TrainConfig = bayes.TrainConfig()):
    """Dropout ELBO training on the joint likelihood; L2 also covers the spatial weights."""
    _require_locations(stack_windows(train_windows))

    def loss_fn(m, b, masks, P):
        return st_elbo_loss(m, b, masks, cfg, P=P)

    def validate(m, v):
        if spec.is_deterministic or cfg.valid_mc_samples <= 0:
            return float(-np.mean(mc_st_log_density(m, v, spec, 1, 0)[2]))
        return float(-np.mean(mc_st_log_density(m, v, spec, cfg.valid_mc_samples, cfg.seed + 1)[2]))

    return bayes.train(model, train_windows, valid_windows, spec, cfg, loss_fn=loss_fn, validate=validate)


def _location_samples(model, batch, spec, cfg, seed):
    """Per-(window, sample) Gaussian parameters and one draw from each; arrays (n, S, 2)."""
    S, n = cfg.S, len(batch)
    P = model.params
    if spec.is_deterministic:
        h = nhp.encode(P, batch.taus / model.tau_scaler)
        mu, sigma = spatial_params(model, P, h, batch.prev_locs)
        mu = np.repeat(mu[:, None], S, axis=1)
        sigma = np.repeat(sigma[:, None], S, axis=1)
    else:
        shapes = bayes.MaskShapes.of(model)
        masks = bayes.mc_masks(spec, shapes, seed, batch, S, persist=cfg.persist_masks)
        rows = batch.take(np.repeat(np.arange(n), S))
        h = nhp.encode(P, rows.taus / model.tau_scaler, masks.rnn_input, masks.rnn_recurrent)
        mu, sigma = spatial_params(model, P, h, rows.prev_locs, masks.spatial)
        mu, sigma = mu.reshape(n, S, 2), sigma.reshape(n, S, 2)
    ids = batch.sequence_ids or [""] * n
    eps = np.stack([
        np.random.default_rng(bayes.window_seed(seed, sid, e) + [7]).standard_normal((S, 2))
        for sid, e in zip(ids, batch.event_index)
    ])
    return mu, sigma, mu + sigma * eps


def predict_locations(model: StModel, windows, spec=bayes.DropoutSpec(), cfg=pr.PredictConfig(), seed=0,
                      mu_only=False):
    """One LocationPrediction per window.

    Each MC pass draws one location from its Gaussian; ``mu_only`` aggregates
    the per-pass means instead, leaving only mask variability.
    """
    batch = stack_windows(windows)
    _require_locations(batch)
    mu, sigma, draws = _location_samples(model, batch, spec, cfg, seed)
    samples = mu if mu_only else draws
    out = []
    for i in range(len(batch)):
        stats = [pr.summarize(samples[i, :, d], cfg.k_levels) for d in range(2)]
        mean = np.array([s[0] for s in stats])
        sig = np.array([s[1] for s in stats])
        bounds = {k: (np.array([stats[0][2][k][0], stats[1][2][k][0]]),
                      np.array([stats[0][2][k][1], stats[1][2][k][1]])) for k in cfg.k_levels}
        actual = batch.target_loc[i]
        lp = np.sum(-0.5 * LOG_2PI - np.log(sigma[i]) - 0.5 * ((actual - mu[i]) / sigma[i]) ** 2, axis=1)
        m = lp.max()
        out.append(LocationPrediction(
            samples=samples[i], mean=mean, sigma=sig, bounds=bounds, actual=actual.copy(),
            log_density=float(m + np.log(np.mean(np.exp(lp - m)))),
            event_index=int(batch.event_index[i]),
            sequence_id=batch.sequence_ids[i] if batch.sequence_ids else "",
        ))
    return out


def predict_location(model: StModel, window, spec=bayes.DropoutSpec(), cfg=pr.PredictConfig(), seed=0,
                     mu_only=False):
    return predict_locations(model, [window], spec, cfg, seed, mu_only)[0]


def st_prediction_columns(k_levels):
    cols = pr.prediction_columns(k_levels) + ["actual_lat", "actual_lon", "pred_lat", "pred_lon",
                                             "sigma_lat", "sigma_lon"]
    for k in k_levels:
        lab = pr._k_label(k)
        cols += [f"lo_lat_k{lab}", f"hi_lat_k{lab}", f"lo_lon_k{lab}", f"hi_lon_k{lab}"]
    return cols + ["log_density_spatial"]


def write_st_predictions_csv(time_preds, loc_preds, path, k_levels=(1.0, 2.0, 5.0)):
    if len(time_preds) != len(loc_preds):
        raise ValueError(f"{len(time_preds)} time predictions but {len(loc_preds)} location predictions")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(st_prediction_columns(k_levels))
        for p, q in zip(time_preds, loc_preds):
            row = [p.sequence_id, p.event_index, repr(p.actual), repr(p.mean), repr(p.sigma)]
            for k in k_levels:
                row += [repr(p.bounds[k][0]), repr(p.bounds[k][1])]
            row.append(pr._fmt_opt(p.log_density))
            row += [repr(float(v)) for v in (*q.actual, *q.mean, *q.sigma)]
            for k in k_levels:
                lo, hi = q.bounds[k]
                row += [repr(float(lo[0])), repr(float(hi[0])), repr(float(lo[1])), repr(float(hi[1]))]
            w.writerow(row + [pr._fmt_opt(q.log_density)])
