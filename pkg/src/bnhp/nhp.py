"""Neural Hawkes model: RNN history encoder and monotone cumulative-hazard network.

Parameters live in a flat ``dict`` of arrays so the same forward code runs on
plain arrays (prediction) or on taped variables (training). Hazard-network
weights are stored unconstrained and passed through softplus, which keeps every
effective weight positive and the cumulative hazard increasing in the
inter-arrival time.

Inputs are standardised: inter-arrivals are divided by ``tau_scaler`` (mean
training inter-arrival) and the absolute-time input by ``time_scaler`` (the
span of the training segment).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffkernel as dk
from .errors import NonFinite, ShapeMismatch, TooShort
from .events import stack_windows

HAZARD_FLOOR = 1e-12
# share of the initial hazard carried by the linear tau skip
SKIP_SHARE = 0.3


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 64
    n_layers: int = 5
    units: int = 16
    M: int = 20


@dataclass
class NhpModel:
    params: dict
    hidden_size: int = 64
    n_layers: int = 5
    units: int = 16
    M: int = 20
    tau_scaler: float = 1.0
    time_scaler: float = 1.0
    clamp_count: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.tau_scaler > 0:
            raise ValueError(f"tau_scaler must be positive, got {self.tau_scaler}")
        if not self.time_scaler > 0:
            raise ValueError(f"time_scaler must be positive, got {self.time_scaler}")

    def copy(self, params=None):
        params = self.params if params is None else params
        return NhpModel(
            {k: np.array(v, copy=True) for k, v in params.items()},
            self.hidden_size, self.n_layers, self.units, self.M, self.tau_scaler, self.time_scaler,
        )

    @property
    def fnn_widths(self):
        return [self.units] * self.n_layers

    def hazard_weight_names(self):
        names = ["haz_Wtau", "haz_Wh", "haz_Wt"]
        names += [f"haz_W{l}" for l in range(1, self.n_layers)]
        return names + ["haz_Wout", "haz_Wskip"]


def _softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def init_params(hidden_size=64, n_layers=5, units=16, rng=None, keep_prob=1.0):
    """Random raw weights; the recurrent matrix starts orthogonal.

    Hazard-net raw weights are Glorot-uniform noise around softplus^-1 of a
    fan-in scaled mean, so each positive layer has gain near one once
    ``keep_prob`` of its inputs survive dropout. Biases start at zero and are
    set from data by :func:`calibrate_init`.
    """
    rng = np.random.default_rng(rng)
    H = hidden_size

    def glorot(fan_in, fan_out):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-r, r, size=(fan_in, fan_out))

    def positive(fan_in, fan_out, mean):
        return glorot(fan_in, fan_out) + _softplus_inv(mean)

    kept = units * keep_prob
    p = {
        "enc_V": glorot(1, H),
        "enc_U": np.linalg.qr(rng.standard_normal((H, H)))[0],
        "enc_b": np.zeros(H),
        "haz_Wtau": positive(1, units, 1.0),
        "haz_Wh": positive(H, units, 1.0 / H),
        "haz_Wt": positive(1, units, 1.0),
        "haz_b0": np.zeros(units),
    }
    for l in range(1, n_layers):
        p[f"haz_W{l}"] = positive(units, units, 1.0 / kept)
        p[f"haz_b{l}"] = np.zeros(units)
    p["haz_Wout"] = positive(units, 1, 1.0 / kept)
    p["haz_bout"] = np.zeros(1)
    p["haz_Wskip"] = np.full((1, 1), _softplus_inv(0.05))
    return p


def new_model(hidden_size=64, n_layers=5, units=16, M=20, tau_scaler=1.0, time_scaler=1.0, rng=None,
              keep_prob=1.0):
    return NhpModel(init_params(hidden_size, n_layers, units, rng, keep_prob), hidden_size, n_layers,
                    units, M, tau_scaler, time_scaler)


def fit_scalers(batch):
    """Standardisation constants from training windows."""
    batch = stack_windows(batch)
    tau_scaler = float(np.mean(batch.target))
    time_scaler = float(np.max(batch.anchor + batch.target))
    return tau_scaler, max(time_scaler, tau_scaler)


def encode(P, taus_scaled, in_mask=None, rec_mask=None, hook=None):
    """Run the recurrence over the window; returns the final hidden state.

    ``in_mask`` (n, 1) and ``rec_mask`` (n, H) zero rows of the input and
    recurrent weight matrices for each window; the same masks serve every step.
    """
    V, U, b = P["enc_V"], P["enc_U"], P["enc_b"]
    n, M = taus_scaled.shape
    H = np.shape(U)[0]
    h = np.zeros((n, H))
    for j in range(M):
        x = taus_scaled[:, j : j + 1]
        if in_mask is not None:
            x = x * in_mask
        hin = h if rec_mask is None else h * rec_mask
        if hook is not None:
            hook(j, in_mask, rec_mask)
        h = dk.tanh(x @ V + hin @ U + b)
    return h


def _positive(P, name):
    return dk.softplus(P[name])


def _hazard_net(P, n_layers, tau_s, h_proj, t_s, fnn_masks):
    """Raw monotone network output (before the Phi(0) subtraction)."""
    a = tau_s * _positive(P, "haz_Wtau") + h_proj + t_s * _positive(P, "haz_Wt")
    if fnn_masks is not None:
        a = a * fnn_masks[0]
    v = dk.tanh(a + P["haz_b0"])
    for l in range(1, n_layers):
        a = v @ _positive(P, f"haz_W{l}")
        if fnn_masks is not None:
            a = a * fnn_masks[l]
        v = dk.tanh(a + P[f"haz_b{l}"])
    out = v @ _positive(P, "haz_Wout") + P["haz_bout"]
    # positive linear skip from tau keeps the hazard bounded away from zero
    return dk.softplus(out) + tau_s * _positive(P, "haz_Wskip")


def phi_and_hazard(model: NhpModel, P, h, anchor, tau, fnn_masks=None, need_hazard=True):
    """Cumulative hazard Phi(tau) and hazard dPhi/dtau for each row.

    ``h`` is (n, H), ``anchor`` the time of the latest event (n,), ``tau`` (n,).
    Returns arrays/Vars of shape (n,). The network's time input is the time at
    which the hazard is evaluated, ``anchor + tau``, so it moves with tau.
    """
    h_proj = h @ _positive(P, "haz_Wh")
    anchor = np.asarray(anchor, dtype=np.float64).reshape(-1, 1)
    tau = np.asarray(tau, dtype=np.float64).reshape(-1, 1)

    def net(tau_in):
        return _hazard_net(P, model.n_layers, tau_in / model.tau_scaler, h_proj,
                           (anchor + tau_in) / model.time_scaler, fnn_masks)

    at_zero = net(np.zeros_like(tau))
    if need_hazard:
        value, dvalue = dk.forward_tau(net, tau=tau)
        lam = dvalue[:, 0]
    else:
        value, lam = net(tau), None
    phi = value[:, 0] - at_zero[:, 0]
    return phi, lam


def _batch_masks(masks, n):
    if masks is None:
        return None, None, None
    return masks.fnn, masks.rnn_input, masks.rnn_recurrent


def event_terms(model: NhpModel, P, batch, masks=None, hook=None):
    """Per-window (log hazard, Phi) at the observed target inter-arrival.

    Also returns how many hazards were clamped at the floor inside the log.
    """
    batch = stack_windows(batch)
    if batch.taus.shape[1] != model.M:
        raise ShapeMismatch(f"windows carry {batch.taus.shape[1]} inter-arrivals, model expects M={model.M}")
    fnn, rin, rrec = _batch_masks(masks, len(batch))
    h = encode(P, batch.taus / model.tau_scaler, rin, rrec, hook=hook)
    phi, lam = phi_and_hazard(model, P, h, batch.anchor, batch.target, fnn)
    lam_val = lam.value if isinstance(lam, dk.Var) else lam
    n_clamped = int(np.sum(lam_val < HAZARD_FLOOR))
    log_lam = dk.log(dk.clamp_min(lam, HAZARD_FLOOR))
    return log_lam, phi, n_clamped


def log_likelihood(model: NhpModel, windows, masks=None, P=None):
    """Sum over windows of log hazard minus cumulative hazard at each target."""
    if isinstance(windows, (list, tuple)) and not windows:
        raise TooShort("log-likelihood needs at least one window")
    P = model.params if P is None else P
    log_lam, phi, n_clamped = event_terms(model, P, windows, masks)
    ll = dk.sum_(log_lam - phi)
    val = ll.value if isinstance(ll, dk.Var) else ll
    if not np.all(np.isfinite(val)):
        raise NonFinite(f"log-likelihood is {val}")
    model.clamp_count += n_clamped
    return ll if isinstance(ll, dk.Var) else float(ll)


def encode_history(model: NhpModel, window, masks=None, hook=None):
    """Hidden state for a single window (length-H vector)."""
    batch = stack_windows([window])
    if batch.taus.shape[1] != model.M:
        raise ShapeMismatch(f"window has {batch.taus.shape[1]} inter-arrivals, model expects M={model.M}")
    _, rin, rrec = _batch_masks(masks, 1)
    return encode(model.params, batch.taus / model.tau_scaler, rin, rrec, hook=hook)[0]


def cumulative_hazard(model: NhpModel, h, t, tau, fnn_masks=None):
    """Phi(tau | h, t) for one history state; ``t`` is the latest event time."""
    tau_arr = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    if np.any(tau_arr < 0):
        raise ValueError("tau must be non-negative")
    H = np.atleast_2d(h)
    H = np.broadcast_to(H, (tau_arr.size, H.shape[1]))
    phi, _ = phi_and_hazard(model, model.params, H, np.full(tau_arr.size, t), tau_arr, fnn_masks,
                            need_hazard=False)
    if not np.all(np.isfinite(phi)):
        raise NonFinite("cumulative hazard is not finite")
    return phi if np.ndim(tau) else float(phi[0])


def hazard(model: NhpModel, h, t, tau, fnn_masks=None):
    tau_arr = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    H = np.atleast_2d(h)
    H = np.broadcast_to(H, (tau_arr.size, H.shape[1]))
    _, lam = phi_and_hazard(model, model.params, H, np.full(tau_arr.size, t), tau_arr, fnn_masks)
    if not np.all(np.isfinite(lam)):
        raise NonFinite("hazard is not finite")
    return lam if np.ndim(tau) else float(lam[0])


def calibrate_init(model: NhpModel, batch, masks=None):
    """Data-dependent initialisation of the hazard network.

    Sets each layer's bias so its pre-activations are zero-mean over ``batch``
    (positive weights otherwise push every unit into tanh saturation), then
    gives the linear skip a fixed share of the baseline rate and rescales the
    output weights so the median hazard under ``masks`` lands near ``1 / tau_scaler``.
    """
    batch = stack_windows(batch)
    P = model.params
    fnn = None if masks is None else masks.fnn
    h = encode(P, batch.taus / model.tau_scaler)
    tau = batch.target.reshape(-1, 1)
    a = (tau / model.tau_scaler) * dk.softplus(P["haz_Wtau"]) + h @ dk.softplus(P["haz_Wh"]) \
        + ((batch.anchor.reshape(-1, 1) + tau) / model.time_scaler) * dk.softplus(P["haz_Wt"])
    if fnn is not None:
        a = a * fnn[0]
    P["haz_b0"] = -a.mean(axis=0)
    v = np.tanh(a + P["haz_b0"])
    for l in range(1, model.n_layers):
        a = v @ dk.softplus(P[f"haz_W{l}"])
        if fnn is not None:
            a = a * fnn[l]
        P[f"haz_b{l}"] = -a.mean(axis=0)
        v = np.tanh(a + P[f"haz_b{l}"])
    out = v @ dk.softplus(P["haz_Wout"])
    P["haz_bout"] = -out.mean(axis=0)
    P["haz_Wskip"] = np.full((1, 1), _softplus_inv(1e-6))
    rin = rrec = None
    if masks is not None:
        rin, rrec = masks.rnn_input, masks.rnn_recurrent
    h = encode(P, batch.taus / model.tau_scaler, rin, rrec)
    _, lam = phi_and_hazard(model, P, h, batch.anchor, batch.target, fnn)
    med = float(np.median(lam))
    if med > 0 and np.isfinite(med):
        scale = (1.0 - SKIP_SHARE) / (med * model.tau_scaler)
        P["haz_Wout"] = _softplus_inv(dk.softplus(P["haz_Wout"]) * scale)
    P["haz_Wskip"] = np.full((1, 1), _softplus_inv(SKIP_SHARE))
    return model
