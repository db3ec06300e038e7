"""Reference models: exponential Hawkes (MLE), least-squares Hawkes ensemble,
homogeneous spatio-temporal Poisson and the dropout-free spatio-temporal NHP.

All of them emit the same TimePrediction / LocationPrediction objects as the
neural model so one metrics path serves every model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import bayes, spatial
from . import predict as pr
from .errors import DegenerateDesign, EmptyData, InvalidParam, NotConverged, TooShort
from .events import EventSequence, split_bounds

MIN_FIT_EVENTS = 50
ALPHA_MAX = 1.0 - 1e-6


@dataclass(frozen=True)
class HawkesExpFit:
    mu: float
    alpha: float
    beta: float
    converged: bool = True
    nll: float = float("nan")

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidParam(f"mu must be positive, got {self.mu}")
        if not 0 <= self.alpha < 1:
            raise InvalidParam(f"alpha must lie in [0, 1), got {self.alpha}")
        if not self.beta > 0:
            raise InvalidParam(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class EnsembleConfig:
    n_members: int = 10
    decays: tuple = tuple(np.logspace(-3, -1, 10))

    def __post_init__(self):
        d = tuple(float(x) for x in self.decays)
        object.__setattr__(self, "decays", d)
        if len(d) != self.n_members:
            raise InvalidParam(f"{self.n_members} members but {len(d)} decays")
        if not d or any(x <= 0 for x in d) or any(b <= a for a, b in zip(d, d[1:])):
            raise InvalidParam(f"decays must be positive and strictly increasing, got {d}")


def _times(seq):
    return np.asarray(seq.times if isinstance(seq, EventSequence) else seq, dtype=np.float64)


def _check_params(mu, alpha, beta):
    if not (mu > 0 and alpha >= 0 and beta > 0):
        raise InvalidParam(f"need mu > 0, alpha >= 0, beta > 0; got ({mu}, {alpha}, {beta})")


def _recursion(t, beta):
    """A_i = sum_{j<i} exp(-beta (t_i - t_j)) and its beta-derivative."""
    n = t.size
    A = np.zeros(n)
    B = np.zeros(n)
    a = b = 0.0
    for i in range(1, n):
        d = t[i] - t[i - 1]
        e = math.exp(-beta * d)
        a_new = e * (1.0 + a)
        b = e * b - d * e * (1.0 + a)
        a = a_new
        A[i], B[i] = a, b
    return A, B


def shp_loglik(params, seq, horizon=None, grad=False):
    """Exponential-kernel Hawkes log-likelihood on ``[0, horizon]``.

    ``params`` is ``(mu, alpha, beta)`` with intensity
    ``mu + alpha * beta * sum exp(-beta * lag)``. With ``grad`` the gradient
    with respect to the three parameters is returned as well.
    """
    mu, alpha, beta = (float(x) for x in params)
    _check_params(mu, alpha, beta)
    t = _times(seq)
    T = float(t[-1]) if horizon is None else float(horizon)
    if t.size and T < t[-1]:
        raise InvalidParam(f"horizon {T} precedes the last event {t[-1]}")
    A, B = _recursion(t, beta)
    lam = mu + alpha * beta * A
    tail = np.exp(-beta * (T - t))
    ll = float(np.sum(np.log(lam)) - mu * T - alpha * np.sum(1.0 - tail))
    if not grad:
        return ll
    g = np.array([
        np.sum(1.0 / lam) - T,
        np.sum(beta * A / lam) - np.sum(1.0 - tail),
        np.sum(alpha * (A + beta * B) / lam) - alpha * np.sum((T - t) * tail),
    ])
    return ll, g


def _pieces(seqs, horizon):
    """(times, horizon) pairs for one sequence or a list of independent sequences."""
    if isinstance(seqs, (list, tuple)) and seqs and not np.isscalar(seqs[0]):
        out = [(_times(s), None) for s in seqs]
    else:
        out = [(_times(seqs), horizon)]
    return [(t, float(t[-1]) if T is None else float(T)) for t, T in out if t.size]


def shp_fit(seq, init=None, n_starts=5, seed=0, horizon=None, maxiter=500, gtol=1e-6):
    """Maximum-likelihood exponential Hawkes via multi-start L-BFGS-B.

    ``seq`` may be one sequence or a list of independent sequences sharing the
    parameters. The objective is the per-event negative log-likelihood and
    ``converged`` is set when its projected gradient norm is below ``gtol``.
    The best fit is returned either way.
    """
    pieces = _pieces(seq, horizon)
    n = sum(t.size for t, _ in pieces)
    if n < MIN_FIT_EVENTS:
        raise TooShort(f"SHP fit needs at least {MIN_FIT_EVENTS} events, got {n}")
    bounds = [(1e-10, None), (0.0, ALPHA_MAX), (1e-8, None)]

    def objective(x):
        ll, g = 0.0, np.zeros(3)
        for t, T in pieces:
            a, b = shp_loglik(x, t, T, grad=True)
            ll, g = ll + a, g + b
        return -ll / n, -g / n

    span = sum(T for _, T in pieces)
    rate = n / span
    gap = span / n
    rng = np.random.default_rng(seed)
    starts = [np.array(init, dtype=float)] if init is not None else []
    starts.append(np.array([0.5 * rate, 0.5, 1.0 / gap]))
    while len(starts) < n_starts:
        a = rng.uniform(0.05, 0.9)
        starts.append(np.array([rate * (1 - a), a, math.exp(rng.uniform(-3, 3)) / gap]))
    best = None
    for x0 in starts:
        res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": maxiter, "ftol": 1e-15, "gtol": 1e-10})
        if best is None or res.fun < best.fun:
            best = res
    x = best.x
    _, g = objective(x)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])
    projected = np.clip(x - g, lo, hi) - x
    converged = bool(np.linalg.norm(projected) < gtol)
    return HawkesExpFit(float(x[0]), float(min(x[1], ALPHA_MAX)), float(x[2]), converged, float(best.fun * n))


def shp_fit_checked(seq, **kw):
    """Like shp_fit but raises NotConverged (carrying the fit) when not converged."""
    fit = shp_fit(seq, **kw)
    if not fit.converged:
        err = NotConverged(f"SHP fit did not converge: {fit}")
        err.fit = fit
        raise err
    return fit


# ---- least-squares ensemble ----

def _ls_terms(t, beta, T):
    """Coefficients of the least-squares risk in (mu, alpha) for a fixed decay.

    risk = a mu^2 + 2 b mu alpha + c alpha^2 - 2 d mu - 2 e alpha with
    g(t) = beta * sum exp(-beta (t - t_j)) the unit-alpha excitation.
    """
    A, _ = _recursion(t, beta)
    g_after = beta * (A + 1.0)  # excitation just after each event
    gaps = np.diff(np.append(t, T))
    decay2 = -np.expm1(-2.0 * beta * gaps) / (2.0 * beta)
    a = T
    b = float(np.sum(1.0 - np.exp(-beta * (T - t))))
    c = float(np.sum(g_after ** 2 * decay2))
    d = float(t.size)
    e = float(np.sum(beta * A))
    return a, b, c, d, e


def ls_risk(mu, alpha, beta, seq, horizon=None):
    t = _times(seq)
    T = float(t[-1]) if horizon is None else float(horizon)
    a, b, c, d, e = _ls_terms(t, beta, T)
    return a * mu * mu + 2 * b * mu * alpha + c * alpha * alpha - 2 * d * mu - 2 * e * alpha


def _box_qp(a, b, c, d, e, alpha_max=ALPHA_MAX):
    """Minimise the 2x2 quadratic over mu >= 0, 0 <= alpha <= alpha_max."""
    det = a * c - b * b
    scale = max(abs(a * c), b * b, 1e-300)
    if det <= 1e-12 * scale:
        raise DegenerateDesign(f"least-squares normal equations are singular (det={det:.3g})")
    f = lambda m, al: a * m * m + 2 * b * m * al + c * al * al - 2 * d * m - 2 * e * al
    cands = [((c * d - b * e) / det, (a * e - b * d) / det)]
    for al in (0.0, alpha_max):
        cands.append((max((d - b * al) / a, 0.0), al))
    cands.append((0.0, min(max(e / c, 0.0), alpha_max)))
    feasible = [(m, al) for m, al in cands if m >= 0 and 0 <= al <= alpha_max]
    return min(feasible, key=lambda p: f(*p))


def eh_fit(seq, cfg: EnsembleConfig = EnsembleConfig(), horizon=None):
    """One least-squares Hawkes fit per decay in ``cfg.decays``.

    The risk is additive over independent sequences, so a list of sequences
    simply sums the quadratic's coefficients.
    """
    pieces = _pieces(seq, horizon)
    n = sum(t.size for t, _ in pieces)
    if n < MIN_FIT_EVENTS:
        raise TooShort(f"ensemble fit needs at least {MIN_FIT_EVENTS} events, got {n}")
    fits = []
    for beta in cfg.decays:
        terms = np.sum([_ls_terms(t, beta, T) for t, T in pieces], axis=0)
        mu, alpha = _box_qp(*terms)
        mu = max(mu, 1e-12)
        alpha = min(alpha, ALPHA_MAX)
        nll = -sum(shp_loglik((mu, alpha, beta), t, T) for t, T in pieces)
        fits.append(HawkesExpFit(float(mu), float(alpha), float(beta), True, float(nll)))
    return fits


# ---- Hawkes prediction (shared by SHP and EH) ----

def _excitation_state(t, beta):
    """S_i = sum_{j<=i} exp(-beta (t_i - t_j)) just after each event."""
    A, _ = _recursion(t, beta)
    return A + 1.0


def hawkes_phi(fit: HawkesExpFit, state, tau):
    """Cumulative hazard from the latest event given its excitation state."""
    return fit.mu * tau + fit.alpha * state * (-np.expm1(-fit.beta * tau))


def hawkes_hazard(fit: HawkesExpFit, state, tau):
    return fit.mu + fit.alpha * fit.beta * state * np.exp(-fit.beta * tau)


def hawkes_predict_sequence(fits, seq, start=None, k_levels=(1.0, 2.0, 5.0), bisect_tol=1e-8):
    """1-step-ahead predictions for events ``start`` onward using the full observed history.

    Each fit contributes one sample (the median of its predictive
    distribution); an ensemble is summarised like MC samples.
    """
    fits = list(fits)
    if not fits:
        raise InvalidParam("need at least one fit")
    t = _times(seq)
    if start is None:
        start = split_bounds(t.size)[1]
    start = max(int(start), 1)
    if start >= t.size:
        raise TooShort("no events to predict")
    anchor = t[start - 1 : -1]
    actual_tau = t[start:] - anchor
    n = anchor.size
    meds = np.empty((n, len(fits)))
    logp = np.empty((n, len(fits)))
    for m, fit in enumerate(fits):
        state = _excitation_state(t, fit.beta)[start - 1 : -1]
        meds[:, m] = pr.bisect_vec(lambda tau, rows: hawkes_phi(fit, state[rows], tau), n,
                                   start=math.log(2.0) / fit.mu / 64, tol=bisect_tol, max_iter=400)
        logp[:, m] = np.log(hawkes_hazard(fit, state, actual_tau)) - hawkes_phi(fit, state, actual_tau)
    seq_id = seq.id if isinstance(seq, EventSequence) else ""
    out = []
    for i in range(n):
        samples = anchor[i] + meds[i]
        mean, sigma, bounds = pr.summarize(samples, tuple(float(k) for k in k_levels))
        lp = logp[i]
        mx = lp.max()
        out.append(pr.TimePrediction(samples, mean, sigma, bounds, float(t[start + i]),
                                     float(mx + np.log(np.mean(np.exp(lp - mx)))), start + i, seq_id))
    return out


def eh_predict(fits, history, k_levels=(1.0, 2.0, 5.0)):
    """Prediction of the event after ``history`` (times); empty history means t_N = 0."""
    h = np.asarray(history, dtype=np.float64)
    fits = list(fits)
    if not fits:
        raise InvalidParam("need at least one fit")
    tN = float(h[-1]) if h.size else 0.0
    meds = []
    for fit in fits:
        state = float(np.sum(np.exp(-fit.beta * (tN - h)))) if h.size else 0.0
        s = np.array([state])
        meds.append(pr.bisect_vec(lambda tau, rows: hawkes_phi(fit, s[rows], tau), 1,
                                  start=math.log(2.0) / fit.mu / 64, tol=1e-10, max_iter=400)[0])
    samples = tN + np.array(meds)
    mean, sigma, bounds = pr.summarize(samples, tuple(float(k) for k in k_levels))
    return pr.TimePrediction(samples, mean, sigma, bounds)


# ---- homogeneous spatio-temporal Poisson ----

BOX_FLOOR = 1e-4
DENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class StHomogPoisson:
    rate: float
    lo: tuple = (0.0, 0.0)
    hi: tuple = (0.0, 0.0)
    spatial: bool = True

    @property
    def widths(self):
        return np.maximum(np.asarray(self.hi) - np.asarray(self.lo), BOX_FLOOR)

    def log_time_density(self, tau):
        return math.log(self.rate) - self.rate * np.asarray(tau, dtype=np.float64)

    def log_space_density(self, locs):
        locs = np.atleast_2d(np.asarray(locs, dtype=np.float64))
        lo = np.asarray(self.lo)
        inside = np.all((locs >= lo) & (locs <= lo + self.widths), axis=1)
        dens = np.where(inside, 1.0 / float(np.prod(self.widths)), DENSITY_FLOOR)
        return np.log(dens)


def st_homog_poisson_fit(sequences):
    """Rate = total events / total observed duration; uniform density over the location bounding box."""
    seqs = [sequences] if isinstance(sequences, EventSequence) else list(sequences)
    n = sum(len(s.times) for s in seqs)
    duration = sum(float(s.times[-1]) for s in seqs if len(s.times))
    if n == 0 or not duration > 0:
        raise EmptyData("homogeneous Poisson fit needs events over a positive duration")
    if all(s.has_locations for s in seqs):
        locs = np.concatenate([s.locations for s in seqs])
        return StHomogPoisson(n / duration, tuple(locs.min(axis=0)), tuple(locs.max(axis=0)), True)
    return StHomogPoisson(n / duration, spatial=False)


def homog_predict(model: StHomogPoisson, windows, k_levels=(1.0, 2.0, 5.0)):
    """Time (and, with locations, place) predictions: median gap and box centre, zero spread."""
    from .events import stack_windows

    batch = stack_windows(windows)
    ks = tuple(float(k) for k in k_levels)
    med = math.log(2.0) / model.rate
    centre = np.asarray(model.lo) + 0.5 * model.widths
    times, locs = [], []
    for i in range(len(batch)):
        mean = float(batch.anchor[i] + med)
        sid = batch.sequence_ids[i] if batch.sequence_ids else ""
        times.append(pr.TimePrediction(
            np.array([mean]), mean, 0.0, {k: (mean, mean) for k in ks}, float(batch.anchor[i] + batch.target[i]),
            float(model.log_time_density(batch.target[i])), int(batch.event_index[i]), sid))
        if model.spatial and batch.target_loc is not None:
            actual = batch.target_loc[i]
            locs.append(spatial.LocationPrediction(
                centre[None].copy(), centre.copy(), np.zeros(2), {k: (centre.copy(), centre.copy()) for k in ks},
                actual.copy(), float(model.log_space_density(actual)[0]), int(batch.event_index[i]), sid))
    return times, locs


# ---- spatio-temporal NHP (no dropout) ----

def st_nhp_train(train_windows, valid_windows=None, cfg=bayes.TrainConfig(), model_cfg=None, seed=11):
    kw = {} if model_cfg is None else {"model_cfg": model_cfg}
    model = spatial.build_st_model(train_windows, bayes.NO_DROPOUT, seed=seed, **kw)
    return spatial.st_train(model, train_windows, valid_windows, bayes.NO_DROPOUT, cfg)


def st_nhp_predict(model, windows, cfg=pr.PredictConfig(), seed=0):
    """Deterministic predictions; locations aggregate the Gaussian means, so every sigma is 0."""
    times = pr.predict_windows(model, windows, bayes.NO_DROPOUT, cfg, seed)
    locs = spatial.predict_locations(model, windows, bayes.NO_DROPOUT, cfg, seed, mu_only=True)
    return times, locs

