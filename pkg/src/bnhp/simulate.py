"""Synthetic event sequences: homogeneous Poisson and sum-of-exponentials Hawkes.

Randomness comes from numpy's PCG64 bit generator (``np.random.default_rng``),
so a given integer seed reproduces the same sequence on every platform.
Independent sequences get independent streams via ``SeedSequence.spawn``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParam, NonStationary
from .events import EventSequence


@dataclass(frozen=True)
class HawkesParams:
    """Baseline ``mu`` plus kernels ``alpha_j * beta_j * exp(-beta_j * lag)``.

    Each ``alpha_j`` is that kernel's branching ratio (its integral over lags).
    """

    mu: float
    alphas: tuple = ()
    betas: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.mu > 0:
            raise InvalidParam(f"mu must be positive, got {self.mu}")
        if len(self.alphas) != len(self.betas):
            raise InvalidParam(f"{len(self.alphas)} alphas but {len(self.betas)} betas")
        if any(a < 0 for a in self.alphas):
            raise InvalidParam(f"alphas must be non-negative, got {self.alphas}")
        if any(not b > 0 for b in self.betas):
            raise InvalidParam(f"betas must be positive, got {self.betas}")

    @property
    def branching_ratio(self):
        return sum(self.alphas)

    @property
    def stationary_rate(self):
        return self.mu / (1.0 - self.branching_ratio)


# Sim-Hawkes parameters; the second decay is printed as a repeated beta_1 and read as beta_2 = 20.
SIM_HAWKES = HawkesParams(mu=0.05, alphas=(0.4, 0.4), betas=(1.0, 20.0))


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_poisson(rate, horizon, seed=None, seq_id="0") -> EventSequence:
    """Homogeneous Poisson events on ``(0, horizon]``."""
    if not rate > 0:
        raise InvalidParam(f"rate must be positive, got {rate}")
    if not horizon > 0:
        raise InvalidParam(f"horizon must be positive, got {horizon}")
    rng = _rng(seed)
    chunk = int(rate * horizon + 5 * math.sqrt(rate * horizon) + 16)
    times = []
    t = 0.0
    while True:
        arrivals = t + np.cumsum(rng.exponential(1.0 / rate, size=chunk))
        inside = arrivals[arrivals <= horizon]
        times.append(inside)
        if inside.size < chunk:
            break
        t = arrivals[-1]
    return EventSequence(seq_id, np.concatenate(times))


def hawkes_intensity(params: HawkesParams, history, t) -> float:
    """Conditional intensity at ``t`` given past events (all assumed <= t)."""
    lags = t - np.asarray(history, dtype=np.float64)
    lam = params.mu
    for a, b in zip(params.alphas, params.betas):
        lam += float(np.sum(a * b * np.exp(-b * lags)))
    return lam


def simulate_hawkes(params: HawkesParams, horizon, seed=None, seq_id="0", debug=False) -> EventSequence:
    """Ogata thinning.

    Between events every kernel decays, so the intensity just after the latest
    accepted (or rejected) point dominates the intensity until the next one.
    The excitation of each kernel is carried as a running state, making each
    candidate O(number of kernels).
    """
    if params.branching_ratio >= 1.0:
        raise NonStationary(f"branching ratio {params.branching_ratio} >= 1")
    if not horizon > 0:
        raise InvalidParam(f"horizon must be positive, got {horizon}")
    rng = _rng(seed)
    jumps = [a * b for a, b in zip(params.alphas, params.betas)]
    betas = params.betas
    state = [0.0] * len(jumps)
    t = 0.0
    times = []
    while True:
        bound = params.mu + sum(state)
        w = rng.exponential(1.0 / bound)
        t += w
        if t > horizon:
            break
        state = [s * math.exp(-b * w) for s, b in zip(state, betas)]
        lam = params.mu + sum(state)
        if debug:
            assert lam <= bound * (1 + 1e-12), (lam, bound)
        if rng.random() * bound <= lam:
            times.append(t)
            state = [s + j for s, j in zip(state, jumps)]
    return EventSequence(seq_id, np.array(times))


def spawn_seeds(seed, n):
    """Independent child seeds, one per sequence."""
    return np.random.SeedSequence(seed).spawn(n)


def random_walk_locations(n, step_std=0.01, origin=(0.0, 0.0), seed=None):
    """Gaussian random walk in (lat, lon); the first point is one step from ``origin``."""
    rng = _rng(seed)
    steps = rng.normal(0.0, step_std, size=(n, 2))
    return np.asarray(origin, dtype=np.float64) + np.cumsum(steps, axis=0)


def simulate_st_poisson(rate, n_events, step_std=0.01, origin=(0.0, 0.0), seed=None, seq_id="0"):
    """Poisson times with random-walk locations, truncated to exactly ``n_events``."""
    if n_events < 1:
        raise InvalidParam(f"n_events must be positive, got {n_events}")
    rng = _rng(seed)
    times = np.cumsum(rng.exponential(1.0 / rate, size=n_events))
    locs = random_walk_locations(n_events, step_std, origin, rng)
    return EventSequence(seq_id, times, locs)
