"""Monte-Carlo dropout for the neural Hawkes model.

Dropout acts on effective weights. Hazard-network (and spatial-head) hidden
layers lose whole output columns; the recurrent encoder loses rows of its
input and recurrent matrices, with one mask per window reused at every
recurrence step. Kept weights are not rescaled and dropout stays on at
prediction time, so training and prediction run the same stochastic network.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import diffkernel as dk
from . import nhp
from .errors import Diverged, NonFinite, TooShort
from .events import stack_windows

log = logging.getLogger(__name__)

MAX_CLAMPED_FRACTION = 1e-3


@dataclass(frozen=True)
class DropoutSpec:
    """Drop probabilities. ``sigma_r`` is the width of the Gaussian components in
    the recurrent variational family; it is recorded but not sampled (the
    mixture is taken in its small-variance limit, i.e. plain row masking)."""

    p_fnn: float = 0.5
    p_rnn_input: float = 0.1
    p_rnn_recurrent: float = 0.1
    sigma_r: float = 1e-3

    def __post_init__(self):
        for name in ("p_fnn", "p_rnn_input", "p_rnn_recurrent"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {p}")

    @property
    def is_deterministic(self):
        return self.p_fnn == 0 and self.p_rnn_input == 0 and self.p_rnn_recurrent == 0


NO_DROPOUT = DropoutSpec(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class MaskShapes:
    hidden_size: int
    fnn_widths: tuple
    spatial_widths: tuple = ()

    @classmethod
    def of(cls, model):
        return cls(model.hidden_size, tuple(model.fnn_widths), tuple(getattr(model, "spatial_widths", ())))


@dataclass
class MaskSet:
    """Binary keep-masks, one row per window (or per window and MC sample)."""

    fnn: list
    rnn_input: np.ndarray
    rnn_recurrent: np.ndarray
    spatial: list = field(default_factory=list)
    seed: object = None

    def __len__(self):
        return self.rnn_input.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.90
    beta2: float = 0.99
    l2_lambda: float = 0.001
    batch_size: int = 512
    epochs: int = 500
    seed: int = 11
    clip_norm: float = 10.0
    eps: float = 1e-8
    valid_mc_samples: int = 10

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if not self.l2_lambda >= 0:
            raise ValueError(f"l2_lambda must be non-negative, got {self.l2_lambda}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def sample_masks(spec: DropoutSpec, shapes: MaskShapes, seed, n=1) -> MaskSet:
    """Draw ``n`` independent mask rows; entry is 0 with the layer's drop probability."""
    rng = np.random.default_rng(seed)

    def keep(p, width):
        return (rng.random((n, width)) >= p).astype(np.float64)

    fnn = [keep(spec.p_fnn, w) for w in shapes.fnn_widths]
    rnn_input = keep(spec.p_rnn_input, 1)
    rnn_recurrent = keep(spec.p_rnn_recurrent, shapes.hidden_size)
    spatial = [keep(spec.p_fnn, w) for w in shapes.spatial_widths]
    return MaskSet(fnn, rnn_input, rnn_recurrent, spatial, seed)


def concat_masks(parts) -> MaskSet:
    parts = list(parts)
    return MaskSet(
        fnn=[np.concatenate(layer) for layer in zip(*(m.fnn for m in parts))],
        rnn_input=np.concatenate([m.rnn_input for m in parts]),
        rnn_recurrent=np.concatenate([m.rnn_recurrent for m in parts]),
        spatial=[np.concatenate(layer) for layer in zip(*(m.spatial for m in parts))],
    )


def window_seed(seed, sequence_id, event_index):
    """Seed for one window's MC masks, independent of evaluation order."""
    return [int(seed), zlib.crc32(str(sequence_id).encode()), int(event_index)]


def mc_masks(spec, shapes, seed, batch, S, persist=False) -> MaskSet:
    """S mask rows per window, window-major (row ``i * S + s``).

    By default every window draws fresh masks; with ``persist`` all windows
    share the same S sampled architectures.
    """
    if persist:
        shared = sample_masks(spec, shapes, [int(seed)], n=S)
        return concat_masks([shared] * len(batch))
    ids = batch.sequence_ids or [""] * len(batch)
    return concat_masks(
        sample_masks(spec, shapes, window_seed(seed, sid, e), n=S)
        for sid, e in zip(ids, batch.event_index)
    )


def l2_penalty(model, P, extra_names=()):
    """Sum of squared effective weights: positive hazard weights, encoder matrices and bias."""
    total = 0.0
    for name in model.hazard_weight_names():
        total = total + dk.sum_(dk.square(dk.softplus(P[name])))
    for name in ("enc_V", "enc_U", "enc_b", *extra_names):
        total = total + dk.sum_(dk.square(P[name]))
    return total


def elbo_loss(model, batch, masks, cfg: TrainConfig, P=None):
    """Negative masked log-likelihood plus ``l2_lambda`` times the weight penalty."""
    P = model.params if P is None else P
    nll = -nhp.log_likelihood(model, batch, masks, P=P)
    if cfg.l2_lambda == 0:
        return nll
    return nll + cfg.l2_lambda * l2_penalty(model, P)


class Adam:
    def __init__(self, params, lr, beta1, beta2, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = {}
        for k, w in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            step = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            out[k] = w - step
        return out


def clip_by_global_norm(grads, max_norm):
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if not np.isfinite(norm):
        return grads, norm
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


@dataclass
class LossTrace:
    epochs: list = field(default_factory=list)
    train_elbo: list = field(default_factory=list)
    valid_mnll: list = field(default_factory=list)
    best_epoch: int = 0

    def append(self, epoch, train_elbo, valid_mnll):
        self.epochs.append(epoch)
        self.train_elbo.append(train_elbo)
        self.valid_mnll.append(valid_mnll)

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_elbo,valid_mnll\n")
            for e, tr, va in zip(self.epochs, self.train_elbo, self.valid_mnll):
                fh.write(f"{e},{tr!r},{va!r}\n")


def mc_event_terms(model, batch, spec, S, seed, chunk=20000):
    """Log hazard and Phi at each target for S dropout samples; arrays shaped (n, S)."""
    batch = stack_windows(batch)
    n = len(batch)
    if spec.is_deterministic:
        lp, phi, _ = nhp.event_terms(model, model.params, batch)
        return np.repeat(lp[:, None], S, axis=1), np.repeat(phi[:, None], S, axis=1)
    shapes = MaskShapes.of(model)
    per = max(1, chunk // S)
    lps, phis = [], []
    for start in range(0, n, per):
        sub = batch.take(np.arange(start, min(n, start + per)))
        masks = mc_masks(spec, shapes, seed, sub, S)
        rows = sub.take(np.repeat(np.arange(len(sub)), S))
        lp, phi, _ = nhp.event_terms(model, model.params, rows, masks)
        lps.append(lp.reshape(-1, S))
        phis.append(phi.reshape(-1, S))
    return np.concatenate(lps), np.concatenate(phis)


def mc_log_density(model, batch, spec, S, seed):
    """Log of the MC-averaged predictive density at each observed target."""
    lp, phi = mc_event_terms(model, batch, spec, S, seed)
    return _log_mean_exp(lp - phi)


def _log_mean_exp(x):
    m = np.max(x, axis=1, keepdims=True)
    return (m + np.log(np.mean(np.exp(x - m), axis=1, keepdims=True)))[:, 0]


def build_model(train_windows, spec: DropoutSpec = DropoutSpec(), model_cfg=nhp.ModelConfig(), seed=11):
    """Scalers from the training windows, random init, then data-dependent calibration."""
    batch = stack_windows(train_windows)
    tau_scaler, time_scaler = nhp.fit_scalers(batch)
    rng = np.random.default_rng([int(seed), 0])
    model = nhp.new_model(model_cfg.hidden_size, model_cfg.n_layers, model_cfg.units, model_cfg.M,
                          tau_scaler, time_scaler, rng=rng, keep_prob=1.0 - spec.p_fnn)
    calib = batch if len(batch) <= 4096 else batch.take(rng.choice(len(batch), 4096, replace=False))
    masks = None if spec.is_deterministic else sample_masks(spec, MaskShapes.of(model), rng, len(calib))
    return nhp.calibrate_init(model, calib, masks)


def _validation_mnll(model, valid, spec, cfg):
    if spec.is_deterministic or cfg.valid_mc_samples <= 0:
        return -nhp.log_likelihood(model, valid) / len(valid)
    return float(-np.mean(mc_log_density(model, valid, spec, cfg.valid_mc_samples, cfg.seed + 1)))


def train(model, train_windows, valid_windows=None, spec: DropoutSpec = DropoutSpec(),
          cfg: TrainConfig = TrainConfig(), loss_fn=None, validate=None):
    """Minimise the dropout ELBO with Adam; keeps the best-validation weights.

    Returns ``(trained_model, LossTrace)``. ``loss_fn(model, batch, masks, P)``
    replaces the temporal ELBO and ``validate(model, valid_batch)`` the
    validation MNLL (the spatio-temporal model supplies both).
    """
    batch_all = stack_windows(train_windows)
    if len(batch_all) == 0:
        raise TooShort("no training windows")
    valid = None
    if valid_windows is not None and len(valid_windows):
        valid = stack_windows(valid_windows)
    model = model.copy()
    trace = LossTrace()
    if cfg.epochs == 0:
        return model, trace

    if loss_fn is None:
        def loss_fn(m, b, masks, P):
            return elbo_loss(m, b, masks, cfg, P=P)

    if validate is None:
        def validate(m, v):
            return _validation_mnll(m, v, spec, cfg)
    rng = np.random.default_rng(cfg.seed)
    shapes = MaskShapes.of(model)
    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    n = len(batch_all)
    best = (np.inf, model.params, 0)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        model.clamp_count = 0
        for start in range(0, n, cfg.batch_size):
            b = batch_all.take(perm[start : start + cfg.batch_size])
            mask_seed = int(rng.integers(2**63))
            masks = None if spec.is_deterministic else sample_masks(spec, shapes, mask_seed, len(b))
            try:
                value, grads = dk.value_and_grad(lambda P: loss_fn(model, b, masks, P), model.params)
            except NonFinite as exc:
                raise Diverged(f"epoch {epoch}: {exc}") from None
            grads, norm = clip_by_global_norm(grads, cfg.clip_norm)
            if not np.isfinite(value) or not np.isfinite(norm):
                raise Diverged(f"epoch {epoch}: loss {value}, gradient norm {norm}")
            model.params = opt.step(model.params, grads)
            total += value
        if model.clamp_count > MAX_CLAMPED_FRACTION * n:
            raise NonFinite(
                f"epoch {epoch}: hazard hit the 1e-12 floor for {model.clamp_count} of {n} training events"
            )
        v = validate(model, valid) if valid is not None else np.nan
        trace.append(epoch, total / n, float(v))
        score = v if valid is not None else -epoch
        if score < best[0]:
            best = (score, {k: a.copy() for k, a in model.params.items()}, epoch)
        log.debug("epoch %d train_elbo %.6f valid_mnll %.6f", epoch, total / n, v)
    model.params = best[1]
    trace.best_epoch = best[2]
    return model, trace
