"""INI-style run configuration.

Sections and keys mirror the dataclass field names exactly::

    [model]    hidden_size, n_layers, units, M
    [dropout]  p_fnn, p_rnn_input, p_rnn_recurrent, sigma_r
    [train]    lr, beta1, beta2, l2_lambda, batch_size, epochs, seed, clip_norm, eps, valid_mc_samples
    [predict]  S, k_levels (comma separated), bisect_tol, bisect_max_iter, persist_masks
    [split]    train_frac, valid_frac, test_frac

Precedence is command-line flag, then config file, then built-in default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .bayes import DropoutSpec, TrainConfig
from .errors import SchemaError
from .events import SplitSpec
from .nhp import ModelConfig
from .predict import PredictConfig

SECTIONS = {
    "model": ModelConfig,
    "dropout": DropoutSpec,
    "train": TrainConfig,
    "predict": PredictConfig,
    "split": SplitSpec,
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    dropout: DropoutSpec = field(default_factory=DropoutSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)
    split: SplitSpec = field(default_factory=SplitSpec)

    def snapshot(self):
        return {name: {f.name: _plain(getattr(getattr(self, name), f.name)) for f in fields(getattr(self, name))}
                for name in SECTIONS}

    def override(self, section, **values):
        """Copy with non-None ``values`` replacing fields of ``section``."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        try:
            new = replace(getattr(self, section), **values)
        except ValueError as exc:
            raise SchemaError(f"[{section}] {exc}") from None
        return replace(self, **{section: new})


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def _coerce(section, key, raw, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise SchemaError(f"[{section}] {key} = {raw!r} is not a valid {type(default).__name__}") from None
    return raw


def load_config(path=None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case sensitive (M, S)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise SchemaError(f"{path}: {exc}") from None
    for section in parser.sections():
        if section not in SECTIONS:
            raise SchemaError(f"{path}: unknown section [{section}]; expected one of {sorted(SECTIONS)}")
        defaults = {f.name: getattr(getattr(cfg, section), f.name) for f in fields(SECTIONS[section])}
        values = {}
        for key, raw in parser.items(section):
            if key not in defaults:
                raise SchemaError(f"{path}: unknown key {key!r} in [{section}]")
            values[key] = _coerce(section, key, raw, defaults[key])
        cfg = cfg.override(section, **values)
    return cfg
