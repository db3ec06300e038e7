"""JSON checkpoints for every model kind.

A checkpoint is one JSON object tagged with ``kind`` and
``format_version``. Arrays are stored as ``{"shape", "data"}`` with floats
written by ``json`` (shortest round-trip repr), so reloading is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, fields

import numpy as np

from . import CHECKPOINT_FORMAT_VERSION, __version__
from .baselines import HawkesExpFit, StHomogPoisson
from .bayes import DropoutSpec
from .errors import CheckpointError
from .nhp import NhpModel
from .spatial import StModel

KINDS = ("bnhp", "st-bnhp", "st-nhp", "shp", "eh", "st-homog")

_NHP_FIELDS = ("hidden_size", "n_layers", "units", "M", "tau_scaler", "time_scaler")
_ST_FIELDS = ("spatial_layers", "spatial_units", "loc_mean", "loc_std", "step_std")


def _arr(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def _unarr(d):
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def to_dict(kind, model, spec: DropoutSpec | None = None, extra=None):
    if kind not in KINDS:
        raise CheckpointError(f"unknown model kind {kind!r}")
    doc = {"format_version": CHECKPOINT_FORMAT_VERSION, "tool_version": __version__, "kind": kind}
    if kind in ("bnhp", "st-bnhp", "st-nhp"):
        doc["model"] = {f: getattr(model, f) for f in _NHP_FIELDS}
        if kind != "bnhp":
            doc["model"].update({f: list(getattr(model, f)) if f.startswith(("loc", "step")) else getattr(model, f)
                                 for f in _ST_FIELDS})
        doc["params"] = {k: _arr(v) for k, v in sorted(model.params.items())}
        doc["dropout"] = asdict(spec if spec is not None else DropoutSpec())
    elif kind == "shp":
        doc["fit"] = asdict(model)
    elif kind == "eh":
        doc["members"] = [asdict(f) for f in model]
    else:
        doc["fit"] = {"rate": model.rate, "lo": list(model.lo), "hi": list(model.hi), "spatial": model.spatial}
    if extra:
        doc["extra"] = extra
    return doc


def from_dict(doc):
    """Returns ``(kind, model, dropout_spec_or_None)``."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise CheckpointError("not a checkpoint: missing 'kind'")
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format {version} is not supported (expected {CHECKPOINT_FORMAT_VERSION})")
    kind = doc["kind"]
    try:
        if kind in ("bnhp", "st-bnhp", "st-nhp"):
            params = {k: _unarr(v) for k, v in doc["params"].items()}
            m = doc["model"]
            base = [m[f] for f in _NHP_FIELDS]
            spec = DropoutSpec(**{f.name: doc["dropout"][f.name] for f in fields(DropoutSpec)})
            if kind == "bnhp":
                return kind, NhpModel(params, *base), spec
            st = {f: tuple(m[f]) if isinstance(m[f], list) else m[f] for f in _ST_FIELDS}
            return kind, StModel(params, *base, **st), spec
        if kind == "shp":
            return kind, HawkesExpFit(**doc["fit"]), None
        if kind == "eh":
            return kind, [HawkesExpFit(**f) for f in doc["members"]], None
        if kind == "st-homog":
            f = doc["fit"]
            return kind, StHomogPoisson(f["rate"], tuple(f["lo"]), tuple(f["hi"]), f["spatial"]), None
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed {kind} checkpoint: {exc}") from None
    raise CheckpointError(f"unknown model kind {kind!r}")


def save(path, kind, model, spec=None, extra=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(kind, model, spec, extra), fh)
        fh.write("\n")


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from None
    return from_dict(doc)
