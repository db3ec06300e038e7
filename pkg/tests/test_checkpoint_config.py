import json

import numpy as np
import pytest

from bnhp import baselines as bl
from bnhp import bayes, checkpoint
from bnhp.config import RunConfig, load_config
from bnhp.errors import CheckpointError, SchemaError
from conftest import toy_model


def test_bnhp_round_trip_bit_exact(tmp_path):
    m = toy_model()
    spec = bayes.DropoutSpec(0.3, 0.2, 0.1)
    path = tmp_path / "m.json"
    checkpoint.save(path, "bnhp", m, spec, extra={"time_scale": 2.0})
    kind, m2, spec2 = checkpoint.load(path)
    assert kind == "bnhp" and spec2 == spec
    for k in m.params:
        assert np.array_equal(m.params[k], m2.params[k])
    assert json.loads(path.read_text())["extra"] == {"time_scale": 2.0}


def test_baseline_round_trips(tmp_path):
    cases = [
        ("shp", bl.HawkesExpFit(0.5, 0.3, 1.2, True, 10.0)),
        ("eh", [bl.HawkesExpFit(0.5, 0.1, 0.01, True, 3.0), bl.HawkesExpFit(0.6, 0.2, 0.1, True, 4.0)]),
        ("st-homog", bl.StHomogPoisson(2.0, (0.0, 1.0), (2.0, 3.0))),
    ]
    for kind, model in cases:
        path = tmp_path / f"{kind}.json"
        checkpoint.save(path, kind, model)
        assert checkpoint.load(path)[1] == model


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.json"
    checkpoint.save(path, "shp", bl.HawkesExpFit(0.5, 0.3, 1.2))
    doc = json.loads(path.read_text())
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="99"):
        checkpoint.load(path)
    path.write_text("{not json")
    with pytest.raises(CheckpointError):
        checkpoint.load(path)
    with pytest.raises(CheckpointError):
        checkpoint.to_dict("gp", None)


def test_config_defaults():
    cfg = load_config(None)
    assert cfg.model.hidden_size == 64 and cfg.train.lr == 1e-4 and cfg.predict.S == 50
    assert cfg.snapshot()["predict"]["k_levels"] == [1.0, 2.0, 5.0]


def test_config_file_and_override(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[train]\nepochs = 7\nlr = 0.01\n[predict]\nk_levels = 1, 3\npersist_masks = yes\n")
    cfg = load_config(p)
    assert cfg.train.epochs == 7 and cfg.predict.k_levels == (1.0, 3.0) and cfg.predict.persist_masks
    cfg2 = cfg.override("train", epochs=3, lr=None)
    assert cfg2.train.epochs == 3 and cfg2.train.lr == 0.01


@pytest.mark.parametrize("text", [
    "[optim]\nlr = 1\n",
    "[train]\nlearnrate = 1\n",
    "[train]\nepochs = many\n",
    "[dropout]\np_fnn = 1.5\n",
    "no section\n",
])
def test_config_errors(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    with pytest.raises(SchemaError):
        load_config(p)


def test_override_validation():
    with pytest.raises(SchemaError):
        RunConfig().override("predict", S=0)
