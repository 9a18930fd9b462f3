import json

import pytest

from pmffnn.config import ArchConfig, figure1_config
from pmffnn.errors import ConfigError


def test_round_trip(tmp_path):
    cfg = ArchConfig.from_dict({"n_features": 10, "n_outputs": 3, "groups": [[0, 1], [2, 3, 9]],
                                "include_full_pathway": True, "pathway": {"hidden_dim": 5}})
    cfg.dump(tmp_path / "c.json")
    assert ArchConfig.load(tmp_path / "c.json") == cfg


def test_defaults():
    cfg = ArchConfig(n_features=8, n_outputs=2)
    assert cfg.kind == "pmffnn" and cfg.task == "classification"
    assert cfg.head.hidden_dim == 16 and cfg.head.dropout_rate == 0.3


def test_figure1():
    cfg = figure1_config()
    assert cfg.include_full_pathway and cfg.groups == 5


@pytest.mark.parametrize("doc, path", [
    ({"n_features": 4, "n_outputs": 2, "colour": 1}, "colour"),
    ({"n_features": 0, "n_outputs": 2}, "n_features"),
    ({"n_features": 4, "n_outputs": 2, "groups": 5}, "groups"),
    ({"n_features": 4, "n_outputs": 2, "head": {"dropout_rate": 1.0}}, "head.dropout_rate"),
    ({"n_features": 4, "n_outputs": 2, "task": "ranking"}, "task"),
    ({"n_outputs": 2}, "n_features"),
])
def test_errors_name_the_field(doc, path):
    with pytest.raises(ConfigError) as info:
        ArchConfig.from_dict(doc)
    assert path in str(info.value)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        ArchConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        ArchConfig.load(bad)
    bad.write_text(json.dumps([1, 2]))
    with pytest.raises(ConfigError):
        ArchConfig.load(bad)
