import json
import logging

import pytest

from isotorus import IsotorusValidationError, config
from isotorus.config import Settings


def test_defaults():
    settings = Settings()
    assert settings.sidelobe_db == 120.0
    assert settings.window_min_len == 4001
    assert settings.atom_budget == 2**22


def test_from_dict_coerces_types(caplog):
    with caplog.at_level(logging.WARNING, logger="isotorus.config"):
        settings = Settings.from_dict({"quad_nodes": "512", "tol": 1e-10, "colour": "blue"})
    assert settings.quad_nodes == 512
    assert settings.tol == 1e-10
    assert "Ignoring unknown config key 'colour'" in caplog.text


def test_from_dict_rejects_bad_values():
    with pytest.raises(IsotorusValidationError, match="expects int"):
        Settings.from_dict({"quad_nodes": "many"})
    with pytest.raises(IsotorusValidationError, match="JSON object"):
        Settings.from_dict([1, 2])


def test_write_and_load(tmp_path):
    path = Settings(lag_count=5).write(str(tmp_path / "sub" / "config.json"))
    with open(path) as f:
        assert json.load(f)["lag_count"] == 5
    assert Settings.load(path).lag_count == 5


def test_load_explicit_path_errors(tmp_path):
    with pytest.raises(IsotorusValidationError, match="not found"):
        Settings.load(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(IsotorusValidationError, match="Error parsing"):
        Settings.load(str(bad))


def test_broken_default_file_falls_back(tmp_path, monkeypatch, caplog):
    default = tmp_path / "config.json"
    default.write_text("not json")
    monkeypatch.setattr(config, "DEFAULT_CONFIG_FILE", str(default))
    with caplog.at_level(logging.WARNING, logger="isotorus.config"):
        assert Settings.load() == Settings()
    assert "Error loading config file" in caplog.text
