import json

import pytest
from pydantic import ValidationError

from src.config import MODES, apply_overrides, load_config, parse_bool
from src.schemas import CliConfig


@pytest.mark.parametrize("text,expected", [("true", True), (" Yes ", True), ("1", True), ("off", False), ("FALSE", False)])
def test_parse_bool(text, expected):
    assert parse_bool(text) is expected


def test_parse_bool_rejects_other_words():
    with pytest.raises(ValueError):
        parse_bool("maybe")


def test_default_config_without_path():
    assert load_config(None) == CliConfig()
    assert load_config("") == CliConfig()


def test_load_config_from_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"dataset": {"count": 3, "seed": 9}, "pipeline": {"stages": "bf"}}), encoding="utf-8")
    cfg = load_config(str(path))
    assert (cfg.dataset.count, cfg.dataset.seed, cfg.pipeline.stages) == (3, 9, "bf")


def test_unknown_keys_are_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"pipeline": {"beam_width": 3}}), encoding="utf-8")
    with pytest.raises(ValidationError):
        load_config(str(path))


def test_missing_config_file_is_an_os_error(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(str(tmp_path / "nope.json"))


@pytest.mark.parametrize("mode", sorted(MODES))
def test_every_mode_yields_a_valid_pipeline(mode):
    cfg = apply_overrides(CliConfig(), mode=mode)
    stages, run_mode, iva_mode = MODES[mode]
    assert (cfg.pipeline.stages, cfg.pipeline.mode) == (stages, run_mode)
    if iva_mode is not None:
        assert cfg.pipeline.iva_mode == iva_mode


def test_overrides_touch_only_given_fields():
    base = CliConfig()
    cfg = apply_overrides(base, seed=5, variant="L", causal=False, weights="w.dsepw", encoder_mode="spectral_only")
    assert cfg.dataset.seed == cfg.bench.seed == 5
    assert cfg.pipeline.model.variant == "L"
    assert cfg.pipeline.model.causal is False
    assert cfg.pipeline.model.encoder_mode == "spectral_only"
    assert cfg.pipeline.weights_path == "w.dsepw"
    assert cfg.eval == base.eval
    assert apply_overrides(base) == base


def test_streaming_with_noncausal_model_is_invalid():
    with pytest.raises(ValidationError):
        apply_overrides(CliConfig(), mode="streaming", causal=False)


def test_unknown_mode_is_rejected():
    with pytest.raises(ValueError):
        apply_overrides(CliConfig(), mode="turbo")
