import json
from pathlib import Path

import pytest

from config import HldsConfig, PipelineConfig, config_hash, load_pipeline_config
from errors import MissingArtifactError, SchemaError

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "default.json"


@pytest.fixture(autouse=True)
def _no_env_config(monkeypatch):
    monkeypatch.delenv("NOTEFLOW_CONFIG", raising=False)


def test_default_file_matches_built_in_defaults():
    assert config_hash(load_pipeline_config(DEFAULT_CONFIG)) == config_hash(PipelineConfig())


def test_no_path_gives_defaults():
    config = load_pipeline_config()
    assert config.hlds.layer_dims == [96, 24, 12]
    assert config.mddkm.reg_mode == "nugget"
    assert config.decision.min_note_len == 35 and config.decision.dominance_len == 60
    assert config.corpus.training_classes == ["A", "B", "C"]
    assert config.seeds == list(range(1, 51))


def test_derived_noise_scales():
    hlds = HldsConfig()
    assert hlds.hop == 48
    assert hlds.layer_innovations == pytest.approx([0.096, 0.024, 0.012])
    assert hlds.observation_variance == pytest.approx(0.096)


def test_hash_ignores_output_dir_only():
    assert config_hash(PipelineConfig(output_dir="a")) == config_hash(PipelineConfig(output_dir="b"))
    assert config_hash(PipelineConfig(seed=2)) != config_hash(PipelineConfig())


def test_overrides_apply(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 4}))
    config = load_pipeline_config(path, seed=9, output_dir=str(tmp_path))
    assert config.seed == 9
    assert config.output_dir == str(tmp_path)


def test_env_config_path(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"instances_per_class": 3}))
    monkeypatch.setenv("NOTEFLOW_CONFIG", str(path))
    assert load_pipeline_config().instances_per_class == 3


@pytest.mark.parametrize(
    "body",
    [
        {"bogus": 1},
        {"hlds": {"layer_dims": [96, 25, 12]}},
        {"decision": {"min_note_len": 70, "dominance_len": 60}},
        {"corpus": {"training_classes": ["Z"]}},
        {"mddkm": {"reg_mode": "ridge"}},
    ],
)
def test_invalid_configs_raise_schema_error(tmp_path, body):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(body))
    with pytest.raises(SchemaError):
        load_pipeline_config(path)


def test_unreadable_config(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_pipeline_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(SchemaError):
        load_pipeline_config(broken)
