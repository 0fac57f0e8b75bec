"""Tests for config parsing, validation and hashing"""

import pytest

from config import PipelineConfig, config_from_dict, dump_config, load_config
from errors import ConfigError


def test_defaults():
    config = load_config()
    assert config.extract.voxel_size == 0.05
    assert config.extract.stride == 1
    assert config.annotate.min_tolerance == 0.1
    assert config.prompt.mode == "full"


def test_partial_file_keeps_other_defaults(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("version: 1\nextract:\n  voxel_size: 0.1\nprompt:\n  mode: no-annotation\n", encoding="utf-8")
    config = load_config(str(path))
    assert config.extract.voxel_size == 0.1
    assert config.extract.min_points_per_voxel == 3
    assert config.prompt.mode == "no-annotation"


def test_integers_promote_to_floats():
    assert config_from_dict({"version": 1, "extract": {"voxel_size": 1}}).extract.voxel_size == 1.0


@pytest.mark.parametrize("raw, key", [
    ({"version": 1, "extract": {"voxel": 0.1}}, "extract.voxel"),
    ({"version": 1, "extract": {"voxel_size": 0}}, "extract.voxel_size"),
    ({"version": 1, "extract": {"stride": "2"}}, "extract.stride"),
    ({"version": 1, "prompt": {"mode": "verbose"}}, "prompt.mode"),
    ({"version": 1, "annotate": {"marker_color": [0, 0, 300]}}, "annotate.marker_color"),
    ({"version": 1, "query": {"max_attempts": 0}}, "query.max_attempts"),
    ({"version": 1, "prompt": {"include_polygon": 1}}, "prompt.include_polygon"),
    ({"version": 2}, "version"),
    ({}, "version"),
])
def test_rejected_values_name_their_key(raw, key):
    with pytest.raises(ConfigError, match=key):
        config_from_dict(raw)


def test_missing_and_invalid_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.yaml"))
    broken = tmp_path / "broken.yaml"
    broken.write_text("version: [1\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(broken))


def test_hash_follows_content(tmp_path):
    config = PipelineConfig()
    assert config.config_hash() == PipelineConfig().config_hash()
    path = tmp_path / "dumped.yaml"
    dump_config(config, str(path))
    assert load_config(str(path)).config_hash() == config.config_hash()
    config.annotate.marker_radius = 7
    assert config.config_hash() != PipelineConfig().config_hash()
