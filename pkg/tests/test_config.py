"""Config parsing, validation, and round-trip stability."""

import pytest

from uvsplat.config import (
    ConfigError,
    ProjectConfig,
    parse_config,
    serialize_config,
)


def test_defaults():
    cfg = ProjectConfig()
    assert cfg.loss.lambda_l1 == 0.8
    assert cfg.loss.lambda_xyz == 0.01
    assert cfg.loss.lambda_scale == 1.0
    assert cfg.loss.eps_xyz == 2.0
    assert cfg.loss.eps_scale == 0.6
    assert cfg.train.stage1_iters == 60000
    assert cfg.train.stage2_iters == 60000
    assert cfg.train.lr_stage1 == 1e-4
    assert cfg.train.lr_stage2 == 1e-5
    assert cfg.train.densify_interval == 500
    assert cfg.train.prune_opacity == 0.05
    assert cfg.uv_size == 128
    cfg.validate()


def test_parse_round_trip():
    cfg = parse_config('{"scene": "s", "train": {"stage1_iters": 10}}')
    assert cfg.scene == "s"
    assert cfg.train.stage1_iters == 10
    text = serialize_config(cfg)
    cfg2 = parse_config(text)
    assert serialize_config(cfg2) == text


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        parse_config('{"scenes": "typo"}')
    with pytest.raises(ConfigError):
        parse_config('{"train": {"stage3_iters": 5}}')


def test_invalid_json_rejected():
    with pytest.raises(ConfigError):
        parse_config("{not json")


def test_range_validation():
    with pytest.raises(ConfigError):
        parse_config('{"train": {"stage1_iters": 0}}')
    with pytest.raises(ConfigError):
        parse_config('{"train": {"lr_stage1": -1.0}}')
    with pytest.raises(ConfigError):
        parse_config('{"loss": {"lambda_l1": 1.5}}')
    with pytest.raises(ConfigError):
        parse_config('{"train": {"base_model": "cnn"}}')
    with pytest.raises(ConfigError):
        parse_config('{"uv_size": 1}')
