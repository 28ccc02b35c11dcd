"""Project configuration: loss weights, training schedule, file locations.

Configs are JSON. Parsing validates types and ranges and rejects unknown
keys; serialization emits a normalized form so parse/serialize round-trips
are stable.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


@dataclass
class LossWeights:
    lambda_l1: float = 0.8
    lambda_lpips: float = 0.1  # hook disabled by default; weight kept for fidelity
    lambda_xyz: float = 0.01
    lambda_scale: float = 1.0
    eps_xyz: float = 2.0
    eps_scale: float = 0.6

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"loss weight {f.name} must be >= 0")
        if not 0.0 <= self.lambda_l1 <= 1.0:
            raise ConfigError("lambda_l1 must lie in [0, 1]")


@dataclass
class TrainConfig:
    stage1_iters: int = 60000
    stage2_iters: int = 60000
    lr_stage1: float = 1e-4
    lr_stage2: float = 1e-5
    densify_interval: int = 500
    prune_opacity: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    base_model: str = "map"  # "map" or "mlp"
    hidden: int = 64
    geo_grid: int = 16

    def validate(self) -> None:
        if self.stage1_iters <= 0 or self.stage2_iters <= 0:
            raise ConfigError("iteration counts must be positive")
        if self.lr_stage1 <= 0 or self.lr_stage2 <= 0:
            raise ConfigError("learning rates must be positive")
        if self.base_model not in ("map", "mlp"):
            raise ConfigError(f"unknown base_model '{self.base_model}'")


@dataclass
class ProjectConfig:
    scene: str = ""
    out_dir: str = "out"
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    uv_size: int = 128
    image_width: int = 64
    image_height: int = 64
    background: tuple = (0.0, 0.0, 0.0)

    def validate(self) -> None:
        self.train.validate()
        self.loss.validate()
        if self.uv_size < 2:
            raise ConfigError("uv_size must be >= 2")
        if len(self.background) != 3:
            raise ConfigError("background must have 3 channels")


def _from_dict(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    return data


def parse_config(text: str) -> ProjectConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}") from e
    _from_dict(ProjectConfig, raw)
    train = TrainConfig(**_from_dict(TrainConfig, raw.get("train", {})))
    loss = LossWeights(**_from_dict(LossWeights, raw.get("loss", {})))
    cfg = ProjectConfig(
        scene=raw.get("scene", ""),
        out_dir=raw.get("out_dir", "out"),
        train=train,
        loss=loss,
        uv_size=int(raw.get("uv_size", 128)),
        image_width=int(raw.get("image_width", 64)),
        image_height=int(raw.get("image_height", 64)),
        background=tuple(raw.get("background", (0.0, 0.0, 0.0))),
    )
    cfg.validate()
    return cfg


def serialize_config(cfg: ProjectConfig) -> str:
    d = dataclasses.asdict(cfg)
    d["background"] = list(cfg.background)
    return json.dumps(d, indent=2, sort_keys=True)


def load_config(path) -> ProjectConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
