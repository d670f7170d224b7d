"""Pipeline configuration; every default is the published hyperparameter."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields

import yaml

CONFIG_ENV = "RADARDEPTH_CONFIG"


@dataclass
class Config:
    # radar filtering
    beta: float = 2.0
    window_h: int = 320
    window_w: int = 8
    window_stride: int = 3
    # accumulation windows (sweeps before/after the target sweep)
    train_sweeps_past: int = 3
    train_sweeps_future: int = 3
    input_sweeps_past: int = 3
    # expansion
    sigma_r: float = 1e-5
    sigma_scale: float = 1.5
    gamma: float = 0.5
    box_classes: list | None = None
    # losses
    alpha: float = 0.85
    lambda_smooth: float = 1e-3
    lambda_velocity: float = 0.02
    lambda_radar: float = 0.2
    radar_normalize: str = "masked"
    # evaluation
    max_depth: float = 80.0
    min_depth: float = 0.1
    median_scaling: bool = False
    pooled: bool = True

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if self.radar_normalize not in ("masked", "all"):
            raise ValueError("radar_normalize must be 'masked' or 'all'")
        if min(self.window_h, self.window_w, self.window_stride) <= 0:
            raise ValueError("window sizes and stride must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def updated(self, **kw) -> "Config":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return Config(**d)


def parse_override(item: str) -> tuple[str, object]:
    """``key=value`` with the value parsed as YAML."""
    if "=" not in item:
        raise ValueError(f"override {item!r} is not key=value")
    k, v = item.split("=", 1)
    return k.strip(), yaml.safe_load(v)


def load_config(path: str | None = None, overrides=()) -> Config:
    """Read a YAML config (or ``$RADARDEPTH_CONFIG``) and apply overrides."""
    path = path or os.environ.get(CONFIG_ENV)
    data = {}
    if path:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ValueError(f"config {path} must be a mapping")
    for item in overrides:
        k, v = parse_override(item)
        data[k] = v
    known = {f.name for f in fields(Config)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return Config(**data)
