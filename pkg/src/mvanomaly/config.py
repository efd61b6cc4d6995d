"""Flat key=value pipeline configuration with typed flag overrides."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

from . import geometry
from .datagen import ANOMALY_KINDS, SynthSpec
from .pipeline import LossSettings
from .prompts import PromptConfig
from .training import TrainConfig


@dataclass(frozen=True)
class PipelineConfig:
    x_angles: tuple = geometry.DEFAULT_X_ANGLES
    y_angles: tuple = geometry.DEFAULT_Y_ANGLES
    resolution: int = 64
    tau: float = 0.07
    eta: float = 0.8
    sigma: float = 4.0
    margin: float = 1.0
    gamma: float = 2.0
    alpha: float = 0.25
    dice_eps: float = 1.0
    lam1: float = 1.0
    lam2: float = 1.0
    lam3: float = 0.8
    anchor: str = "point"
    token_dim: int = 64
    embed_dim: int = 64
    length_normal: int = 14
    length_anomaly: int = 14
    position: str = "[P/R][N/A][object]"
    deep_length: int = 4
    deep_depth: int = 9
    n_layers: int = 12
    epochs: int = 15
    lr: float = 0.001
    optimizer: str = "adam"
    seed: int = 42
    bank_seed: int = 0
    encoder_seed: int = 0
    feature_seed: int = 7
    n_normal: int = 40
    n_anomalous: int = 40
    grid: int = 64
    patch: int = 8
    kinds: tuple = ANOMALY_KINDS
    area_min: float = 0.005
    area_max: float = 0.05
    border: int = 2

    def __post_init__(self):
        if not self.x_angles and not self.y_angles:
            raise ValueError("need at least one view angle")
        for a in (*self.x_angles, *self.y_angles):
            if not math.isfinite(a):
                raise ValueError(f"view angle must be finite, got {a}")
        if self.resolution < 8:
            raise ValueError("resolution must be >= 8")
        # remaining numeric ranges are enforced by the owning configs below
        self.synth_spec()
        self.prompt_config()
        self.loss_settings()
        self.train_config()

    def view_set(self) -> list:
        return geometry.make_view_set(self.x_angles, self.y_angles)

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(
            seed=self.seed,
            n_normal=self.n_normal,
            n_anomalous=self.n_anomalous,
            grid=self.grid,
            kinds=self.kinds,
            area_min=self.area_min,
            area_max=self.area_max,
            patch=self.patch,
            embed_dim=self.embed_dim,
            border=self.border,
            feature_seed=self.feature_seed,
        )

    def prompt_config(self) -> PromptConfig:
        return PromptConfig(
            token_dim=self.token_dim,
            embed_dim=self.embed_dim,
            length_normal=self.length_normal,
            length_anomaly=self.length_anomaly,
            position=self.position,
            deep_length=self.deep_length,
            deep_depth=self.deep_depth,
            n_layers=self.n_layers,
        )

    def loss_settings(self) -> LossSettings:
        return LossSettings(
            tau=self.tau,
            margin=self.margin,
            gamma=self.gamma,
            alpha=self.alpha,
            eps=self.dice_eps,
            lam1=self.lam1,
            lam2=self.lam2,
            lam3=self.lam3,
            anchor=self.anchor,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            optimizer=self.optimizer,
            seed=self.bank_seed,
            settings=self.loss_settings(),
        )


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _parse_value(name: str, raw: str):
    field = _FIELDS[name]
    raw = raw.strip()
    if field.type == "tuple":
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if name == "kinds":
            return tuple(parts)
        return tuple(float(p) for p in parts)
    if field.type == "int":
        return int(raw)
    if field.type == "float":
        return float(raw)
    return raw


def parse_overrides(pairs: dict) -> dict:
    """key -> raw string, validated and converted to typed values."""
    out = {}
    for name, raw in pairs.items():
        if name not in _FIELDS:
            raise ValueError(f"unknown config key {name!r}")
        out[name] = _parse_value(name, raw)
    return out


def parse_config_text(text: str) -> dict:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        pairs[key.strip()] = value
    return parse_overrides(pairs)


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then config file keys, then explicit overrides."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    values.update(overrides or {})
    return PipelineConfig(**values)


def parse_views(spec: str) -> dict:
    """Angle grammar 'x=a,b,c;y=d,e' (radians) -> config override pairs."""
    out = {}
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        axis, sep, angles = part.partition("=")
        axis = axis.strip().lower()
        if not sep or axis not in ("x", "y"):
            raise ValueError(f"bad view group {part!r}, expected x=... or y=...")
        out[f"{axis}_angles"] = tuple(
            float(a) for a in angles.split(",") if a.strip()
        )
    if not out:
        raise ValueError("empty view specification")
    return out
