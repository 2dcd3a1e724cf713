"""YAML configuration: one file, one section per component.

Angles are written in degrees (``angle_range_deg``) and converted on load.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from .decode import HeatmapSpec, OracleNoise
from .losses import LossConfig
from .metrics import MatchConfig
from .simulator import PRESETS, PsfParams, SimConfig
from .tracker import TrackerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DecodeConfig:
    heatmap: HeatmapSpec = field(default_factory=HeatmapSpec)
    gate: float = 1.0
    norm: str = "l1"
    method: str = "greedy"
    embedding_dim: int = 4

    def __post_init__(self):
        if not self.gate > 0:
            raise ValueError("gate must be > 0")
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.method not in ("greedy", "optimal"):
            raise ValueError(f"unknown pairing method {self.method!r}")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")


@dataclass(frozen=True)
class SplitSpec:
    preset: str
    count: int


# 16,040 source images plus two held-out sets of 1,000 give 18,040 videos
DEFAULT_RECIPE = {
    "train": SplitSpec("train", 16040),
    "test": SplitSpec("debris", 1000),
    "test_dense": SplitSpec("dense", 1000),
}


@dataclass(frozen=True)
class AppConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    sim_overrides: dict = field(default_factory=dict)  # explicit sim keys, re-applied over presets
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    oracle: OracleNoise = field(default_factory=OracleNoise)
    recipe: dict = field(default_factory=lambda: dict(DEFAULT_RECIPE))

    def sim_for(self, preset_name: Optional[str], **extra) -> SimConfig:
        """Simulation config for a preset, with file-level keys and ``extra`` layered on top."""
        base = SimConfig(**PRESETS[preset_name]) if preset_name else SimConfig()
        try:
            return replace(base, **{**self.sim_overrides, **extra})
        except ValueError as exc:
            raise ConfigError(f"sim: {exc}") from None


def _build(cls, data: dict, section: str, convert=None):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    kwargs = dict(data)
    if convert:
        kwargs = convert(kwargs)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def sim_kwargs(data: dict) -> dict:
    """Translate the ``sim`` section to :class:`SimConfig` keyword arguments."""
    data = dict(data or {})
    data.pop("preset", None)
    if "angle_range" in data:
        raise ConfigError("sim.angle_range: give angles in degrees as angle_range_deg")
    if "angle_range_deg" in data:
        lo, hi = data.pop("angle_range_deg")
        data["angle_range"] = (math.radians(lo), math.radians(hi))
    if "psf" in data and data["psf"] is not None:
        psf = data["psf"]
        if not isinstance(psf, dict) or set(psf) - {"scale", "sigma"}:
            raise ConfigError("sim.psf: expected {scale, sigma} or null")
        try:
            data["psf"] = PsfParams(**psf)
        except ValueError as exc:
            raise ConfigError(f"sim.psf: {exc}") from None
    names = {f.name for f in fields(SimConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"sim: unknown keys {sorted(unknown)}")
    return _tuples(data)


def from_dict(raw: dict) -> AppConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - {"sim", "tracker", "match", "loss", "decode", "oracle", "recipe"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")

    sim_raw = raw.get("sim") or {}
    overrides = sim_kwargs(sim_raw)
    preset_name = sim_raw.get("preset")
    if preset_name is not None and preset_name not in PRESETS:
        raise ConfigError(f"sim.preset: unknown preset {preset_name!r}")
    try:
        sim = replace(SimConfig(**PRESETS[preset_name]) if preset_name else SimConfig(), **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sim: {exc}") from None

    def decode_convert(d):
        hm = d.pop("heatmap", None)
        d["heatmap"] = _build(HeatmapSpec, hm, "decode.heatmap")
        return d

    recipe = dict(DEFAULT_RECIPE)
    if raw.get("recipe") is not None:
        splits = raw["recipe"]
        if not isinstance(splits, dict):
            raise ConfigError("recipe: expected a mapping of split name to {preset, count}")
        recipe = {}
        for name, spec in splits.items():
            s = _build(SplitSpec, spec, f"recipe.{name}")
            if s.preset not in PRESETS:
                raise ConfigError(f"recipe.{name}.preset: unknown preset {s.preset!r}")
            if not isinstance(s.count, int) or s.count < 0:
                raise ConfigError(f"recipe.{name}.count: must be a non-negative integer")
            recipe[name] = s

    return AppConfig(
        sim=sim,
        sim_overrides=overrides,
        tracker=_build(TrackerConfig, raw.get("tracker"), "tracker"),
        match=_build(MatchConfig, raw.get("match"), "match", _tuples),
        loss=_build(LossConfig, raw.get("loss"), "loss"),
        decode=_build(DecodeConfig, raw.get("decode"), "decode", decode_convert),
        oracle=_build(OracleNoise, raw.get("oracle"), "oracle"),
        recipe=recipe,
    )


def load_config(path) -> AppConfig:
    if path is None:
        return AppConfig()
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    return from_dict(raw)
