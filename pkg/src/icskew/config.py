"""Pipeline configuration: JSON file <-> nested dataclasses, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ValidationError
from .fibermodel import RandomWalkParams
from .scanmodel import LaserSourceParams, SpdcSourceParams
from .skew import CONVENTIONS, HALF


@dataclass(frozen=True)
class WalkFiberConfig:
    length_m: float = 12.7
    step_length_m: float = 0.1
    step_std_ps: float = 0.2
    connector_positions_m: tuple[float, ...] = ()
    connector_offset_std_ps: float = 0.0
    trial: int = 0


@dataclass(frozen=True)
class FiberConfig:
    # absolute per-core delays relative to an arbitrary origin, ps
    core_delays_ps: tuple[float, ...] | None = (0.0, 10.25, 5.4, -9.7)
    arm_imbalance_ps: float = 18.9
    walk: WalkFiberConfig | None = None


@dataclass(frozen=True)
class ScanConfig:
    range_ps: float = 1.8
    step_ps: float = 0.05
    integration_s: float | None = None
    total_counts: float = 2.5e5
    center_jitter_ps: float = 0.2
    laser_integration_s: float = 30.0
    coarse_center_jitter_ps: float = 20.0


@dataclass(frozen=True)
class FitConfig:
    max_iter: int = 200
    subtract_accidentals: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    source: str = "spdc"
    spdc: SpdcSourceParams = field(default_factory=SpdcSourceParams)
    laser: LaserSourceParams = field(default_factory=LaserSourceParams)
    fiber: FiberConfig = field(default_factory=FiberConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    visibility_scale: float = 0.92
    per_channel_visibility: dict[str, float] = field(default_factory=dict)
    output_labels: tuple[str, ...] = ("A", "B", "C", "D")
    convention: str = HALF
    sigma_cal_ps: float = 0.15
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        if self.source not in ("spdc", "laser"):
            raise ValidationError(f"source must be 'spdc' or 'laser', got {self.source!r}")
        if self.convention not in CONVENTIONS:
            raise ValidationError(f"convention must be one of {CONVENTIONS}")
        if not 0 <= self.visibility_scale <= 1:
            raise ValidationError("visibility_scale must be in [0, 1]")
        for ch, v in self.per_channel_visibility.items():
            if not 0 <= v <= 1:
                raise ValidationError(f"per-channel visibility for {ch} must be in [0, 1]")
        if self.sigma_cal_ps < 0:
            raise ValidationError("sigma_cal_ps must be >= 0")
        f = self.fiber
        if f.walk is None and (f.core_delays_ps is None or len(f.core_delays_ps) != 4):
            raise ValidationError("fiber needs four core_delays_ps or a walk section")
        s = self.scan
        if not (s.range_ps > 0 and s.step_ps > 0 and s.step_ps < s.range_ps):
            raise ValidationError("scan range and step must be > 0 with step < range")
        if s.integration_s is not None and not s.integration_s > 0:
            raise ValidationError("integration_s must be > 0")
        if self.seed < 0:
            raise ValidationError("seed must be >= 0")

    def walk_params(self) -> RandomWalkParams:
        w = self.fiber.walk
        return RandomWalkParams(w.step_length_m, w.step_std_ps, w.connector_positions_m,
                                w.connector_offset_std_ps, self.seed)


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ValidationError(f"{where}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ValidationError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        sub = _NESTED.get((cls, name))
        if sub is not None and value is not None:
            value = _build(sub, value, f"{where}.{name}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


_NESTED = {
    (PipelineConfig, "spdc"): SpdcSourceParams,
    (PipelineConfig, "laser"): LaserSourceParams,
    (PipelineConfig, "fiber"): FiberConfig,
    (PipelineConfig, "scan"): ScanConfig,
    (PipelineConfig, "fit"): FitConfig,
    (FiberConfig, "walk"): WalkFiberConfig,
}


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data, "config")


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def save_config(cfg: PipelineConfig, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
