"""Pipeline tunables with JSON loading; command-line flags override file values."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .dmp import DEFAULT_DT, DEFAULT_K, DEFAULT_ALPHA, DEFAULT_N_BASIS, HyperGrid
from .dtw import DEFAULT_RADIUS
from .segmentation import DEFAULT_EPS_RATE, DEFAULT_MIN_SPLIT, SegmentationConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    epsilon: float = DEFAULT_EPS_RATE
    epsilon_mode: str = "rate"
    min_split: int = DEFAULT_MIN_SPLIT
    grid_n_basis: tuple[int, ...] = DEFAULT_N_BASIS
    grid_alpha: tuple[float, ...] = DEFAULT_ALPHA
    spring_k: float = DEFAULT_K
    dt: float = DEFAULT_DT
    dtw_radius: int = DEFAULT_RADIUS
    merge_threshold: float | None = None
    max_pruning_level: int = 3
    agreement_threshold: float = 1.0
    dont_cares: bool = False
    tie_break: str = "declared"
    steps_per_tick: int = 1

    def __post_init__(self):
        object.__setattr__(self, "grid_n_basis", tuple(int(n) for n in self.grid_n_basis))
        object.__setattr__(self, "grid_alpha", tuple(float(a) for a in self.grid_alpha))
        if not self.grid_n_basis or not self.grid_alpha:
            raise ConfigError("grid ranges must be non-empty")
        if self.max_pruning_level < 0:
            raise ConfigError("max_pruning_level must be >= 0")
        if self.steps_per_tick < 1:
            raise ConfigError("steps_per_tick must be >= 1")
        if self.merge_threshold is not None and self.merge_threshold < 0:
            raise ConfigError("merge_threshold must be >= 0")
        try:
            self.segmentation()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def grid(self) -> HyperGrid:
        return HyperGrid(self.grid_n_basis, self.grid_alpha, self.spring_k)

    def segmentation(self) -> SegmentationConfig:
        return SegmentationConfig(self.epsilon, self.min_split, self.grid, self.dtw_radius, self.epsilon_mode, self.dt)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["grid_n_basis"] = list(self.grid_n_basis)
        doc["grid_alpha"] = list(self.grid_alpha)
        return doc

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "PipelineConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_json(doc)

    def override(self, **changes) -> "PipelineConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes) if changes else self
