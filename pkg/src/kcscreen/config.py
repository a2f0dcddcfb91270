"""Pipeline configuration: every tunable constant in one validated document."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class PipelineConfig:
    # segmentation
    max_depth: int = 8
    min_leaf: int = 16
    pixels_per_scene: int = 20_000
    heldout_fraction: float = 7 / 25
    # morphology / geometry
    se_size: int = 5
    fill_ratio_min: float = 0.7
    speck_fraction: float = 0.001
    crop_margin: int = 2
    # rays
    angle_min: float = 45.0
    angle_max: float = 135.0
    angle_step: float = 1.0
    ray_step: float = 0.5
    edge_sigma: float = 1.0
    min_band: float = 2.0
    ring_count: int = 8
    # stage 1
    kmeans_n_init: int = 10
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6
    # stage 2
    logistic_l2: float = 1e-4
    logistic_max_iter: int = 100
    logistic_tol: float = 1e-8
    cell_train_fraction: float = 0.7
    colormap_percentiles: tuple[float, float] = (1.0, 99.0)
    heatmap_size: int = 512
    # run control
    seed: int = 1
    workers: int = 1

    def __post_init__(self):
        self.validate()

    @property
    def angles(self) -> np.ndarray:
        n = int(round((self.angle_max - self.angle_min) / self.angle_step)) + 1
        return self.angle_min + self.angle_step * np.arange(n)

    @property
    def n_gaps(self) -> int:
        return self.ring_count - 2

    def validate(self) -> None:
        checks = [
            (self.max_depth >= 0, "max_depth must be >= 0"),
            (self.min_leaf >= 1, "min_leaf must be >= 1"),
            (self.pixels_per_scene >= 2, "pixels_per_scene must be >= 2"),
            (0.0 < self.heldout_fraction < 1.0, "heldout_fraction must lie in (0, 1)"),
            (self.se_size >= 1 and self.se_size % 2 == 1, "se_size must be odd and >= 1"),
            (0.0 < self.fill_ratio_min <= 1.0, "fill_ratio_min must lie in (0, 1]"),
            (0.0 <= self.speck_fraction < 1.0, "speck_fraction must lie in [0, 1)"),
            (self.crop_margin >= 0, "crop_margin must be >= 0"),
            (0.0 <= self.angle_min < self.angle_max <= 180.0, "need 0 <= angle_min < angle_max <= 180"),
            (self.angle_step > 0, "angle_step must be positive"),
            (self.ray_step > 0, "ray_step must be positive"),
            (self.edge_sigma >= 0, "edge_sigma must be >= 0"),
            (self.min_band >= 0, "min_band must be >= 0"),
            (self.ring_count >= 3, "ring_count must be >= 3 (two bands beyond the disc)"),
            (self.kmeans_n_init >= 1, "kmeans_n_init must be >= 1"),
            (self.kmeans_max_iter >= 1, "kmeans_max_iter must be >= 1"),
            (self.kmeans_tol > 0, "kmeans_tol must be positive"),
            (self.logistic_l2 >= 0, "logistic_l2 must be >= 0"),
            (self.logistic_max_iter >= 1, "logistic_max_iter must be >= 1"),
            (self.logistic_tol > 0, "logistic_tol must be positive"),
            (0.0 < self.cell_train_fraction < 1.0, "cell_train_fraction must lie in (0, 1)"),
            (len(self.colormap_percentiles) == 2
             and 0 <= self.colormap_percentiles[0] < self.colormap_percentiles[1] <= 100,
             "colormap_percentiles must be an increasing pair in [0, 100]"),
            (self.heatmap_size >= 16, "heatmap_size must be >= 16"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["colormap_percentiles"] = list(self.colormap_percentiles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "colormap_percentiles" in d:
            d["colormap_percentiles"] = tuple(d["colormap_percentiles"])
        return cls(**d)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def default_seed() -> int:
    """Seed from ``KC_SEED`` when set, else the config default."""
    env = os.environ.get("KC_SEED")
    return int(env) if env else PipelineConfig.seed


def load_config(path=None, **overrides) -> PipelineConfig:
    """Packaged defaults, updated by a JSON file, updated by ``overrides``."""
    base = json.loads(resources.files("kcscreen").joinpath("default_config.json").read_text())
    if path is not None:
        base.update(json.loads(Path(path).read_text()))
    if os.environ.get("KC_SEED") and overrides.get("seed") is None:
        base["seed"] = int(os.environ["KC_SEED"])
    base.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig.from_dict(base)
