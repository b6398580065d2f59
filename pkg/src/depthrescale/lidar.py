"""Low-resolution LiDAR simulated from dense ground-truth depth.

A B-beam scanner is mimicked by keeping B evenly spaced image rows of the
ground truth. Row ``i`` is ``floor((i + 0.5) * H / B)``, so a single beam scans
the middle row. The row set for B beams is not, in general, a subset of the
set for 2B beams.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MapKind, PointSource, RasterMap, ReferencePoint
from .exceptions import InvalidConfig, NoValidPoints


@dataclass(frozen=True)
class BeamConfig:
    n_beams: int = 16
    max_points_per_row: int | None = None
    depth_range: tuple[float, float] = (1e-3, 80.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_beams < 1:
            raise InvalidConfig("n_beams must be >= 1")
        if self.max_points_per_row is not None and self.max_points_per_row < 1:
            raise InvalidConfig("max_points_per_row must be >= 1 when set")
        lo, hi = self.depth_range
        if not lo < hi:
            raise InvalidConfig(f"invalid depth range {self.depth_range}")


def beam_rows(height: int, n_beams: int) -> np.ndarray:
    if not 1 <= n_beams <= height:
        raise InvalidConfig(f"n_beams={n_beams} must lie in [1, {height}]")
    i = np.arange(n_beams)
    # floor((i + 0.5) * H / B) in exact integer arithmetic
    return ((2 * i + 1) * height) // (2 * n_beams)


def simulate_beams(gt: RasterMap, cfg: BeamConfig) -> list[ReferencePoint]:
    if gt.kind is not MapKind.METRIC_DEPTH:
        raise InvalidConfig(f"expected a metric depth map, got {gt.kind.value}")
    rows = beam_rows(gt.height, cfg.n_beams)
    lo, hi = cfg.depth_range
    rng = np.random.default_rng(cfg.seed)
    refs = []
    for r in rows:
        depth = gt.values[r]
        cols = np.flatnonzero(gt.valid[r] & (depth >= lo) & (depth <= hi))
        if cfg.max_points_per_row is not None and cols.size > cfg.max_points_per_row:
            cols = np.sort(rng.choice(cols, size=cfg.max_points_per_row, replace=False))
        refs.extend(
            ReferencePoint(float(c), float(r), float(depth[c]), PointSource.LIDAR_SIM)
            for c in cols
        )
    if not refs:
        raise NoValidPoints(f"no valid ground-truth pixel on the {rows.size} selected rows")
    return refs
