"""Per-record orchestration: reference-point providers and the rescale step.

Each record runs sequentially; parallelism happens across records only, with
results collected in manifest order so outputs never depend on ``jobs``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import io
from .core import MapKind, RigidPose, compose_pose, invert_pose
from .exceptions import GateRejected, InvalidConfig
from .lidar import BeamConfig, simulate_beams
from .rescale import OUTDOOR_CAP, RansacConfig
from .sfm import GateConfig, TriangulationConfig, detect_and_match, gate_pair, sfm_refpoints, triangulate
from .stereo import SgmConfig, StereoRig, compute_disparity, stereo_refpoints

log = logging.getLogger("depthrescale")

PROVIDERS = ("lidar", "stereo", "sfm", "external")


@dataclass(frozen=True)
class ProviderSpec:
    name: str
    beams: int = 16

    @classmethod
    def parse(cls, text: str, beams: int | None = None) -> ProviderSpec:
        """``"lidar:16"``, ``"lidar"`` (beams from the argument), ``"stereo"``, ..."""
        name, _, arg = text.partition(":")
        if name not in PROVIDERS:
            raise InvalidConfig(f"unknown provider {name!r}; choose from {', '.join(PROVIDERS)}")
        if arg:
            if name != "lidar":
                raise InvalidConfig(f"provider {name!r} takes no argument")
            beams = int(arg)
        return cls(name, beams if beams is not None else 16)

    def __str__(self):
        return f"lidar:{self.beams}" if self.name == "lidar" else self.name


@dataclass(frozen=True)
class RunSettings:
    provider: ProviderSpec
    ransac: RansacConfig = field(default_factory=RansacConfig)
    depth_cap: tuple[float, float] = OUTDOOR_CAP
    sgm: SgmConfig = field(default_factory=SgmConfig)
    stereo_stride: int = 4
    gate: GateConfig = field(default_factory=GateConfig)
    triangulation: TriangulationConfig = field(default_factory=TriangulationConfig)
    seed: int = 0


def record_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def relative_pose(poses: list[RigidPose]) -> RigidPose:
    """A single pose is taken as the A->B transform itself; two poses are
    camera-to-world poses of frame A (previous) then frame B (target)."""
    if len(poses) == 1:
        return poses[0]
    if len(poses) == 2:
        return compose_pose(invert_pose(poses[1]), poses[0])
    raise InvalidConfig(f"pose file must hold 1 or 2 poses, got {len(poses)}")


def reference_points(rec: io.ManifestRecord, settings: RunSettings, index: int = 0):
    """Reference points for one record from the configured provider."""
    p = settings.provider
    if p.name == "lidar":
        gt = io.load_raster(rec.gt_depth, MapKind.METRIC_DEPTH)
        cfg = BeamConfig(
            n_beams=p.beams,
            depth_range=(1e-3, settings.depth_cap[1]),
            seed=record_seed(settings.seed, index),
        )
        return simulate_beams(gt, cfg)
    if p.name == "stereo":
        disp = stereo_disparity(rec, settings)
        rig = StereoRig(rec.intrinsics, rec.baseline_m)
        return stereo_refpoints(disp, rig, settings.stereo_stride, settings.sgm.min_disparity_px)
    if p.name == "sfm":
        rel = relative_pose(io.load_poses(rec.pose))
        if not gate_pair(rel, settings.gate):
            raise GateRejected(f"[{rec.name}] relative motion below the {settings.gate.gate_mode.value} gate")
        if rec.matches is not None:
            matches = io.load_matches(rec.matches)
        else:
            matches = detect_and_match(io.load_image(rec.prev_image), io.load_image(rec.left_image))
        points = triangulate(matches, rec.intrinsics, rel, settings.triangulation)
        return sfm_refpoints(points, rec.intrinsics)
    return io.load_refpoints(rec.refpoints)


def stereo_disparity(rec: io.ManifestRecord, settings: RunSettings):
    left = io.load_image(rec.left_image)
    right = io.load_image(rec.right_image)
    return compute_disparity(left, right, settings.sgm)


def run_records(fn, records, jobs: int = 1):
    """Apply ``fn(index, record)`` to every record, isolating failures.

    Returns a list of ``(record, result, error)`` in input order.
    """
    def guarded(item):
        i, rec = item
        try:
            return rec, fn(i, rec), None
        except Exception as exc:  # one bad record must not abort the rest
            log.warning("record %s failed: %s", rec.name, exc)
            return rec, None, exc

    items = list(enumerate(records))
    if jobs <= 1:
        return [guarded(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(guarded, items))
