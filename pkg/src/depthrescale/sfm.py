"""Pose-gated two-view triangulation.

Frame A is the previous image and frame B the target image. The relative pose
``rel`` maps frame-A camera coordinates into frame-B camera coordinates,
``X_B = R @ X_A + t``; with KITTI-style camera-to-world poses this is
``inv(T_wB) @ T_wA``. Triangulated points are returned in frame B.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import (
    CameraIntrinsics,
    PointSource,
    ReferencePoint,
    RigidPose,
    project_points,
    rotation_angle_deg,
    to_gray,
    translation_norm_m,
)
from .exceptions import EmptyResult, InvalidConfig


class GateMode(str, enum.Enum):
    TRANSLATION_ONLY = "translation_only"
    TRANSLATION_OR_ROTATION = "translation_or_rotation"
    TRANSLATION_AND_ROTATION = "translation_and_rotation"


@dataclass(frozen=True)
class Correspondence:
    u1: float
    v1: float
    u2: float
    v2: float
    score: float | None = None

    def __post_init__(self):
        if not np.all(np.isfinite([self.u1, self.v1, self.u2, self.v2])):
            raise InvalidConfig("correspondence coordinates must be finite")


@dataclass(frozen=True)
class GateConfig:
    min_translation_m: float = 1.5
    rotation_threshold_deg: float = 5.0
    gate_mode: GateMode = GateMode.TRANSLATION_ONLY

    def __post_init__(self):
        if not (self.min_translation_m > 0 and self.rotation_threshold_deg > 0):
            raise InvalidConfig("gate thresholds must be positive")
        object.__setattr__(self, "gate_mode", GateMode(self.gate_mode))


KITTI_GATE = GateConfig(min_translation_m=1.5)
DDAD_GATE = GateConfig(min_translation_m=2.0)


@dataclass(frozen=True)
class TriangulationConfig:
    max_reproj_px: float = 2.0
    min_parallax_deg: float = 1.0


@dataclass(frozen=True)
class MatcherConfig:
    harris_k: float = 0.04
    max_corners: int = 500
    nms_radius: int = 5
    patch_size: int = 11
    ratio: float = 0.9
    min_response_frac: float = 0.01
    sigma: float = 1.0


def gate_pair(rel: RigidPose, cfg: GateConfig = KITTI_GATE) -> bool:
    """Decide whether the motion between two frames supports triangulation."""
    moved = translation_norm_m(rel) >= cfg.min_translation_m
    turned = rotation_angle_deg(rel) >= cfg.rotation_threshold_deg
    if cfg.gate_mode is GateMode.TRANSLATION_ONLY:
        return moved
    if cfg.gate_mode is GateMode.TRANSLATION_OR_ROTATION:
        return moved or turned
    return moved and turned


def _as_array(matches) -> np.ndarray:
    if isinstance(matches, np.ndarray):
        return np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    return np.array([(m.u1, m.v1, m.u2, m.v2) for m in matches], dtype=np.float64).reshape(-1, 4)


def _reproject(K: CameraIntrinsics, X: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.stack([K.fx * X[:, 0] / X[:, 2] + K.cx, K.fy * X[:, 1] / X[:, 2] + K.cy], axis=1)


def triangulate_dlt(matches, K: CameraIntrinsics, rel: RigidPose) -> np.ndarray:
    """Unfiltered linear triangulation; one frame-B point per match."""
    m = _as_array(matches)
    n = m.shape[0]
    # normalized image coordinates keep the 4x4 systems well conditioned
    xa = np.stack([(m[:, 0] - K.cx) / K.fx, (m[:, 1] - K.cy) / K.fy], axis=1)
    xb = np.stack([(m[:, 2] - K.cx) / K.fx, (m[:, 3] - K.cy) / K.fy], axis=1)
    Rt = rel.rotation.T
    Pa = np.hstack([Rt, (-Rt @ rel.translation)[:, None]])
    Pb = np.hstack([np.eye(3), np.zeros((3, 1))])
    A = np.empty((n, 4, 4))
    A[:, 0] = xa[:, :1] * Pa[2] - Pa[0]
    A[:, 1] = xa[:, 1:] * Pa[2] - Pa[1]
    A[:, 2] = xb[:, :1] * Pb[2] - Pb[0]
    A[:, 3] = xb[:, 1:] * Pb[2] - Pb[1]
    A /= np.linalg.norm(A, axis=2, keepdims=True)
    _, _, Vt = np.linalg.svd(A)
    Xh = Vt[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        return Xh[:, :3] / Xh[:, 3:]


def triangulate(
    matches,
    K: CameraIntrinsics,
    rel: RigidPose,
    cfg: TriangulationConfig | None = None,
    return_mask: bool = False,
):
    """Triangulate and filter by cheirality, reprojection error and parallax.

    Survivors keep input order. Raises :class:`EmptyResult` when none is left.
    """
    cfg = cfg or TriangulationConfig()
    m = _as_array(matches)
    if m.shape[0] == 0:
        raise EmptyResult("no correspondences to triangulate")
    Xb = triangulate_dlt(m, K, rel)
    Xa = (Xb - rel.translation) @ rel.rotation
    finite = np.all(np.isfinite(Xb), axis=1)
    front = finite & (Xa[:, 2] > 0) & (Xb[:, 2] > 0)
    err_a = np.linalg.norm(_reproject(K, Xa) - m[:, :2], axis=1)
    err_b = np.linalg.norm(_reproject(K, Xb) - m[:, 2:], axis=1)
    reproj_ok = (err_a <= cfg.max_reproj_px) & (err_b <= cfg.max_reproj_px)
    # rays from each camera center; center of A in frame B is t
    ray_b = Xb
    ray_a = Xb - rel.translation
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.sum(ray_a * ray_b, axis=1) / (
            np.linalg.norm(ray_a, axis=1) * np.linalg.norm(ray_b, axis=1)
        )
    parallax = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    keep = front & np.nan_to_num(reproj_ok) & (parallax >= cfg.min_parallax_deg)
    if not np.any(keep):
        raise EmptyResult(f"none of {m.shape[0]} correspondences survived triangulation filters")
    if return_mask:
        return Xb[keep], keep
    return Xb[keep]


def sfm_refpoints(points, K: CameraIntrinsics) -> list[ReferencePoint]:
    uvz = project_points(points, K)
    return [ReferencePoint(u, v, z, PointSource.SFM) for u, v, z in uvz.tolist()]


def harris_response(img, k: float = 0.04, sigma: float = 1.0) -> np.ndarray:
    img = to_gray(img)
    ix = ndimage.sobel(img, axis=1, mode="nearest")
    iy = ndimage.sobel(img, axis=0, mode="nearest")
    sxx = ndimage.gaussian_filter(ix * ix, sigma)
    syy = ndimage.gaussian_filter(iy * iy, sigma)
    sxy = ndimage.gaussian_filter(ix * iy, sigma)
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def detect_corners(img, cfg: MatcherConfig | None = None) -> np.ndarray:
    """Harris corners as ``(N, 2)`` integer ``(x, y)``, strongest first.

    Corners closer than half a patch to the border are discarded.
    """
    cfg = cfg or MatcherConfig()
    R = harris_response(img, cfg.harris_k, cfg.sigma)
    top = R.max()
    if not top > 0:
        return np.zeros((0, 2), dtype=np.intp)
    peak = R == ndimage.maximum_filter(R, size=2 * cfg.nms_radius + 1, mode="constant")
    cand = peak & (R > cfg.min_response_frac * top)
    half = cfg.patch_size // 2
    cand[:half] = cand[-half:] = False
    cand[:, :half] = cand[:, -half:] = False
    ys, xs = np.nonzero(cand)
    order = np.lexsort((xs, ys, -R[ys, xs]))[: cfg.max_corners]
    return np.stack([xs[order], ys[order]], axis=1)


def _patches(img: np.ndarray, pts: np.ndarray, size: int) -> np.ndarray:
    half = size // 2
    offs = np.arange(-half, half + 1)
    ys = pts[:, 1, None, None] + offs[None, :, None]
    xs = pts[:, 0, None, None] + offs[None, None, :]
    p = img[ys, xs].reshape(len(pts), -1)
    p = p - p.mean(axis=1, keepdims=True)
    norm = np.linalg.norm(p, axis=1, keepdims=True)
    return np.divide(p, norm, out=np.zeros_like(p), where=norm > 0)


def detect_and_match(img_a, img_b, cfg: MatcherConfig | None = None) -> list[Correspondence]:
    """Harris corners matched by zero-mean NCC with mutual-best and ratio tests."""
    cfg = cfg or MatcherConfig()
    a, b = to_gray(img_a), to_gray(img_b)
    pa, pb = detect_corners(a, cfg), detect_corners(b, cfg)
    if len(pa) == 0 or len(pb) == 0:
        return []
    dist = 1.0 - _patches(a, pa, cfg.patch_size) @ _patches(b, pb, cfg.patch_size).T
    best_b = np.argmin(dist, axis=1)
    best_a = np.argmin(dist, axis=0)
    out = []
    for i, j in enumerate(best_b):
        if best_a[j] != i:
            continue
        d1 = dist[i, j]
        if dist.shape[1] > 1:
            d2 = np.partition(dist[i], 1)[1]
            if not d1 < cfg.ratio * d2:
                continue
        out.append(
            Correspondence(float(pa[i, 0]), float(pa[i, 1]), float(pb[j, 0]), float(pb[j, 1]), 1.0 - d1)
        )
    return out
