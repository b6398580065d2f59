"""Semi-global matching on rectified stereo pairs.

Census transform + Hamming matching cost, path-wise SGM aggregation, winner
takes all with optional parabolic refinement, and a left-right consistency
check. The resulting disparity (pixels) converts to metric reference points
through ``depth = fx * baseline / d``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraIntrinsics, MapKind, PointSource, RasterMap, ReferencePoint, to_gray
from .exceptions import InvalidConfig

PATHS_8 = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1))
PATH_SETS = {2: PATHS_8[:2], 4: PATHS_8[:4], 8: PATHS_8}


@dataclass(frozen=True)
class StereoRig:
    intrinsics: CameraIntrinsics
    baseline_m: float

    def __post_init__(self):
        if not self.baseline_m > 0:
            raise InvalidConfig(f"baseline must be positive, got {self.baseline_m}")


@dataclass(frozen=True)
class SgmConfig:
    """SGM settings. Penalties are in census-bit units."""

    max_disparity: int = 128
    census_window: int = 5
    p1: float = 8.0
    p2: float = 96.0
    n_paths: int = 8
    lr_check_max_diff: float = 1.0
    subpixel: bool = True
    min_disparity_px: int = 1

    def __post_init__(self):
        if self.max_disparity < 2:
            raise InvalidConfig("max_disparity must be >= 2")
        _check_window(self.census_window)
        if not self.p2 > self.p1 > 0:
            raise InvalidConfig(f"need p2 > p1 > 0, got p1={self.p1}, p2={self.p2}")
        if self.n_paths not in PATH_SETS:
            raise InvalidConfig(f"n_paths must be one of {sorted(PATH_SETS)}")
        if self.min_disparity_px < 1:
            raise InvalidConfig("min_disparity_px must be >= 1")


@dataclass(frozen=True, eq=False)
class CostVolume:
    """Costs indexed ``[y, x, d]``."""

    costs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=np.float32)
        if c.ndim != 3:
            raise InvalidConfig(f"cost volume must be 3-D, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InvalidConfig("cost volume contains non-finite entries")
        object.__setattr__(self, "costs", c)

    @property
    def height(self) -> int:
        return self.costs.shape[0]

    @property
    def width(self) -> int:
        return self.costs.shape[1]

    @property
    def n_disp(self) -> int:
        return self.costs.shape[2]


def _check_window(window: int):
    if window < 1 or window % 2 == 0:
        raise InvalidConfig(f"census window must be a positive odd integer, got {window}")
    if window * window - 1 > 64:
        raise InvalidConfig(f"census window {window} needs more than 64 bits")


def census_transform(img, window: int = 5) -> np.ndarray:
    """Per-pixel bit string, one bit per neighbor: 1 iff neighbor < center.

    Bits are packed most-significant first in raster order of the window
    (center skipped). Borders read clamped coordinates.
    """
    _check_window(window)
    img = to_gray(img)
    r = window // 2
    padded = np.pad(img, r, mode="edge")
    H, W = img.shape
    code = np.zeros((H, W), dtype=np.uint64)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            neighbor = padded[r + dy:r + dy + H, r + dx:r + dx + W]
            code = (code << np.uint64(1)) | (neighbor < img).astype(np.uint64)
    return code


def matching_cost(left: np.ndarray, right: np.ndarray, max_disp: int, window: int = 5) -> CostVolume:
    """Hamming distance between ``left[y, x]`` and ``right[y, x - d]``.

    Shifts that leave the image get the maximum cost ``window**2 - 1``.
    """
    if left.shape != right.shape:
        raise InvalidConfig(f"census shapes differ: {left.shape} vs {right.shape}")
    H, W = left.shape
    c_max = window * window - 1
    costs = np.full((H, W, max_disp), c_max, dtype=np.float32)
    for d in range(min(max_disp, W)):
        costs[:, d:, d] = np.bitwise_count(left[:, d:] ^ right[:, : W - d])
    return CostVolume(costs)


def _step(C: np.ndarray, L_prev: np.ndarray, p1: float, p2: float) -> np.ndarray:
    m = L_prev.min(axis=-1, keepdims=True)
    best = np.minimum(L_prev, m + p2)
    best[..., 1:] = np.minimum(best[..., 1:], L_prev[..., :-1] + p1)
    best[..., :-1] = np.minimum(best[..., :-1], L_prev[..., 1:] + p1)
    return C + best - m


def aggregate_path(cv: CostVolume, direction: tuple[int, int], p1: float, p2: float) -> np.ndarray:
    """Path cost ``L_r`` along ``direction = (dx, dy)`` (the step from p - r to p)."""
    C = cv.costs
    H, W, _ = C.shape
    dx, dy = direction
    L = np.empty_like(C)
    if dy == 0:
        xs = range(W) if dx > 0 else range(W - 1, -1, -1)
        prev = None
        for x in xs:
            L[:, x] = C[:, x] if prev is None else _step(C[:, x], L[:, prev], p1, p2)
            prev = x
        return L
    ys = range(H) if dy > 0 else range(H - 1, -1, -1)
    prev_y = None
    for y in ys:
        if prev_y is None:
            L[y] = C[y]
        else:
            # predecessor of (x, y) is (x - dx, prev_y)
            Lp = L[prev_y]
            if dx == 0:
                L[y] = _step(C[y], Lp, p1, p2)
            elif dx > 0:
                L[y, 0] = C[y, 0]
                L[y, 1:] = _step(C[y, 1:], Lp[:-1], p1, p2)
            else:
                L[y, -1] = C[y, -1]
                L[y, :-1] = _step(C[y, :-1], Lp[1:], p1, p2)
        prev_y = y
    return L


def sgm_aggregate(cv: CostVolume, cfg: SgmConfig) -> CostVolume:
    """Sum of path costs over ``cfg.n_paths`` directions.

    Each path cost is bounded by ``C_max + p2``, so the sum never exceeds
    ``n_paths * (C_max + p2)``.
    """
    total = np.zeros_like(cv.costs)
    for direction in PATH_SETS[cfg.n_paths]:
        total += aggregate_path(cv, direction, cfg.p1, cfg.p2)
    return CostVolume(total)


def _parabolic(costs: np.ndarray, k: np.ndarray) -> np.ndarray:
    D = costs.shape[-1]
    inner = (k > 0) & (k < D - 1)
    kc = np.clip(k, 1, D - 2)
    c0 = np.take_along_axis(costs, (kc - 1)[..., None], -1)[..., 0].astype(np.float64)
    c1 = np.take_along_axis(costs, kc[..., None], -1)[..., 0].astype(np.float64)
    c2 = np.take_along_axis(costs, (kc + 1)[..., None], -1)[..., 0].astype(np.float64)
    denom = c0 - 2 * c1 + c2
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(denom > 0, (c0 - c2) / (2 * denom), 0.0)
    return np.where(inner, np.clip(off, -0.5, 0.5), 0.0)


def wta_disparity(cv: CostVolume, subpixel: bool = True) -> RasterMap:
    """Per-pixel argmin; ties go to the smallest disparity."""
    k = np.argmin(cv.costs, axis=-1)
    disp = k.astype(np.float64)
    if subpixel:
        disp = disp + _parabolic(cv.costs, k)
    return RasterMap(disp, np.ones(disp.shape, dtype=bool), MapKind.AFFINE_DISPARITY)


def right_view_costs(left_census: np.ndarray, right_census: np.ndarray, cfg: SgmConfig) -> CostVolume:
    """Aggregated costs with the right image as reference: ``C_R(y, x, d)``
    compares ``right[y, x]`` with ``left[y, x + d]``.

    Both views are mirrored so the right image becomes a left reference, then
    the result is mirrored back.
    """
    cv = matching_cost(right_census[:, ::-1], left_census[:, ::-1], cfg.max_disparity, cfg.census_window)
    agg = sgm_aggregate(cv, cfg)
    return CostVolume(agg.costs[:, ::-1])


def lr_consistency(left_disp: RasterMap, right_disp: RasterMap, max_diff: float = 1.0) -> RasterMap:
    """Invalidate pixels where ``|d_L(p) - d_R(p - d_L(p))| > max_diff``."""
    dl = left_disp.values
    H, W = dl.shape
    ys, xs = np.indices((H, W))
    xr = np.rint(xs - dl).astype(np.intp)
    inside = (xr >= 0) & (xr < W)
    xr_c = np.clip(xr, 0, W - 1)
    dr = right_disp.values[ys, xr_c]
    ok = left_disp.valid & inside & right_disp.valid[ys, xr_c] & (np.abs(dl - dr) <= max_diff)
    return RasterMap(dl, ok, left_disp.kind)


def compute_disparity(left_img, right_img, cfg: SgmConfig | None = None) -> RasterMap:
    """Full pipeline: census, cost, aggregation, WTA, LR check."""
    cfg = cfg or SgmConfig()
    left = to_gray(left_img)
    right = to_gray(right_img)
    if left.shape != right.shape:
        raise InvalidConfig(f"stereo images differ in size: {left.shape} vs {right.shape}")
    cl = census_transform(left, cfg.census_window)
    cr = census_transform(right, cfg.census_window)
    agg = sgm_aggregate(matching_cost(cl, cr, cfg.max_disparity, cfg.census_window), cfg)
    disp_l = wta_disparity(agg, cfg.subpixel)
    disp_r = wta_disparity(right_view_costs(cl, cr, cfg), subpixel=False)
    return lr_consistency(disp_l, disp_r, cfg.lr_check_max_diff)


def stereo_refpoints(
    disp: RasterMap, rig: StereoRig, stride: int = 1, min_disparity_px: float = 1
) -> list[ReferencePoint]:
    """Reference points on the ``stride`` grid of valid disparities >= ``min_disparity_px``."""
    if stride < 1:
        raise InvalidConfig("stride must be >= 1")
    if disp.shape != rig.intrinsics.shape:
        raise InvalidConfig(f"disparity {disp.shape} does not match camera {rig.intrinsics.shape}")
    d = disp.values[::stride, ::stride]
    ok = disp.valid[::stride, ::stride] & (d >= min_disparity_px)
    ys, xs = np.nonzero(ok)
    depth = rig.intrinsics.fx * rig.baseline_m / d[ys, xs]
    return [
        ReferencePoint(float(x * stride), float(y * stride), float(z), PointSource.STEREO)
        for x, y, z in zip(xs, ys, depth)
    ]
