"""Camera geometry, raster containers, projection and bilinear sampling.

Image convention used everywhere in the package: pixel centers sit at integer
coordinates, the origin is the top-left pixel, ``u`` runs along the width and
``v`` along the height. A raster ``values[v, u]`` therefore holds the value of
the pixel centered at ``(u, v)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidConfig, OutOfBounds

Z_MIN = 1e-3
_ORTHO_TOL = 1e-9
_BORDER_EPS_PX = 1e-9


class MapKind(str, enum.Enum):
    AFFINE_DISPARITY = "affine_disparity"
    METRIC_DEPTH = "metric_depth"
    METRIC_INVERSE_DEPTH = "metric_inverse_depth"


class PointSource(str, enum.Enum):
    LIDAR_SIM = "lidar_sim"
    STEREO = "stereo"
    SFM = "sfm"
    EXTERNAL = "external"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidConfig(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise InvalidConfig(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidConfig(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True, eq=False)
class RigidPose:
    """Rigid transform ``x -> R @ x + t`` (translation in meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise InvalidConfig("pose contains non-finite entries")
        if np.abs(R.T @ R - np.eye(3)).max() > _ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise InvalidConfig("rotation is not orthonormal with det = +1")
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> RigidPose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> RigidPose:
        """Build from a 3x4 ``[R|t]`` or 4x4 homogeneous matrix."""
        m = np.asarray(m, dtype=np.float64)
        if m.shape not in ((3, 4), (4, 4)):
            raise InvalidConfig(f"expected a 3x4 or 4x4 matrix, got shape {m.shape}")
        return cls(_orthonormalize(m[:3, :3]), m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: RigidPose) -> RigidPose:
        return compose_pose(self, other)

    def __eq__(self, other):
        if not isinstance(other, RigidPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __repr__(self):
        return f"RigidPose(angle={rotation_angle_deg(self):.4f}deg, t={self.translation.tolist()})"


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    # text pose files round their entries; snap back onto SO(3), but leave
    # an already valid rotation untouched so save/load is exact
    if np.abs(R.T @ R - np.eye(3)).max() <= _ORTHO_TOL and abs(np.linalg.det(R) - 1.0) <= _ORTHO_TOL:
        return R
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


@dataclass(frozen=True, eq=False)
class RasterMap:
    """An H x W scalar grid with a validity mask and a kind tag."""

    values: np.ndarray
    valid: np.ndarray
    kind: MapKind

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise InvalidConfig(
                f"values {values.shape} and valid {valid.shape} must be equal 2-D shapes"
            )
        kind = MapKind(self.kind)
        valid &= np.isfinite(values)
        if kind is MapKind.METRIC_DEPTH and np.any(values[valid] <= 0):
            raise InvalidConfig("metric depth map has non-positive valid values")
        if kind is MapKind.METRIC_INVERSE_DEPTH and np.any(values[valid] < 0):
            raise InvalidConfig("metric inverse depth map has negative valid values")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid))
        object.__setattr__(self, "kind", kind)

    @classmethod
    def from_array(cls, values, kind: MapKind, valid=None) -> RasterMap:
        """Wrap an array; validity defaults to finite (and positive, for depth)."""
        values = np.asarray(values, dtype=np.float64)
        if valid is None:
            valid = np.isfinite(values)
            if MapKind(kind) is MapKind.METRIC_DEPTH:
                valid &= values > 0
            elif MapKind(kind) is MapKind.METRIC_INVERSE_DEPTH:
                valid &= values >= 0
        return cls(values, valid, kind)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def filled(self, fill=np.nan) -> np.ndarray:
        out = self.values.copy()
        out[~self.valid] = fill
        return out


@dataclass(frozen=True)
class ReferencePoint:
    """A metric anchor at a continuous pixel location."""

    u: float
    v: float
    depth: float
    source: PointSource = PointSource.EXTERNAL
    weight: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.u) and np.isfinite(self.v)):
            raise InvalidConfig("reference point coordinates must be finite")
        if not (self.depth > 0 and np.isfinite(self.depth)):
            raise InvalidConfig(f"reference depth must be positive, got {self.depth}")
        if not self.weight >= 0:
            raise InvalidConfig(f"reference weight must be non-negative, got {self.weight}")
        object.__setattr__(self, "source", PointSource(self.source))

    def in_bounds(self, width: int, height: int) -> bool:
        return 0 <= self.u <= width - 1 and 0 <= self.v <= height - 1


def refpoints_to_arrays(refs) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Columns ``(u, v, depth, weight)`` of a reference point list."""
    refs = list(refs)
    if not refs:
        empty = np.zeros(0)
        return empty, empty.copy(), empty.copy(), empty.copy()
    arr = np.array([(r.u, r.v, r.depth, r.weight) for r in refs], dtype=np.float64)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def project_points(points, K: CameraIntrinsics, z_min: float = Z_MIN, return_mask: bool = False):
    """Project camera-frame points onto the image plane.

    Returns an ``(M, 3)`` array of ``(u, v, depth)`` rows for the points that lie
    in front of the camera and land inside ``[0, W-1] x [0, H-1]``, in input
    order. With ``return_mask`` the boolean keep-mask over the input is returned
    as well.
    """
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    X, Y, Z = P[:, 0], P[:, 1], P[:, 2]
    front = Z > z_min
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(front, K.fx * X / np.where(front, Z, 1.0) + K.cx, np.nan)
        v = np.where(front, K.fy * Y / np.where(front, Z, 1.0) + K.cy, np.nan)
    # rounding can push an exact border pixel a hair outside the image
    eps = _BORDER_EPS_PX
    keep = front & (u >= -eps) & (u <= K.width - 1 + eps) & (v >= -eps) & (v <= K.height - 1 + eps)
    u = np.clip(u[keep], 0, K.width - 1)
    v = np.clip(v[keep], 0, K.height - 1)
    out = np.stack([u, v, Z[keep]], axis=1)
    if return_mask:
        return out, keep
    return out


def backproject(u, v, depth, K: CameraIntrinsics) -> np.ndarray:
    """Inverse of :func:`project_points` for pixels with known depth."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    return np.stack([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z], axis=-1)


def _neighbors(coord: np.ndarray, size: int):
    c0 = np.floor(coord).astype(np.intp)
    frac = coord - c0
    # an exactly integral coordinate only touches its own row/column
    c1 = np.where(frac > 0, np.minimum(c0 + 1, size - 1), c0)
    return c0, c1, frac


def bilinear_sample_many(raster: RasterMap, u, v) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bilinear sampling.

    Returns ``(values, ok)``. A sample is invalid whenever any grid value that
    contributes to it is invalid.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    H, W = raster.shape
    bad = ~((u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1))
    if np.any(bad):
        i = int(np.flatnonzero(bad.ravel())[0])
        raise OutOfBounds(
            f"sample ({u.ravel()[i]}, {v.ravel()[i]}) outside [0, {W - 1}] x [0, {H - 1}]"
        )
    x0, x1, fx = _neighbors(u, W)
    y0, y1, fy = _neighbors(v, H)
    vals, ok = raster.values, raster.valid
    ok_out = ok[y0, x0] & ok[y0, x1] & ok[y1, x0] & ok[y1, x1]
    with np.errstate(invalid="ignore"):
        top = vals[y0, x0] * (1 - fx) + vals[y0, x1] * fx
        bottom = vals[y1, x0] * (1 - fx) + vals[y1, x1] * fx
        out = top * (1 - fy) + bottom * fy
    # keep grid points bit-exact
    exact = (fx == 0) & (fy == 0)
    out = np.where(exact, vals[y0, x0], out)
    return np.where(ok_out, out, np.nan), ok_out


def bilinear_sample(raster: RasterMap, u: float, v: float) -> float | None:
    """Sample one location; ``None`` when the sample is invalid."""
    val, ok = bilinear_sample_many(raster, np.array([u]), np.array([v]))
    return float(val[0]) if ok[0] else None


def compose_pose(a: RigidPose, b: RigidPose) -> RigidPose:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return RigidPose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert_pose(p: RigidPose) -> RigidPose:
    Rt = p.rotation.T
    return RigidPose(Rt, -Rt @ p.translation)


def transform_point(p: RigidPose, x) -> np.ndarray:
    """Apply a pose to one point (shape ``(3,)``) or many (shape ``(N, 3)``)."""
    x = np.asarray(x, dtype=np.float64)
    return x @ p.rotation.T + p.translation


def rotation_angle_deg(p: RigidPose) -> float:
    c = (np.trace(p.rotation) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def translation_norm_m(p: RigidPose) -> float:
    return float(np.linalg.norm(p.translation))


def rotation_from_axis_angle(axis, angle_deg: float) -> np.ndarray:
    """Rodrigues' formula."""
    k = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(k)
    if n == 0:
        raise InvalidConfig("rotation axis must be non-zero")
    k = k / n
    theta = np.radians(angle_deg)
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * Kx + (1 - np.cos(theta)) * (Kx @ Kx)


def rot_z(angle_deg: float) -> np.ndarray:
    return rotation_from_axis_angle((0, 0, 1), angle_deg)


def to_gray(img) -> np.ndarray:
    """Luma (0.299 R + 0.587 G + 0.114 B) as float64; grayscale passes through."""
    img = np.asarray(img)
    if img.ndim == 2:
        return img.astype(np.float64)
    if img.ndim == 3 and img.shape[2] in (3, 4):
        rgb = img[..., :3].astype(np.float64)
        return rgb @ np.array([0.299, 0.587, 0.114])
    raise InvalidConfig(f"expected a grayscale or RGB image, got shape {img.shape}")
