"""Readers and writers for every file format the pipeline touches.

Invalid-pixel sentinels: ``0`` for 16-bit PNG, any non-finite value for PFM and
``.npy`` float maps. Text formats are whitespace separated, one record per line;
blank lines and ``#`` comments are ignored.
"""
from __future__ import annotations

import ast
import configparser
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    CameraIntrinsics,
    MapKind,
    PointSource,
    RasterMap,
    ReferencePoint,
    RigidPose,
)
from .exceptions import FormatError, ManifestError, TruncatedFile, UnsupportedFormat
from .sfm import Correspondence

PNG16_DIVISOR = 256.0


def _g(x: float) -> str:
    # shortest repr that round-trips a float64 exactly
    return repr(float(x))


# --- 16-bit PNG ---------------------------------------------------------------

def _read_png16(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.array(im)
    except OSError as exc:
        raise TruncatedFile(
            f"{path}: unreadable PNG data (file is {path.stat().st_size} bytes): {exc}"
        ) from exc
    if arr.ndim != 2:
        raise UnsupportedFormat(f"{path}: expected a single-channel 16-bit PNG, got shape {arr.shape}")
    return arr.astype(np.uint16)


def load_depth_png16(path, scale_divisor: float = PNG16_DIVISOR, kind=MapKind.METRIC_DEPTH) -> RasterMap:
    """KITTI-style fixed point: ``depth = raw / scale_divisor``; raw 0 is invalid."""
    raw = _read_png16(path)
    valid = raw > 0
    return RasterMap(raw.astype(np.float64) / scale_divisor, valid, kind)


def save_depth_png16(raster: RasterMap, path, scale_divisor: float = PNG16_DIVISOR) -> None:
    raw = np.rint(np.where(raster.valid, raster.values, 0.0) * scale_divisor)
    raw = np.clip(raw, 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(path, format="PNG")


def load_disparity_png16(path, scale_divisor: float = PNG16_DIVISOR) -> RasterMap:
    return load_depth_png16(path, scale_divisor, kind=MapKind.AFFINE_DISPARITY)


save_disparity_png16 = save_depth_png16


# --- PFM ----------------------------------------------------------------------

def _read_header_line(f, path) -> bytes:
    line = f.readline()
    if not line.endswith(b"\n"):
        raise TruncatedFile(f"{path}: truncated PFM header at byte offset {f.tell()}")
    return line.strip()


def load_pfm(path, kind=MapKind.AFFINE_DISPARITY) -> RasterMap:
    """Read a PFM file. Rows are stored bottom-up; a negative scale means
    little-endian. Colour (``PF``) files keep their first channel."""
    path = Path(path)
    with open(path, "rb") as f:
        tag = _read_header_line(f, path)
        if tag not in (b"Pf", b"PF"):
            raise UnsupportedFormat(f"{path}: not a PFM file (magic {tag[:8]!r})")
        channels = 3 if tag == b"PF" else 1
        dims = _read_header_line(f, path).split()
        try:
            width, height = int(dims[0]), int(dims[1])
            scale = float(_read_header_line(f, path))
        except (IndexError, ValueError) as exc:
            raise FormatError(f"{path}: malformed PFM header") from exc
        offset = f.tell()
        n = width * height * channels
        buf = f.read(4 * n)
    if len(buf) < 4 * n:
        raise TruncatedFile(
            f"{path}: truncated PFM data at byte offset {offset + len(buf)}, "
            f"expected {4 * n} data bytes from offset {offset}"
        )
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype).reshape(height, width, channels)[..., 0]
    values = np.flipud(data).astype(np.float64)
    return RasterMap(values, np.isfinite(values), kind)


def save_pfm(raster: RasterMap, path) -> None:
    """Little-endian grayscale PFM; invalid pixels are written as NaN."""
    data = np.where(raster.valid, raster.values, np.nan).astype("<f4")
    H, W = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (W, H))
        f.write(np.ascontiguousarray(np.flipud(data)).tobytes())


# --- .npy (float32, v1.0) -----------------------------------------------------

_NPY_MAGIC = b"\x93NUMPY"


def load_npy_f32(path, kind=MapKind.AFFINE_DISPARITY) -> RasterMap:
    """Minimal reader: 2-D, little-endian float32, C order, format 1.0 only."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 10:
        raise TruncatedFile(f"{path}: truncated .npy preamble at byte offset {len(raw)}")
    if raw[:6] != _NPY_MAGIC:
        raise UnsupportedFormat(f"{path}: not a .npy file")
    if raw[6:8] != b"\x01\x00":
        raise UnsupportedFormat(f"{path}: .npy format version {raw[6]}.{raw[7]} unsupported (need 1.0)")
    (hlen,) = struct.unpack("<H", raw[8:10])
    start = 10 + hlen
    if len(raw) < start:
        raise TruncatedFile(f"{path}: truncated .npy header at byte offset {len(raw)}")
    try:
        header = ast.literal_eval(raw[10:start].decode("latin1"))
        descr, fortran, shape = header["descr"], header["fortran_order"], tuple(header["shape"])
    except (ValueError, SyntaxError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed .npy header") from exc
    if descr != "<f4" or fortran or len(shape) != 2:
        raise UnsupportedFormat(
            f"{path}: need a 2-D C-order '<f4' array, got descr={descr!r} "
            f"fortran_order={fortran} shape={shape}"
        )
    n = 4 * shape[0] * shape[1]
    if len(raw) - start < n:
        raise TruncatedFile(
            f"{path}: truncated .npy data at byte offset {len(raw)}, "
            f"expected {n} data bytes from offset {start}"
        )
    values = np.frombuffer(raw, dtype="<f4", count=shape[0] * shape[1], offset=start)
    values = values.reshape(shape).astype(np.float64)
    return RasterMap(values, np.isfinite(values), kind)


def save_npy_f32(raster: RasterMap, path) -> None:
    data = np.where(raster.valid, raster.values, np.nan).astype("<f4")
    with open(path, "wb") as f:
        np.lib.format.write_array(f, np.ascontiguousarray(data), version=(1, 0))


def load_raster(path, kind=MapKind.AFFINE_DISPARITY) -> RasterMap:
    """Dispatch on extension: ``.pfm``, ``.npy`` or 16-bit ``.png``."""
    ext = Path(path).suffix.lower()
    if ext == ".pfm":
        return load_pfm(path, kind)
    if ext == ".npy":
        return load_npy_f32(path, kind)
    if ext == ".png":
        return load_depth_png16(path, kind=kind)
    raise UnsupportedFormat(f"{path}: unknown raster extension {ext!r}")


def save_raster(raster: RasterMap, path) -> None:
    ext = Path(path).suffix.lower()
    if ext == ".pfm":
        save_pfm(raster, path)
    elif ext == ".npy":
        save_npy_f32(raster, path)
    elif ext == ".png":
        save_depth_png16(raster, path)
    else:
        raise UnsupportedFormat(f"{path}: unknown raster extension {ext!r}")


# --- images -------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im)


def save_image(img: np.ndarray, path) -> None:
    Image.fromarray(np.clip(np.rint(img), 0, 255).astype(np.uint8)).save(path, format="PNG")


# --- text formats -------------------------------------------------------------

def _data_lines(path):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def load_intrinsics(path) -> CameraIntrinsics:
    """``key: value`` lines for fx, fy, cx, cy and ``size: W H``."""
    vals = {}
    for lineno, line in _data_lines(path):
        key, sep, rest = line.partition(":")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected 'key: value'")
        vals[key.strip().lower()] = rest.split()
    try:
        w, h = (int(x) for x in vals["size"])
        return CameraIntrinsics(
            float(vals["fx"][0]), float(vals["fy"][0]), float(vals["cx"][0]), float(vals["cy"][0]), w, h
        )
    except (KeyError, ValueError, IndexError) as exc:
        raise FormatError(f"{path}: incomplete intrinsics (need fx, fy, cx, cy, size)") from exc


def save_intrinsics(K: CameraIntrinsics, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"fx: {_g(K.fx)}\nfy: {_g(K.fy)}\ncx: {_g(K.cx)}\ncy: {_g(K.cy)}\n")
        f.write(f"size: {K.width} {K.height}\n")


def load_poses(path) -> list[RigidPose]:
    """One pose per line: 12 values (3x4 row-major) or 16 (4x4)."""
    poses = []
    for lineno, line in _data_lines(path):
        nums = [float(x) for x in line.split()]
        if len(nums) == 12:
            poses.append(RigidPose.from_matrix(np.reshape(nums, (3, 4))))
        elif len(nums) == 16:
            poses.append(RigidPose.from_matrix(np.reshape(nums, (4, 4))))
        else:
            raise FormatError(f"{path}:{lineno}: expected 12 or 16 values, got {len(nums)}")
    return poses


def save_poses(poses, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in poses:
            f.write(" ".join(_g(x) for x in p.as_matrix()[:3].ravel()) + "\n")


def load_matches(path) -> list[Correspondence]:
    out = []
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) not in (4, 5):
            raise FormatError(f"{path}:{lineno}: expected 'u1 v1 u2 v2 [score]'")
        nums = [float(x) for x in parts]
        out.append(Correspondence(*nums[:4], score=nums[4] if len(nums) == 5 else None))
    return out


def save_matches(matches, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for m in matches:
            cols = [m.u1, m.v1, m.u2, m.v2] + ([] if m.score is None else [m.score])
            f.write(" ".join(_g(x) for x in cols) + "\n")


def save_refpoints(points, path) -> None:
    """``u v depth source weight`` per line."""
    with open(path, "w", encoding="utf-8") as f:
        for p in points:
            f.write(f"{_g(p.u)} {_g(p.v)} {_g(p.depth)} {p.source.value} {_g(p.weight)}\n")


def load_refpoints(path) -> list[ReferencePoint]:
    out = []
    for lineno, line in _data_lines(path):
        parts = line.split()
        if len(parts) not in (3, 4, 5):
            raise FormatError(f"{path}:{lineno}: expected 'u v depth [source [weight]]'")
        source = PointSource(parts[3]) if len(parts) > 3 else PointSource.EXTERNAL
        weight = float(parts[4]) if len(parts) > 4 else 1.0
        out.append(ReferencePoint(float(parts[0]), float(parts[1]), float(parts[2]), source, weight))
    return out


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


# --- manifest -----------------------------------------------------------------

_PATH_KEYS = (
    "disparity", "gt_depth", "left_image", "right_image", "prev_image",
    "pose", "matches", "refpoints", "pred_depth",
)
_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "width", "height")

PROVIDER_REQUIREMENTS = {
    "lidar": ("gt_depth",),
    "stereo": ("left_image", "right_image", "intrinsics", "baseline_m"),
    "sfm": ("pose", "intrinsics"),
    "external": ("refpoints",),
}


@dataclass
class ManifestRecord:
    name: str
    disparity: Path | None = None
    gt_depth: Path | None = None
    left_image: Path | None = None
    right_image: Path | None = None
    prev_image: Path | None = None
    pose: Path | None = None
    matches: Path | None = None
    refpoints: Path | None = None
    pred_depth: Path | None = None
    intrinsics: CameraIntrinsics | None = None
    baseline_m: float | None = None

    def missing(self, keys) -> list[str]:
        return [k for k in keys if getattr(self, k) is None]


@dataclass
class DatasetManifest:
    """Records in file order plus the dataset-wide evaluation profile."""

    root: Path
    profile: str = "outdoor"
    records: list[ManifestRecord] = field(default_factory=list)

    def validate(self, provider: str | None = None, need=("disparity",)) -> None:
        """Fail before any processing if a record lacks what the run needs."""
        problems = []
        keys = tuple(need) + (PROVIDER_REQUIREMENTS.get(provider, ()) if provider else ())
        if provider is not None and provider not in PROVIDER_REQUIREMENTS:
            raise ManifestError(f"unknown provider {provider!r}")
        for rec in self.records:
            miss = rec.missing(keys)
            if provider == "sfm" and rec.matches is None and (rec.prev_image is None or rec.left_image is None):
                miss.append("matches (or prev_image + left_image)")
            if miss:
                problems.append(f"[{rec.name}] missing {', '.join(miss)}")
        if problems:
            raise ManifestError("manifest incomplete:\n  " + "\n  ".join(problems))


def load_manifest(path, provider: str | None = None, need=("disparity",)) -> DatasetManifest:
    """Parse an INI-style manifest.

    A ``[dataset]`` section holds ``profile``; every other section is one
    record. Paths are relative to the manifest's directory and must exist.
    Intrinsics come from an ``intrinsics`` file path or inline
    ``fx/fy/cx/cy/width/height`` keys.
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    root = path.parent
    manifest = DatasetManifest(root=root)
    if parser.has_section("dataset"):
        manifest.profile = parser.get("dataset", "profile", fallback="outdoor")
    for name in parser.sections():
        if name == "dataset":
            continue
        sec = parser[name]
        rec = ManifestRecord(name=name)
        for key in _PATH_KEYS:
            if key in sec:
                p = root / sec[key]
                if not p.exists():
                    raise ManifestError(f"[{name}] {key}: {p} does not exist")
                setattr(rec, key, p)
        if "intrinsics" in sec:
            p = root / sec["intrinsics"]
            if not p.exists():
                raise ManifestError(f"[{name}] intrinsics: {p} does not exist")
            rec.intrinsics = load_intrinsics(p)
        elif all(k in sec for k in _INTRINSIC_KEYS):
            rec.intrinsics = CameraIntrinsics(
                float(sec["fx"]), float(sec["fy"]), float(sec["cx"]), float(sec["cy"]),
                int(sec["width"]), int(sec["height"]),
            )
        if "baseline_m" in sec:
            rec.baseline_m = float(sec["baseline_m"])
        manifest.records.append(rec)
    if not manifest.records:
        raise ManifestError(f"{path}: no records")
    manifest.validate(provider, need)
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest; paths are stored relative to ``path``'s directory."""
    path = Path(path)
    base = path.parent
    lines = ["[dataset]", f"profile = {manifest.profile}", ""]
    for rec in manifest.records:
        lines.append(f"[{rec.name}]")
        for key in _PATH_KEYS:
            p = getattr(rec, key)
            if p is not None:
                lines.append(f"{key} = {Path(os.path.relpath(p, base)).as_posix()}")
        if rec.intrinsics is not None:
            K = rec.intrinsics
            for key in _INTRINSIC_KEYS:
                val = getattr(K, key)
                lines.append(f"{key} = {val if isinstance(val, int) else _g(val)}")
        if rec.baseline_m is not None:
            lines.append(f"baseline_m = {_g(rec.baseline_m)}")
        lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")
