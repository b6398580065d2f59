"""Depth evaluation: delta accuracies, AbsRel, RMSE, RMSE log, log10, R².

The delta test uses a strict ``max(pred/gt, gt/pred) < 1.25**i``. Dataset
reports average per-image metrics with equal image weight.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import MapKind, RasterMap
from .exceptions import EmptyMask, InvalidConfig

METRIC_NAMES = ("delta1", "delta2", "delta3", "abs_rel", "rmse", "rmse_log", "log10")

# Garg/Eigen crop for KITTI, expressed as margins removed from each side
EIGEN_CROP = (0.40810811, 1 - 0.99189189, 0.03594771, 1 - 0.96405229)


class Crop(str, enum.Enum):
    NONE = "none"
    EIGEN = "eigen"
    CUSTOM = "custom"


class Alignment(str, enum.Enum):
    NONE_METRIC = "none"
    MEDIAN_SCALING = "median"


@dataclass(frozen=True)
class EvalConfig:
    depth_range: tuple[float, float] = (1e-3, 80.0)
    crop: Crop = Crop.NONE
    crop_margins: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    alignment: Alignment = Alignment.NONE_METRIC

    def __post_init__(self):
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise InvalidConfig(f"invalid depth range {self.depth_range}")
        object.__setattr__(self, "crop", Crop(self.crop))
        object.__setattr__(self, "alignment", Alignment(self.alignment))
        if any(not 0 <= f < 0.5 for f in self.crop_margins):
            raise InvalidConfig(f"crop margins must lie in [0, 0.5): {self.crop_margins}")

    def margins(self) -> tuple[float, float, float, float]:
        """``(top, bottom, left, right)`` fractions removed."""
        if self.crop is Crop.EIGEN:
            return EIGEN_CROP
        if self.crop is Crop.CUSTOM:
            return self.crop_margins
        return (0.0, 0.0, 0.0, 0.0)


# depth ranges and crops here are the usual benchmark conventions, not values
# published alongside any particular result
PROFILES = {
    "outdoor": EvalConfig(depth_range=(1e-3, 80.0), crop=Crop.EIGEN),
    "indoor": EvalConfig(depth_range=(1e-3, 10.0)),
    "custom": EvalConfig(),
}


@dataclass
class EvalReport:
    delta1: float
    delta2: float
    delta3: float
    abs_rel: float
    rmse: float
    rmse_log: float
    log10: float
    n_pixels: int
    per_image: list[dict] = field(default_factory=list)

    def metrics(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_NAMES}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self, title: str = "") -> str:
        return format_table([(title or "result", self)])


def evaluation_mask(pred: RasterMap, gt: RasterMap, cfg: EvalConfig) -> np.ndarray:
    if pred.shape != gt.shape:
        raise InvalidConfig(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    lo, hi = cfg.depth_range
    H, W = gt.shape
    top, bottom, left, right = cfg.margins()
    crop = np.zeros((H, W), dtype=bool)
    crop[int(top * H):int((1 - bottom) * H), int(left * W):int((1 - right) * W)] = True
    g = gt.values
    return crop & gt.valid & pred.valid & (g > lo) & (g < hi) & (pred.values > 0)


def compute_errors(pred: np.ndarray, gt: np.ndarray) -> dict[str, float]:
    """All seven metrics over matching 1-D arrays of positive depths."""
    thresh = np.maximum(pred / gt, gt / pred)
    return {
        "delta1": float(np.mean(thresh < 1.25)),
        "delta2": float(np.mean(thresh < 1.25**2)),
        "delta3": float(np.mean(thresh < 1.25**3)),
        "abs_rel": float(np.mean(np.abs(pred - gt) / gt)),
        "rmse": float(np.sqrt(np.mean((pred - gt) ** 2))),
        "rmse_log": float(np.sqrt(np.mean((np.log(pred) - np.log(gt)) ** 2))),
        "log10": float(np.mean(np.abs(np.log10(pred) - np.log10(gt)))),
    }


def evaluate_image(pred: RasterMap, gt: RasterMap, cfg: EvalConfig | None = None) -> EvalReport:
    cfg = cfg or EvalConfig()
    for m in (pred, gt):
        if m.kind is not MapKind.METRIC_DEPTH:
            raise InvalidConfig(f"expected metric depth maps, got {m.kind.value}")
    mask = evaluation_mask(pred, gt, cfg)
    if not np.any(mask):
        raise EmptyMask("no jointly valid in-range pixel after cropping")
    p = pred.values[mask]
    g = gt.values[mask]
    if cfg.alignment is Alignment.MEDIAN_SCALING:
        p = p * (np.median(g) / np.median(p))
    errs = compute_errors(p, g)
    n = int(mask.sum())
    return EvalReport(**errs, n_pixels=n, per_image=[dict(errs, n_pixels=n)])


def evaluate_dataset(records, cfg: EvalConfig | None = None, extras=None) -> EvalReport:
    """Average per-image metrics over an iterable of ``(pred, gt)`` maps.

    ``extras``, if given, is a parallel sequence of dicts (for example fit
    diagnostics) merged into each per-image record.
    """
    cfg = cfg or EvalConfig()
    per_image = []
    extras = list(extras) if extras is not None else None
    for i, (pred, gt) in enumerate(records):
        rec = evaluate_image(pred, gt, cfg).per_image[0]
        if extras is not None and extras[i]:
            rec.update(extras[i])
        per_image.append(rec)
    if not per_image:
        raise EmptyMask("no image to evaluate")
    means = {k: math.fsum(r[k] for r in per_image) / len(per_image) for k in METRIC_NAMES}
    return EvalReport(**means, n_pixels=sum(r["n_pixels"] for r in per_image), per_image=per_image)


def r_squared_report(pairs, scale) -> float | None:
    """Share of the variance of metric inverse depth explained by the fitted line.

    ``None`` when the inverse depths have no variance.
    """
    d = np.asarray(pairs.d, dtype=np.float64)
    g = np.asarray(pairs.g, dtype=np.float64)
    ss_tot = float(np.sum((g - g.mean()) ** 2))
    if ss_tot == 0:
        return None
    ss_res = float(np.sum((g - (scale.alpha * d + scale.beta)) ** 2))
    return 1.0 - ss_res / ss_tot


def format_table(rows, columns=METRIC_NAMES) -> str:
    """Aligned text table, one row per ``(label, EvalReport)``."""
    headers = {"delta1": "d1", "delta2": "d2", "delta3": "d3", "abs_rel": "AbsRel",
               "rmse": "RMSE", "rmse_log": "RMSElog", "log10": "log10"}
    label_w = max([len("method")] + [len(str(label)) for label, _ in rows])
    head = "method".ljust(label_w) + "".join(f"{headers[c]:>10}" for c in columns)
    lines = [head, "-" * len(head)]
    for label, rep in rows:
        vals = "".join(f"{getattr(rep, c):>10.4f}" for c in columns)
        lines.append(str(label).ljust(label_w) + vals)
    return "\n".join(lines) + "\n"
