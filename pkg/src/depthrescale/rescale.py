"""Affine rescaling of disparity predictions to metric depth.

A monocular network returns a disparity map ``d`` that is only correct up to an
unknown positive scale and an offset. Metric inverse depth follows

    1 / D = alpha * d + beta

so pairing a handful of metric reference points with the disparity sampled at
their pixel location turns depth recovery into a 1-D robust line fit in
inverse-depth space. Everything here fits ``g = 1/depth`` against ``d``; no
regression is ever performed on depth itself.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .core import MapKind, RasterMap, bilinear_sample_many, refpoints_to_arrays
from .exceptions import AllOutliers, DegenerateFit, EmptyPairs, InvalidConfig, OutOfBounds

NON_PHYSICAL = "non_physical"
SCALE_ONLY_FALLBACK = "scale_only_fallback"

OUTDOOR_CAP = (0.1, 80.0)
INDOOR_CAP = (0.1, 10.0)

_CHUNK = 64


@dataclass(frozen=True, eq=False)
class SamplePairs:
    """Column-wise (disparity, metric inverse depth, weight) samples."""

    d: np.ndarray
    g: np.ndarray
    weight: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64).ravel()
        g = np.asarray(self.g, dtype=np.float64).ravel()
        w = (
            np.ones_like(d)
            if self.weight is None
            else np.asarray(self.weight, dtype=np.float64).ravel()
        )
        if not (d.shape == g.shape == w.shape):
            raise InvalidConfig(f"pair columns differ in length: {d.shape}, {g.shape}, {w.shape}")
        if not np.all(np.isfinite(d)):
            raise InvalidConfig("pair disparities must be finite")
        if np.any(~(g > 0)):
            raise InvalidConfig("pair inverse depths must be positive")
        if np.any(~(w >= 0)):
            raise InvalidConfig("pair weights must be non-negative")
        for name, a in (("d", d), ("g", g), ("weight", w)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_arrays(cls, d, g, weight=None) -> SamplePairs:
        return cls(d, g, weight)

    def __len__(self) -> int:
        return self.d.size

    def subset(self, mask) -> SamplePairs:
        return SamplePairs(self.d[mask], self.g[mask], self.weight[mask])


@dataclass(frozen=True)
class AffineScale:
    alpha: float
    beta: float
    inlier_count: int
    total_count: int
    r_squared: float
    residual_rms: float
    flags: tuple[str, ...] = ()

    @property
    def is_physical(self) -> bool:
        return self.alpha > 0

    def inverse_depth(self, d):
        return self.alpha * np.asarray(d, dtype=np.float64) + self.beta

    def to_dict(self) -> dict:
        out = asdict(self)
        out["flags"] = list(self.flags)
        for key in ("r_squared", "residual_rms"):
            if not math.isfinite(out[key]):
                out[key] = None
        return out

    @classmethod
    def from_dict(cls, data: dict) -> AffineScale:
        return cls(
            alpha=float(data["alpha"]),
            beta=float(data["beta"]),
            inlier_count=int(data.get("inlier_count", 0)),
            total_count=int(data.get("total_count", 0)),
            r_squared=float("nan") if data.get("r_squared") is None else float(data["r_squared"]),
            residual_rms=(
                float("nan") if data.get("residual_rms") is None else float(data["residual_rms"])
            ),
            flags=tuple(data.get("flags", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class RansacConfig:
    """RANSAC settings.

    ``threshold_mode`` is ``"relative"`` (inlier band is ``threshold`` times the
    median inverse depth of the pairs) or ``"absolute"`` (band in 1/m).
    """

    max_iterations: int = 1000
    threshold_mode: str = "relative"
    threshold: float = 0.05
    seed: int = 0
    refit_on_inliers: bool = True
    min_sample: int = field(default=2, init=False)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidConfig("max_iterations must be >= 1")
        if self.threshold_mode not in ("relative", "absolute"):
            raise InvalidConfig(f"unknown threshold mode {self.threshold_mode!r}")
        if not self.threshold > 0:
            raise InvalidConfig("inlier threshold must be positive")

    def inlier_band(self, g: np.ndarray) -> float:
        if self.threshold_mode == "absolute":
            return float(self.threshold)
        return float(self.threshold * np.median(g))


def build_pairs(disparity: RasterMap, refs) -> SamplePairs:
    """Sample the disparity map under every reference point.

    References whose bilinear sample touches an invalid grid value are
    dropped. Raises :class:`EmptyPairs` if nothing survives.
    """
    if disparity.kind is not MapKind.AFFINE_DISPARITY:
        raise InvalidConfig(f"expected an affine disparity map, got {disparity.kind.value}")
    u, v, depth, w = refpoints_to_arrays(refs)
    if u.size == 0:
        raise EmptyPairs("no reference points given")
    H, W = disparity.shape
    outside = ~((u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1))
    if np.any(outside):
        raise OutOfBounds(f"{int(outside.sum())} reference points fall outside the {W}x{H} map")
    d, ok = bilinear_sample_many(disparity, u, v)
    if not np.any(ok):
        raise EmptyPairs(f"all {u.size} reference points sample invalid disparity")
    return SamplePairs(d[ok], 1.0 / depth[ok], w[ok])


def _fit_line(d, g, w):
    sw = w.sum()
    if d.size < 2 or sw <= 0:
        raise DegenerateFit(f"need at least 2 weighted pairs, got {d.size}")
    md = (w * d).sum() / sw
    mg = (w * g).sum() / sw
    dd = d - md
    sxx = (w * dd * dd).sum()
    if not sxx > 0 or np.ptp(d[w > 0]) == 0:
        raise DegenerateFit("all disparities are identical")
    alpha = (w * dd * (g - mg)).sum() / sxx
    beta = mg - alpha * md
    return float(alpha), float(beta)


def _line_stats(d, g, w, alpha, beta):
    res = g - (alpha * d + beta)
    sw = w.sum()
    ss_res = (w * res * res).sum()
    mg = (w * g).sum() / sw
    ss_tot = (w * (g - mg) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")
    return float(r2), float(math.sqrt(ss_res / sw))


def _make_scale(d, g, w, alpha, beta, total) -> AffineScale:
    r2, rms = _line_stats(d, g, w, alpha, beta)
    flags = () if alpha > 0 else (NON_PHYSICAL,)
    return AffineScale(alpha, beta, int(d.size), int(total), r2, rms, flags)


def fit_affine_lsq(pairs: SamplePairs) -> AffineScale:
    """Closed-form weighted least squares of inverse depth on disparity.

    A non-positive slope is not an error; the result then carries the
    ``"non_physical"`` flag.
    """
    alpha, beta = _fit_line(pairs.d, pairs.g, pairs.weight)
    return _make_scale(pairs.d, pairs.g, pairs.weight, alpha, beta, len(pairs))


def _hypotheses(n: int, cfg: RansacConfig):
    n_combos = n * (n - 1) // 2
    if n_combos <= cfg.max_iterations:
        # fewer distinct 2-subsets than iterations: try them all, in order
        i, j = np.triu_indices(n, k=1)
        return i, j
    rng = np.random.default_rng(cfg.seed)
    i = rng.integers(0, n, size=cfg.max_iterations)
    j = rng.integers(0, n - 1, size=cfg.max_iterations)
    j = j + (j >= i)
    return i, j


def ransac_consensus(pairs: SamplePairs, cfg: RansacConfig) -> tuple[AffineScale, np.ndarray]:
    """RANSAC fit returning the scale and the boolean inlier mask."""
    d, g, w = pairs.d, pairs.g, pairs.weight
    n = d.size
    if n < 2:
        raise DegenerateFit(f"need at least 2 pairs, got {n}")
    if np.ptp(d) == 0:
        raise DegenerateFit("all disparities are identical")
    tau = cfg.inlier_band(g)
    hi, hj = _hypotheses(n, cfg)

    best = None  # (count, rms, iteration, alpha, beta)
    for start in range(0, hi.size, _CHUNK):
        i, j = hi[start:start + _CHUNK], hj[start:start + _CHUNK]
        dd = d[j] - d[i]
        usable = dd != 0
        if not np.any(usable):
            continue
        idx = np.flatnonzero(usable) + start
        i, j, dd = i[usable], j[usable], dd[usable]
        a = (g[j] - g[i]) / dd
        b = g[i] - a * d[i]
        res = np.abs(g[None, :] - (a[:, None] * d[None, :] + b[:, None]))
        inl = res <= tau
        count = inl.sum(axis=1)
        rms = np.sqrt(np.where(inl, res * res, 0.0).sum(axis=1) / np.maximum(count, 1))
        # most inliers, then lowest inlier rms, then earliest iteration
        k = np.lexsort((idx, rms, -count))[0]
        cand = (int(count[k]), float(rms[k]), int(idx[k]), float(a[k]), float(b[k]))
        if best is None or (-cand[0], cand[1], cand[2]) < (-best[0], best[1], best[2]):
            best = cand
    if best is None:
        raise DegenerateFit("every sampled pair had identical disparities")

    _, _, _, alpha, beta = best
    mask = np.abs(g - (alpha * d + beta)) <= tau
    if mask.sum() < 2:
        raise AllOutliers(f"best consensus set has {int(mask.sum())} members")
    if cfg.refit_on_inliers:
        try:
            alpha, beta = _fit_line(d[mask], g[mask], w[mask])
        except DegenerateFit:
            pass
    scale = _make_scale(d[mask], g[mask], w[mask], alpha, beta, n)
    return scale, mask


def fit_affine_ransac(pairs: SamplePairs, cfg: RansacConfig | None = None) -> AffineScale:
    """Robust 2-point RANSAC line fit; deterministic for a given seed.

    ``r_squared`` and ``residual_rms`` describe the final line on its inlier set.
    """
    return ransac_consensus(pairs, cfg or RansacConfig())[0]


def scale_only_fallback(pairs: SamplePairs, base: AffineScale | None = None) -> AffineScale:
    """Offset-free fit: alpha is the weighted median of g/d over pairs with d > 0."""
    pos = pairs.d > 0
    if not np.any(pos & (pairs.weight > 0)):
        raise DegenerateFit("no pair with positive disparity for a scale-only fit")
    ratio = pairs.g[pos] / pairs.d[pos]
    alpha = _weighted_median(ratio, pairs.weight[pos])
    flags = tuple(base.flags) if base is not None else ()
    if NON_PHYSICAL not in flags:
        flags += (NON_PHYSICAL,)
    flags += (SCALE_ONLY_FALLBACK,)
    r2, rms = _line_stats(pairs.d, pairs.g, pairs.weight, alpha, 0.0)
    return AffineScale(float(alpha), 0.0, int(pos.sum()), len(pairs), r2, rms, flags)


def _weighted_median(x: np.ndarray, w: np.ndarray) -> float:
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    cw = np.cumsum(w)
    k = int(np.searchsorted(cw, 0.5 * cw[-1]))
    return float(x[min(k, x.size - 1)])


def apply_scale(disparity: RasterMap, scale: AffineScale, depth_cap=OUTDOOR_CAP) -> RasterMap:
    """Turn a disparity map into metric depth, clamped to ``depth_cap``.

    Pixels whose inverse depth falls at or below ``1/max`` (including
    negative values) become ``max``; those at or above ``1/min`` become ``min``.
    """
    lo, hi = float(depth_cap[0]), float(depth_cap[1])
    if not 0 < lo < hi:
        raise InvalidConfig(f"invalid depth cap {depth_cap}")
    g = scale.alpha * disparity.values + scale.beta
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = np.where(g <= 1.0 / hi, hi, np.where(g >= 1.0 / lo, lo, 1.0 / g))
    valid = disparity.valid.copy()
    depth = np.where(valid, depth, 0.0)
    return RasterMap(depth, valid, MapKind.METRIC_DEPTH)


def rescale_image(
    disparity: RasterMap,
    refs,
    cfg: RansacConfig | None = None,
    depth_cap=OUTDOOR_CAP,
    use_ransac: bool = True,
    fallback: bool = True,
) -> tuple[RasterMap, AffineScale]:
    """Pair, fit and apply in one call.

    ``use_ransac=False`` swaps the robust fit for plain least squares. When the
    fit comes out with alpha <= 0 and ``fallback`` is set, a scale-only fit is
    applied instead and flagged.
    """
    pairs = build_pairs(disparity, refs)
    if use_ransac:
        scale = fit_affine_ransac(pairs, cfg or RansacConfig())
    else:
        scale = fit_affine_lsq(pairs)
    if fallback and not scale.is_physical:
        scale = scale_only_fallback(pairs, scale)
    return apply_scale(disparity, scale, depth_cap), scale


def mean_scale(scales) -> AffineScale:
    """Arithmetic mean of alpha and beta over the physically valid fits."""
    scales = [s for s in scales if s.is_physical and math.isfinite(s.alpha)]
    if not scales:
        raise DegenerateFit("no valid scale to average")
    alpha = math.fsum(s.alpha for s in scales) / len(scales)
    beta = math.fsum(s.beta for s in scales) / len(scales)
    return AffineScale(
        alpha,
        beta,
        inlier_count=sum(s.inlier_count for s in scales),
        total_count=sum(s.total_count for s in scales),
        r_squared=float("nan"),
        residual_rms=float("nan"),
        flags=("mean_of_%d" % len(scales),),
    )


def fixed_rescale(disparity: RasterMap, fixed: AffineScale, depth_cap=OUTDOOR_CAP) -> RasterMap:
    """Static rescaling with shared constants (the per-dataset ablation)."""
    return apply_scale(disparity, fixed, depth_cap)


class AffineRescaler(RegressorMixin, BaseEstimator):
    """Estimator wrapper around the robust inverse-depth line fit.

    ``fit(X, y)`` takes disparity samples ``X`` (shape ``(n,)`` or ``(n, 1)``)
    and metric inverse depths ``y``; ``predict`` returns inverse depth and
    ``transform`` maps a whole disparity raster to metric depth.

    Parameters
    ----------
    use_ransac : bool
        Plain weighted least squares when False.
    max_iterations, threshold_mode, threshold, refit_on_inliers :
        Forwarded to :class:`RansacConfig`.
    random_state : int
        RANSAC seed.
    depth_cap : tuple of float
        ``(min_m, max_m)`` clamp used by :meth:`transform`.
    fallback : bool
        Replace a non-physical fit (alpha <= 0) by a scale-only fit.

    Attributes
    ----------
    alpha_, beta_ : float
    scale_ : AffineScale
    inlier_mask_ : ndarray of bool
    """

    def __init__(
        self,
        use_ransac=True,
        max_iterations=1000,
        threshold_mode="relative",
        threshold=0.05,
        refit_on_inliers=True,
        random_state=0,
        depth_cap=OUTDOOR_CAP,
        fallback=True,
    ):
        self.use_ransac = use_ransac
        self.max_iterations = max_iterations
        self.threshold_mode = threshold_mode
        self.threshold = threshold
        self.refit_on_inliers = refit_on_inliers
        self.random_state = random_state
        self.depth_cap = depth_cap
        self.fallback = fallback

    def _ransac_config(self) -> RansacConfig:
        return RansacConfig(
            max_iterations=self.max_iterations,
            threshold_mode=self.threshold_mode,
            threshold=self.threshold,
            seed=self.random_state,
            refit_on_inliers=self.refit_on_inliers,
        )

    def fit(self, X, y, sample_weight=None):
        X = check_array(X, ensure_2d=False)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError(f"expected a single disparity feature, got {X.shape[1]}")
            X = X[:, 0]
        y = check_array(y, ensure_2d=False)
        check_consistent_length(X, y)
        pairs = SamplePairs(X, y, sample_weight)
        return self._fit_pairs(pairs)

    def fit_refpoints(self, disparity: RasterMap, refs):
        """Fit directly from a disparity raster and reference points."""
        return self._fit_pairs(build_pairs(disparity, refs))

    def _fit_pairs(self, pairs: SamplePairs):
        if self.use_ransac:
            scale, mask = ransac_consensus(pairs, self._ransac_config())
        else:
            scale, mask = fit_affine_lsq(pairs), np.ones(len(pairs), dtype=bool)
        if self.fallback and not scale.is_physical:
            scale = scale_only_fallback(pairs, scale)
        self.scale_ = scale
        self.alpha_ = scale.alpha
        self.beta_ = scale.beta
        self.inlier_mask_ = mask
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "scale_")
        X = check_array(X, ensure_2d=False)
        if X.ndim == 2:
            X = X[:, 0]
        return self.alpha_ * X + self.beta_

    def transform(self, disparity: RasterMap) -> RasterMap:
        check_is_fitted(self, "scale_")
        return apply_scale(disparity, self.scale_, self.depth_cap)

    def fit_transform(self, disparity: RasterMap, refs) -> RasterMap:
        return self.fit_refpoints(disparity, refs).transform(disparity)

    def with_scale(self, scale: AffineScale) -> AffineRescaler:
        """A copy that applies a fixed, externally chosen scale."""
        est = clone(self)
        est.scale_ = scale
        est.alpha_, est.beta_ = scale.alpha, scale.beta
        est.inlier_mask_ = np.zeros(0, dtype=bool)
        est.n_features_in_ = 1
        return est

