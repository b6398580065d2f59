"""Self-consistent synthetic scenes for tests, demos and the ``synth`` command.

Ground truth is a slanted plane (inverse depth affine in pixel coordinates)
with a fronto-parallel box in front of it. The affine disparity is built
exactly as ``d = (1/D - beta0) / alpha0`` so a noiseless fit must recover
``(alpha0, beta0)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io
from .core import (
    CameraIntrinsics,
    MapKind,
    RasterMap,
    ReferencePoint,
    RigidPose,
    backproject,
    compose_pose,
    invert_pose,
    project_points,
    rotation_from_axis_angle,
    transform_point,
)
from .sfm import Correspondence


def default_intrinsics(height: int, width: int) -> CameraIntrinsics:
    f = 0.8 * width
    return CameraIntrinsics(f, f, (width - 1) / 2, (height - 1) / 2, width, height)


def make_depth_scene(height=48, width=64, near=2.0, far=10.0, rng=None, box=True) -> RasterMap:
    """Slanted plane spanning ``[near, far]`` meters plus an optional box."""
    rng = np.random.default_rng(rng)
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    # far at the top of the image, near at the bottom, mild left-right tilt
    tilt = rng.uniform(-0.2, 0.2)
    t = v / max(height - 1, 1) + tilt * (u / max(width - 1, 1) - 0.5)
    t = (t - t.min()) / (t.max() - t.min())
    inv = 1.0 / far + t * (1.0 / near - 1.0 / far)
    depth = 1.0 / inv
    if box:
        bh, bw = height // 4, width // 5
        y0 = int(rng.integers(0, height - bh))
        x0 = int(rng.integers(0, width - bw))
        box_depth = rng.uniform(near, 0.5 * (near + far))
        region = depth[y0:y0 + bh, x0:x0 + bw]
        depth[y0:y0 + bh, x0:x0 + bw] = np.minimum(region, box_depth)
    return RasterMap(depth, np.ones_like(depth, dtype=bool), MapKind.METRIC_DEPTH)


def affine_disparity(gt: RasterMap, alpha0: float, beta0: float) -> RasterMap:
    d = (1.0 / np.where(gt.valid, gt.values, 1.0) - beta0) / alpha0
    return RasterMap(d, gt.valid, MapKind.AFFINE_DISPARITY)


def perturb_refpoints(refs, rng, noise_rel=0.0, outlier_frac=0.0, junk_g=(0.01, 1.0)):
    """Multiplicative Gaussian noise on inverse depth, then junk replacements.

    Returns ``(refs, is_outlier)``.
    """
    rng = np.random.default_rng(rng)
    refs = list(refs)
    n = len(refs)
    g = np.array([1.0 / r.depth for r in refs])
    if noise_rel > 0:
        g = g * (1.0 + noise_rel * rng.standard_normal(n))
        g = np.maximum(g, 1e-6)
    n_out = int(round(outlier_frac * n))
    is_out = np.zeros(n, dtype=bool)
    if n_out:
        idx = rng.choice(n, size=n_out, replace=False)
        is_out[idx] = True
        g[idx] = rng.uniform(junk_g[0], junk_g[1], size=n_out)
    out = [ReferencePoint(r.u, r.v, float(1.0 / gi), r.source, r.weight) for r, gi in zip(refs, g)]
    return out, is_out


def make_texture(height, width, rng=None, sigma=0.8) -> np.ndarray:
    rng = np.random.default_rng(rng)
    tex = ndimage.gaussian_filter(rng.uniform(0, 255, size=(height, width)), sigma)
    tex = (tex - tex.min()) / (np.ptp(tex) + 1e-12) * 255.0
    return tex


def shifted_pair(height, width, shift: int, rng=None):
    """Rectified pair of one textured fronto-parallel plane at integer disparity."""
    tex = np.rint(make_texture(height, width + shift, rng))
    # right[y, x] == left[y, x + shift]
    return tex[:, :width], tex[:, shift:shift + width]


def render_stereo(gt: RasterMap, K: CameraIntrinsics, baseline_m: float, rng=None):
    """Left texture and a right view warped with the true disparity."""
    H, W = gt.shape
    tex = make_texture(H, W, rng)
    disp = K.fx * baseline_m / gt.values
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    right = ndimage.map_coordinates(tex, [ys, xs + disp], order=1, mode="nearest")
    return np.rint(tex), np.rint(right)


def random_relative_pose(rng, baseline_m=2.0, max_rot_deg=5.0) -> RigidPose:
    """Frame A -> frame B transform with a mostly forward baseline."""
    rng = np.random.default_rng(rng)
    axis = rng.normal(size=3)
    R = rotation_from_axis_angle(axis, rng.uniform(0, max_rot_deg))
    direction = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.2, 0.2), -1.0])
    # camera B sits ahead of A: a static point comes closer, so t_z < 0 in B
    t = baseline_m * direction / np.linalg.norm(direction)
    return RigidPose(R, t)


def make_correspondences(gt: RasterMap, K: CameraIntrinsics, rel: RigidPose, n_points: int,
                         rng=None, moving_frac=0.0, move_m=(1.0, 3.0)):
    """Exact two-view matches of ground-truth pixels, some on moving objects.

    Returns ``(matches, points_b, is_moving)``; ``points_b`` are the true
    frame-B positions of the matched pixels.
    """
    rng = np.random.default_rng(rng)
    H, W = gt.shape
    vs, us = np.nonzero(gt.valid)
    pick = rng.choice(vs.size, size=min(4 * n_points, vs.size), replace=False)
    u = us[pick] + rng.uniform(-0.5, 0.5, pick.size)
    v = vs[pick] + rng.uniform(-0.5, 0.5, pick.size)
    u, v = np.clip(u, 0, W - 1), np.clip(v, 0, H - 1)
    z = gt.values[vs[pick], us[pick]]
    Xb = backproject(u, v, z, K)
    Xa = transform_point(invert_pose(rel), Xb)
    moving = rng.uniform(size=pick.size) < moving_frac
    if np.any(moving):
        step = rng.normal(size=(int(moving.sum()), 3))
        step *= (rng.uniform(*move_m, size=len(step)) / np.linalg.norm(step, axis=1))[:, None]
        Xa[moving] += step
    uva, keep = project_points(Xa, K, return_mask=True)
    idx = np.flatnonzero(keep)[:n_points]
    matches = [
        Correspondence(float(ua), float(va), float(u[i]), float(v[i]))
        for (ua, va, _), i in zip(uva.tolist(), idx)
    ]
    return matches, Xb[idx], moving[idx]


@dataclass
class SynthSpec:
    n_images: int = 3
    height: int = 48
    width: int = 64
    near: float = 2.0
    far: float = 10.0
    alpha_range: tuple[float, float] = (0.5, 5.0)
    beta_range: tuple[float, float] = (0.0, 0.2)
    disparity_noise: float = 0.0
    baseline_m: float = 0.5
    sfm_baseline_m: float = 2.0
    n_matches: int = 300
    moving_frac: float = 0.1
    seed: int = 0


def write_dataset(out_dir, spec: SynthSpec | None = None) -> Path:
    """Write a complete synthetic dataset and return its manifest path.

    Per image: GT depth (16-bit PNG), affine disparity (PFM), a rectified
    stereo pair, the previous frame's pose and exact correspondences (some on
    moving objects). True ``(alpha0, beta0)`` go to ``truth.json``.
    """
    spec = spec or SynthSpec()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    K = default_intrinsics(spec.height, spec.width)
    manifest = io.DatasetManifest(root=out, profile="custom")
    truth = {}
    world_from_b = RigidPose.identity()
    for i in range(spec.n_images):
        name = f"frame_{i:04d}"
        gt = make_depth_scene(spec.height, spec.width, spec.near, spec.far, rng)
        # quantize to the PNG grid first so the stored GT is exact
        gt = RasterMap(np.rint(gt.values * 256.0) / 256.0, gt.valid, MapKind.METRIC_DEPTH)
        a0 = float(rng.uniform(*spec.alpha_range))
        b0 = float(rng.uniform(*spec.beta_range))
        disp = affine_disparity(gt, a0, b0)
        if spec.disparity_noise > 0:
            noisy = disp.values + spec.disparity_noise * np.std(disp.values) * rng.standard_normal(disp.shape)
            disp = RasterMap(noisy, disp.valid, MapKind.AFFINE_DISPARITY)
        left, right = render_stereo(gt, K, spec.baseline_m, rng)
        rel = random_relative_pose(rng, spec.sfm_baseline_m)
        matches, _, _ = make_correspondences(gt, K, rel, spec.n_matches, rng, spec.moving_frac)
        world_from_a = compose_pose(world_from_b, rel)
        rec = io.ManifestRecord(
            name=name,
            disparity=out / f"{name}_disp.pfm",
            gt_depth=out / f"{name}_gt.png",
            left_image=out / f"{name}_left.png",
            right_image=out / f"{name}_right.png",
            pose=out / f"{name}_poses.txt",
            matches=out / f"{name}_matches.txt",
            intrinsics=K,
            baseline_m=spec.baseline_m,
        )
        io.save_depth_png16(gt, rec.gt_depth)
        io.save_pfm(disp, rec.disparity)
        io.save_image(left, rec.left_image)
        io.save_image(right, rec.right_image)
        # camera-to-world poses of the previous frame (A) then the target (B)
        io.save_poses([world_from_a, world_from_b], rec.pose)
        io.save_matches(matches, rec.matches)
        manifest.records.append(rec)
        truth[name] = {"alpha": a0, "beta": b0}
    path = out / "manifest.ini"
    io.save_manifest(manifest, path)
    io.write_json(truth, out / "truth.json")
    return path
