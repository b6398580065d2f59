"""Command-line entry point: ``depthrescale <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 some records failed,
3 every record failed. Set ``RESCALE_LOG`` (DEBUG, INFO, WARNING, ...) for
log verbosity.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import io
from .core import MapKind
from .exceptions import RescaleError
from .lidar import BeamConfig, simulate_beams
from .metrics import PROFILES, EvalConfig, evaluate_dataset, format_table
from .pipeline import ProviderSpec, RunSettings, record_seed, reference_points, run_records, stereo_disparity
from .rescale import (
    INDOOR_CAP,
    OUTDOOR_CAP,
    AffineScale,
    RansacConfig,
    fixed_rescale,
    mean_scale,
    rescale_image,
)
from .sfm import GateConfig, GateMode
from .stereo import SgmConfig, StereoRig, stereo_refpoints
from .synth import SynthSpec, write_dataset

log = logging.getLogger("depthrescale")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_TOTAL = 0, 1, 2, 3
CAPS = {"indoor": INDOOR_CAP, "outdoor": OUTDOOR_CAP, "custom": OUTDOOR_CAP}


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return a, b


def _add_common(p: argparse.ArgumentParser, provider=True):
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--profile", choices=sorted(PROFILES), default=None,
                   help="evaluation/depth-cap profile; defaults to the manifest's")
    if provider:
        p.add_argument("--provider", default="lidar",
                       help="lidar[:B] | stereo | sfm | external (default lidar)")
        p.add_argument("--beams", type=int, default=None)
        p.add_argument("--ransac-iters", type=int, default=1000)
        p.add_argument("--inlier-frac", type=float, default=0.05,
                       help="inlier band as a fraction of median inverse depth")
        p.add_argument("--no-ransac", action="store_true", help="plain least squares")
        p.add_argument("--fixed-scale", type=_pair, default=None, metavar="ALPHA,BETA")
        p.add_argument("--depth-cap", type=_pair, default=None, metavar="MIN,MAX")
        p.add_argument("--stride", type=int, default=4, help="stereo reference-point grid stride")
        p.add_argument("--max-disp", type=int, default=128, help="SGM disparity search range")
        p.add_argument("--gate-mode", choices=[m.value for m in GateMode],
                       default=GateMode.TRANSLATION_ONLY.value)
        p.add_argument("--min-translation", type=float, default=1.5)
        p.add_argument("--min-rotation", type=float, default=5.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthrescale",
        description="Recover metric depth from affine-invariant disparity with sparse metric anchors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rescale", help="fit and apply (alpha, beta) per record")
    _add_common(p)
    p.add_argument("--png16", action="store_true", help="also write 16-bit PNG depth")

    p = sub.add_parser("eval", help="evaluate depth maps against ground truth")
    _add_common(p, provider=False)
    p.add_argument("--pred-dir", type=Path, default=None,
                   help="directory holding <record>_depth.pfm (else each record's pred_depth)")

    p = sub.add_parser("ablate", help="per-image RANSAC vs plain LSQ vs fixed mean scale")
    _add_common(p)

    p = sub.add_parser("simulate", help="write simulated LiDAR reference points")
    _add_common(p, provider=False)
    p.add_argument("--beams", type=int, default=16)
    p.add_argument("--max-points-per-row", type=int, default=None)

    p = sub.add_parser("sgm", help="run SGM stereo and write disparity + reference points")
    _add_common(p)

    p = sub.add_parser("triangulate", help="write SfM reference points")
    _add_common(p)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-images", type=int, default=3)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--near", type=float, default=2.0)
    p.add_argument("--far", type=float, default=10.0)
    p.add_argument("--disparity-noise", type=float, default=0.0)
    p.add_argument("--moving-frac", type=float, default=0.1)
    return parser


def _configure_logging():
    level = os.environ.get("RESCALE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _settings(args, manifest: io.DatasetManifest, provider_name: str | None = None) -> RunSettings:
    profile = args.profile or manifest.profile
    cap = args.depth_cap or CAPS.get(profile, OUTDOOR_CAP)
    provider = ProviderSpec.parse(provider_name or args.provider, args.beams)
    return RunSettings(
        provider=provider,
        ransac=RansacConfig(max_iterations=args.ransac_iters, threshold=args.inlier_frac, seed=args.seed),
        depth_cap=cap,
        sgm=SgmConfig(max_disparity=args.max_disp),
        stereo_stride=args.stride,
        gate=GateConfig(args.min_translation, args.min_rotation, GateMode(args.gate_mode)),
        seed=args.seed,
    )


def _eval_config(args, manifest) -> EvalConfig:
    return PROFILES.get(args.profile or manifest.profile, PROFILES["custom"])


def _finish(results, out: Path) -> int:
    failures = [(rec.name, exc) for rec, _, exc in results if exc is not None]
    if failures:
        with open(out / "failures.txt", "w", encoding="utf-8") as f:
            for name, exc in failures:
                f.write(f"{name}\t{type(exc).__name__}\t{exc}\n")
    if not failures:
        return EXIT_OK
    return EXIT_TOTAL if len(failures) == len(results) else EXIT_PARTIAL


def _record_ransac(settings: RunSettings, index: int) -> RansacConfig:
    r = settings.ransac
    return RansacConfig(r.max_iterations, r.threshold_mode, r.threshold,
                        record_seed(settings.seed, index), r.refit_on_inliers)


def _fixed_scale(pair) -> AffineScale:
    return AffineScale(pair[0], pair[1], 0, 0, float("nan"), float("nan"), ("fixed",))


def cmd_rescale(args) -> int:
    provider = ProviderSpec.parse(args.provider, args.beams)
    manifest = io.load_manifest(args.manifest, None if args.fixed_scale else provider.name)
    settings = _settings(args, manifest)
    args.out.mkdir(parents=True, exist_ok=True)
    fixed = _fixed_scale(args.fixed_scale) if args.fixed_scale else None

    def work(i, rec):
        disp = io.load_raster(rec.disparity, MapKind.AFFINE_DISPARITY)
        if fixed is not None:
            depth, scale = fixed_rescale(disp, fixed, settings.depth_cap), fixed
        else:
            refs = reference_points(rec, settings, i)
            depth, scale = rescale_image(disp, refs, _record_ransac(settings, i),
                                         settings.depth_cap, use_ransac=not args.no_ransac)
        io.save_pfm(depth, args.out / f"{rec.name}_depth.pfm")
        if args.png16:
            io.save_depth_png16(depth, args.out / f"{rec.name}_depth.png")
        io.write_json(scale.to_dict(), args.out / f"{rec.name}_scale.json")
        log.info("%s: alpha=%.6g beta=%.6g inliers=%d/%d", rec.name, scale.alpha, scale.beta,
                 scale.inlier_count, scale.total_count)
        return scale

    return _finish(run_records(work, manifest.records, args.jobs), args.out)


def cmd_eval(args) -> int:
    need = ("gt_depth",) if args.pred_dir else ("gt_depth", "pred_depth")
    manifest = io.load_manifest(args.manifest, None, need)
    cfg = _eval_config(args, manifest)
    args.out.mkdir(parents=True, exist_ok=True)

    def work(i, rec):
        path = args.pred_dir / f"{rec.name}_depth.pfm" if args.pred_dir else rec.pred_depth
        pred = io.load_raster(path, MapKind.METRIC_DEPTH)
        gt = io.load_raster(rec.gt_depth, MapKind.METRIC_DEPTH)
        return pred, gt

    results = run_records(work, manifest.records, args.jobs)
    ok = [(rec, res) for rec, res, exc in results if exc is None]
    if ok:
        report = evaluate_dataset([r for _, r in ok], cfg,
                                  extras=[{"name": rec.name} for rec, _ in ok])
        io.write_json(report.to_dict(), args.out / "report.json")
        (args.out / "report.txt").write_text(format_table([("depth", report)]), encoding="utf-8")
        sys.stdout.write(format_table([("depth", report)]))
    return _finish(results, args.out)


def cmd_ablate(args) -> int:
    provider = ProviderSpec.parse(args.provider, args.beams)
    manifest = io.load_manifest(args.manifest, provider.name, ("disparity", "gt_depth"))
    settings = _settings(args, manifest)
    cfg = _eval_config(args, manifest)
    args.out.mkdir(parents=True, exist_ok=True)

    def work(i, rec):
        disp = io.load_raster(rec.disparity, MapKind.AFFINE_DISPARITY)
        gt = io.load_raster(rec.gt_depth, MapKind.METRIC_DEPTH)
        refs = reference_points(rec, settings, i)
        d_r, s_r = rescale_image(disp, refs, _record_ransac(settings, i), settings.depth_cap)
        d_l, s_l = rescale_image(disp, refs, None, settings.depth_cap, use_ransac=False)
        return disp, gt, (d_r, s_r), (d_l, s_l)

    results = run_records(work, manifest.records, args.jobs)
    ok = [(rec, res) for rec, res, exc in results if exc is None]
    if not ok:
        return _finish(results, args.out)
    if args.fixed_scale:
        fixed = _fixed_scale(args.fixed_scale)
    else:
        fixed = mean_scale([res[2][1] for _, res in ok])
    names = [{"name": rec.name} for rec, _ in ok]
    variants = {
        "ransac": evaluate_dataset(
            [(res[2][0], res[1]) for _, res in ok], cfg,
            [dict(n, **res[2][1].to_dict()) for n, (_, res) in zip(names, ok)]),
        "lsq": evaluate_dataset(
            [(res[3][0], res[1]) for _, res in ok], cfg,
            [dict(n, **res[3][1].to_dict()) for n, (_, res) in zip(names, ok)]),
        "fixed": evaluate_dataset(
            [(fixed_rescale(res[0], fixed, settings.depth_cap), res[1]) for _, res in ok], cfg, names),
    }
    rows = [("per-image RANSAC", variants["ransac"]), ("per-image LSQ (no RANSAC)", variants["lsq"]),
            ("fixed mean scale", variants["fixed"])]
    table = format_table(rows)
    payload = {k: v.to_dict() for k, v in variants.items()}
    payload["fixed_scale"] = fixed.to_dict()
    payload["provider"] = str(provider)
    io.write_json(payload, args.out / "ablation.json")
    (args.out / "ablation.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return _finish(results, args.out)


def cmd_simulate(args) -> int:
    manifest = io.load_manifest(args.manifest, "lidar", need=())
    cap = CAPS.get(args.profile or manifest.profile, OUTDOOR_CAP)
    args.out.mkdir(parents=True, exist_ok=True)

    def work(i, rec):
        gt = io.load_raster(rec.gt_depth, MapKind.METRIC_DEPTH)
        cfg = BeamConfig(args.beams, args.max_points_per_row, (1e-3, cap[1]), record_seed(args.seed, i))
        refs = simulate_beams(gt, cfg)
        io.save_refpoints(refs, args.out / f"{rec.name}_refpoints.txt")
        return len(refs)

    return _finish(run_records(work, manifest.records, args.jobs), args.out)


def cmd_sgm(args) -> int:
    manifest = io.load_manifest(args.manifest, "stereo", need=())
    settings = _settings(args, manifest, "stereo")
    args.out.mkdir(parents=True, exist_ok=True)

    def work(i, rec):
        disp = stereo_disparity(rec, settings)
        io.save_pfm(disp, args.out / f"{rec.name}_sgm.pfm")
        io.save_disparity_png16(disp, args.out / f"{rec.name}_sgm.png")
        rig = StereoRig(rec.intrinsics, rec.baseline_m)
        refs = stereo_refpoints(disp, rig, settings.stereo_stride, settings.sgm.min_disparity_px)
        io.save_refpoints(refs, args.out / f"{rec.name}_refpoints.txt")
        return len(refs)

    return _finish(run_records(work, manifest.records, args.jobs), args.out)


def cmd_triangulate(args) -> int:
    manifest = io.load_manifest(args.manifest, "sfm", need=())
    settings = _settings(args, manifest, "sfm")
    args.out.mkdir(parents=True, exist_ok=True)

    def work(i, rec):
        refs = reference_points(rec, settings, i)
        io.save_refpoints(refs, args.out / f"{rec.name}_refpoints.txt")
        return len(refs)

    return _finish(run_records(work, manifest.records, args.jobs), args.out)


def cmd_synth(args) -> int:
    spec = SynthSpec(n_images=args.n_images, height=args.height, width=args.width, near=args.near,
                     far=args.far, disparity_noise=args.disparity_noise,
                     moving_frac=args.moving_frac, seed=args.seed)
    path = write_dataset(args.out, spec)
    sys.stdout.write(f"{path}\n")
    return EXIT_OK


COMMANDS = {
    "rescale": cmd_rescale,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "simulate": cmd_simulate,
    "sgm": cmd_sgm,
    "triangulate": cmd_triangulate,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (RescaleError, ValueError, OSError) as exc:
        sys.stderr.write(f"depthrescale {args.command}: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
