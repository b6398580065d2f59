import json
import subprocess
import sys

import numpy as np
import pytest

from depthrescale import io
from depthrescale.cli import main
from depthrescale.core import MapKind, RasterMap

STEREO = ["--provider", "stereo", "--max-disp", "48", "--stride", "2"]


def truth(manifest):
    return json.loads((manifest.parent / "truth.json").read_text())


def test_rescale_count_contract(synth_manifest, tmp_path):
    rc = main(["rescale", "--manifest", str(synth_manifest), "--out", str(tmp_path),
               "--provider", "lidar:16", "--png16"])
    assert rc == 0
    assert len(list(tmp_path.glob("*_depth.pfm"))) == 3
    assert len(list(tmp_path.glob("*_depth.png"))) == 3
    scales = sorted(tmp_path.glob("*_scale.json"))
    assert len(scales) == 3
    t = truth(synth_manifest)
    for p in scales:
        name = p.name[: -len("_scale.json")]
        s = json.loads(p.read_text())
        assert s["alpha"] == pytest.approx(t[name]["alpha"], rel=1e-6)
        assert s["beta"] == pytest.approx(t[name]["beta"], abs=1e-6)


@pytest.mark.parametrize("provider", [STEREO, ["--provider", "sfm"]])
def test_rescale_other_providers(synth_manifest, tmp_path, provider):
    rc = main(["rescale", "--manifest", str(synth_manifest), "--out", str(tmp_path), *provider])
    assert rc == 0
    t = truth(synth_manifest)
    for p in tmp_path.glob("*_scale.json"):
        s = json.loads(p.read_text())
        assert s["alpha"] == pytest.approx(t[p.name[:-11]]["alpha"], rel=0.05)


def test_sfm_missing_pose_is_validation_error(tmp_path):
    values = np.ones((4, 4))
    io.save_pfm(RasterMap(values, values > 0, MapKind.AFFINE_DISPARITY), tmp_path / "d.pfm")
    (tmp_path / "m.txt").write_text("1 1 1 1\n")
    (tmp_path / "m.ini").write_text("[a]\ndisparity = d.pfm\nmatches = m.txt\n"
                                    "fx = 4\nfy = 4\ncx = 1\ncy = 1\nwidth = 4\nheight = 4\n")
    out = tmp_path / "out"
    rc = main(["rescale", "--manifest", str(tmp_path / "m.ini"), "--out", str(out), "--provider", "sfm"])
    assert rc == 1
    assert not out.exists()


def test_partial_and_total_failure(synth_manifest, tmp_path):
    root = synth_manifest.parent
    (root / "corrupt.png").write_bytes(b"\x89PNG\r\n\x1a\n garbage")
    text = synth_manifest.read_text()
    (root / "partial.ini").write_text(text.replace("frame_0000_gt.png", "corrupt.png"))
    out = tmp_path / "partial"
    assert main(["rescale", "--manifest", str(root / "partial.ini"), "--out", str(out)]) == 2
    assert len(list(out.glob("*_depth.pfm"))) == 2
    assert (out / "failures.txt").read_text().startswith("frame_0000\t")

    total = text
    for i in range(3):
        total = total.replace(f"frame_{i:04d}_gt.png", "corrupt.png")
    (root / "total.ini").write_text(total)
    assert main(["rescale", "--manifest", str(root / "total.ini"), "--out", str(tmp_path / "t")]) == 3


def test_usage_errors(synth_manifest, tmp_path):
    assert main([]) == 1
    assert main(["rescale", "--manifest", str(synth_manifest)]) == 1
    assert main(["rescale", "--manifest", str(synth_manifest), "--out", str(tmp_path),
                 "--provider", "radar"]) == 1
    assert main(["rescale", "--manifest", str(tmp_path / "none.ini"), "--out", str(tmp_path)]) == 1


def test_fixed_scale_and_no_ransac(synth_manifest, tmp_path):
    rc = main(["rescale", "--manifest", str(synth_manifest), "--out", str(tmp_path / "f"),
               "--fixed-scale", "2,0.1"])
    assert rc == 0
    s = json.loads((tmp_path / "f" / "frame_0000_scale.json").read_text())
    assert (s["alpha"], s["beta"], s["flags"]) == (2.0, 0.1, ["fixed"])
    rc = main(["rescale", "--manifest", str(synth_manifest), "--out", str(tmp_path / "l"), "--no-ransac"])
    assert rc == 0


def test_eval_and_ablate(synth_manifest, tmp_path):
    pred = tmp_path / "pred"
    assert main(["rescale", "--manifest", str(synth_manifest), "--out", str(pred)]) == 0
    out = tmp_path / "eval"
    assert main(["eval", "--manifest", str(synth_manifest), "--out", str(out), "--pred-dir", str(pred)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["delta1"] == 1.0 and len(rep["per_image"]) == 3
    assert "AbsRel" in (out / "report.txt").read_text()

    ab = tmp_path / "ablate"
    assert main(["ablate", "--manifest", str(synth_manifest), "--out", str(ab)]) == 0
    data = json.loads((ab / "ablation.json").read_text())
    assert set(data) >= {"ransac", "lsq", "fixed", "fixed_scale"}
    lines = (ab / "ablation.txt").read_text().splitlines()
    assert len(lines) == 5


def test_standalone_providers(synth_manifest, tmp_path):
    assert main(["simulate", "--manifest", str(synth_manifest), "--out", str(tmp_path / "s"),
                 "--beams", "4"]) == 0
    refs = io.load_refpoints(tmp_path / "s" / "frame_0000_refpoints.txt")
    assert len({r.v for r in refs}) == 4
    assert main(["sgm", "--manifest", str(synth_manifest), "--out", str(tmp_path / "g"), *STEREO[2:]]) == 0
    assert len(list((tmp_path / "g").glob("*_sgm.pfm"))) == 3
    assert main(["triangulate", "--manifest", str(synth_manifest), "--out", str(tmp_path / "t")]) == 0
    assert len(list((tmp_path / "t").glob("*_refpoints.txt"))) == 3


def test_gate_rejection_is_record_failure(synth_manifest, tmp_path):
    rc = main(["triangulate", "--manifest", str(synth_manifest), "--out", str(tmp_path),
               "--min-translation", "50"])
    assert rc == 3
    assert "GateRejected" in (tmp_path / "failures.txt").read_text()


def test_jobs_do_not_change_output(synth_manifest, tmp_path):
    for jobs in ("1", "3"):
        assert main(["rescale", "--manifest", str(synth_manifest), "--out", str(tmp_path / jobs),
                     "--jobs", jobs]) == 0
    for p in (tmp_path / "1").iterdir():
        assert p.read_bytes() == (tmp_path / "3" / p.name).read_bytes()


def test_console_script_module(synth_manifest, tmp_path):
    r = subprocess.run([sys.executable, "-m", "depthrescale.cli", "synth", "--out", str(tmp_path / "x"),
                        "--n-images", "1"], capture_output=True, text=True)
    assert r.returncode == 0
    assert (tmp_path / "x" / "manifest.ini").exists()
