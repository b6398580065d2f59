import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from depthrescale.core import MapKind, RasterMap, ReferencePoint
from depthrescale.exceptions import AllOutliers, DegenerateFit, EmptyPairs, InvalidConfig
from depthrescale.lidar import BeamConfig, simulate_beams
from depthrescale.rescale import (
    AffineRescaler,
    AffineScale,
    RansacConfig,
    SamplePairs,
    apply_scale,
    build_pairs,
    fit_affine_lsq,
    fit_affine_ransac,
    fixed_rescale,
    mean_scale,
    ransac_consensus,
    rescale_image,
    scale_only_fallback,
)
from depthrescale.synth import affine_disparity, make_depth_scene, perturb_refpoints
from oracles import best_consensus, normal_equations


def _disp(values, valid=None):
    values = np.asarray(values, dtype=float)
    return RasterMap(values, np.ones(values.shape, bool) if valid is None else valid,
                     MapKind.AFFINE_DISPARITY)


def outlier_pairs(seed=7):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.1, 2.0, 100)
    g = 0.5 * d + 0.02
    out = rng.choice(100, 20, replace=False)
    g[out] = rng.uniform(0.01, 1.0, 20)
    return SamplePairs(d, g), out


class TestBuildPairs:
    def test_grid_point(self):
        vals = np.full((3, 3), 0.4)
        p = build_pairs(_disp(vals), [ReferencePoint(1, 1, 2.0)])
        assert p.d.tolist() == [0.4] and p.g.tolist() == [0.5]

    def test_hole_drops_pair(self):
        valid = np.ones((4, 4), bool)
        valid[2, 2] = False
        m = _disp(np.arange(16.0).reshape(4, 4) / 16, valid)
        refs = [ReferencePoint(0, 0, 1.0), ReferencePoint(1.5, 1.5, 2.0), ReferencePoint(3, 3, 4.0)]
        p = build_pairs(m, refs)
        assert len(p) == 2
        np.testing.assert_array_equal(p.d, [0.0, 15 / 16])
        np.testing.assert_array_equal(p.g, [1.0, 0.25])

    def test_empty(self):
        with pytest.raises(EmptyPairs):
            build_pairs(_disp(np.ones((2, 2))), [])
        valid = np.zeros((2, 2), bool)
        with pytest.raises(EmptyPairs):
            build_pairs(_disp(np.ones((2, 2)), valid), [ReferencePoint(0, 0, 1.0)])

    def test_wrong_kind(self):
        m = RasterMap.from_array(np.ones((2, 2)), MapKind.METRIC_DEPTH)
        with pytest.raises(InvalidConfig):
            build_pairs(m, [ReferencePoint(0, 0, 1.0)])


class TestLsq:
    def test_noiseless(self):
        d = np.linspace(0, 1, 7)
        s = fit_affine_lsq(SamplePairs(d, 2 * d + 0.5))
        assert s.alpha == pytest.approx(2, abs=1e-12)
        assert s.beta == pytest.approx(0.5, abs=1e-12)
        assert s.r_squared == pytest.approx(1, abs=1e-12)

    def test_identity(self):
        d = np.array([0.1, 0.4, 0.9])
        s = fit_affine_lsq(SamplePairs(d, d))
        assert s.alpha == pytest.approx(1, abs=1e-12) and s.beta == pytest.approx(0, abs=1e-12)

    def test_noisy_against_normal_equations(self):
        rng = np.random.default_rng(42)
        d = rng.uniform(0.5, 2.0, 100)
        g = 0.8 * d + 0.1 + rng.normal(0, 0.01, 100)
        s = fit_affine_lsq(SamplePairs(d, g))
        a, b = normal_equations(d.tolist(), g.tolist())
        assert s.alpha == pytest.approx(a, rel=1e-10)
        assert s.beta == pytest.approx(b, rel=1e-10)
        assert 0.76 <= s.alpha <= 0.84
        assert 0.08 <= s.beta <= 0.12

    def test_degenerate(self):
        with pytest.raises(DegenerateFit):
            fit_affine_lsq(SamplePairs([1.0], [1.0]))
        with pytest.raises(DegenerateFit):
            fit_affine_lsq(SamplePairs([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]))

    def test_negative_slope_flagged(self):
        s = fit_affine_lsq(SamplePairs([0, 1, 2], [3.0, 2.0, 1.0]))
        assert not s.is_physical and "non_physical" in s.flags

    def test_pair_validation(self):
        with pytest.raises(InvalidConfig):
            SamplePairs([1.0], [0.0])
        with pytest.raises(InvalidConfig):
            SamplePairs([np.inf], [1.0])


class TestRansac:
    def test_noiseless_matches_lsq(self):
        d = np.linspace(0.1, 1, 50)
        p = SamplePairs(d, 2 * d + 0.5)
        r, l = fit_affine_ransac(p), fit_affine_lsq(p)
        assert r.alpha == pytest.approx(l.alpha, abs=1e-9)
        assert r.beta == pytest.approx(l.beta, abs=1e-9)
        assert r.inlier_count == 50

    def test_outliers_against_exhaustive_oracle(self):
        pairs, _ = outlier_pairs()
        cfg = RansacConfig()
        tau = cfg.inlier_band(pairs.g)
        best = best_consensus(pairs.d, pairs.g, tau)
        s = fit_affine_ransac(pairs, cfg)
        assert s.inlier_count >= best - 2
        assert s.inlier_count >= 78
        assert s.alpha == pytest.approx(0.5, rel=0.02)

    def test_two_pairs(self):
        s = fit_affine_ransac(SamplePairs([1.0, 3.0], [0.5, 1.5]))
        assert s.alpha == pytest.approx(0.5) and s.beta == pytest.approx(0.0, abs=1e-15)
        assert s.inlier_count == 2

    def test_tiny_band_keeps_minimal_consensus(self):
        # each hypothesis only keeps the two points it was drawn from
        p = SamplePairs([0, 1, 2], [1.0, 5.0, 2.0])
        cfg = RansacConfig(threshold_mode="absolute", threshold=1e-9)
        s = fit_affine_ransac(p, cfg)
        assert s.inlier_count == 2
        with pytest.raises(DegenerateFit):
            fit_affine_ransac(SamplePairs([1.0], [1.0]))

    def test_all_outliers(self, monkeypatch):
        # a negative band leaves no point inside any hypothesis
        monkeypatch.setattr(RansacConfig, "inlier_band", lambda self, g: -1.0)
        with pytest.raises(AllOutliers):
            fit_affine_ransac(SamplePairs([0.0, 1.0, 2.0], [1.0, 2.0, 3.0]))

    def test_deterministic(self):
        pairs, _ = outlier_pairs(3)
        rng = np.random.default_rng(0)
        big = SamplePairs(np.concatenate([pairs.d, rng.uniform(0, 2, 200)]),
                          np.concatenate([pairs.g, rng.uniform(0.01, 1, 200)]))
        a = fit_affine_ransac(big, RansacConfig(seed=5))
        b = fit_affine_ransac(big, RansacConfig(seed=5))
        assert a == b

    def test_config_validation(self):
        with pytest.raises(InvalidConfig):
            RansacConfig(max_iterations=0)
        with pytest.raises(InvalidConfig):
            RansacConfig(threshold=0)
        with pytest.raises(InvalidConfig):
            RansacConfig(threshold_mode="bogus")

    def test_mask_matches_inliers(self):
        pairs, out = outlier_pairs()
        s, mask = ransac_consensus(pairs, RansacConfig())
        assert mask.sum() == s.inlier_count
        assert not np.any(mask[out] & (np.abs(pairs.g[out] - (0.5 * pairs.d[out] + 0.02)) > 0.05))


class TestApply:
    def test_direct(self):
        out = apply_scale(_disp([[0.4]]), AffineScale(2, 0.2, 2, 2, 1, 0))
        assert out.values[0, 0] == pytest.approx(1.0)
        assert out.kind is MapKind.METRIC_DEPTH

    def test_zero_disparity_cap(self):
        out = apply_scale(_disp([[0.0, -1.0]]), AffineScale(1, 0, 2, 2, 1, 0), (0.1, 80))
        assert out.values.tolist() == [[80.0, 80.0]]
        assert out.valid.all()

    def test_near_cap(self):
        out = apply_scale(_disp([[100.0]]), AffineScale(1, 0, 2, 2, 1, 0), (0.1, 80))
        assert out.values[0, 0] == 0.1

    def test_constant_map(self):
        out = apply_scale(_disp(np.full((3, 4), 0.25)), AffineScale(4, 0, 2, 2, 1, 0))
        np.testing.assert_array_equal(out.values, np.ones((3, 4)))

    def test_invalid_stays_invalid(self):
        valid = np.array([[True, False]])
        out = apply_scale(_disp([[0.5, 0.5]], valid), AffineScale(1, 0, 2, 2, 1, 0))
        assert out.valid.tolist() == [[True, False]]


class TestRescaleImage:
    def scene(self, seed, a0=1.5, b0=0.05):
        gt = make_depth_scene(48, 64, 2, 10, rng=seed)
        return gt, affine_disparity(gt, a0, b0)

    def test_noiseless_recovery(self):
        gt, disp = self.scene(0)
        refs = simulate_beams(gt, BeamConfig(n_beams=16))
        depth, s = rescale_image(disp, refs)
        assert s.alpha == pytest.approx(1.5, abs=1e-6)
        assert s.beta == pytest.approx(0.05, abs=1e-6)
        np.testing.assert_allclose(depth.values, gt.values, rtol=1e-9)

    def test_ten_percent_outliers(self):
        gt, disp = self.scene(1)
        refs = simulate_beams(gt, BeamConfig(n_beams=16))
        refs, _ = perturb_refpoints(refs, 2, outlier_frac=0.1)
        _, s = rescale_image(disp, refs)
        assert s.alpha == pytest.approx(1.5, rel=0.02)

    def test_no_refs(self):
        _, disp = self.scene(0)
        with pytest.raises(EmptyPairs):
            rescale_image(disp, [])

    def test_fallback_on_negative_slope(self):
        disp = _disp([[0.1, 0.2, 0.3]])
        refs = [ReferencePoint(0, 0, 1.0), ReferencePoint(1, 0, 2.0), ReferencePoint(2, 0, 4.0)]
        _, s = rescale_image(disp, refs, use_ransac=False)
        assert "scale_only_fallback" in s.flags and s.beta == 0 and s.alpha > 0
        _, raw = rescale_image(disp, refs, use_ransac=False, fallback=False)
        assert raw.alpha < 0

    def test_apply_round_trip_residuals(self):
        gt, disp = self.scene(4)
        refs = simulate_beams(gt, BeamConfig(n_beams=8))
        refs, _ = perturb_refpoints(refs, 5, noise_rel=0.01)
        depth, s = rescale_image(disp, refs, use_ransac=False, depth_cap=(1e-3, 1e3))
        pairs = build_pairs(disp, refs)
        g_map = 1 / np.array([depth.values[int(r.v), int(r.u)] for r in refs])
        np.testing.assert_allclose(pairs.g - g_map, pairs.g - s.inverse_depth(pairs.d), atol=1e-12)


class TestMeanScale:
    def test_arithmetic(self):
        m = mean_scale([AffineScale(1, 0, 2, 2, 1, 0), AffineScale(3, 0.2, 2, 2, 1, 0)])
        assert (m.alpha, m.beta) == (2.0, 0.1)

    def test_single(self):
        s = AffineScale(1.7, 0.03, 5, 6, 0.9, 0.01)
        m = mean_scale([s])
        assert (m.alpha, m.beta) == (s.alpha, s.beta)

    def test_empty(self):
        with pytest.raises(DegenerateFit):
            mean_scale([])

    def test_five_noisy_fits(self):
        fits = []
        for i in range(5):
            gt = make_depth_scene(rng=i)
            disp = affine_disparity(gt, 2.0, 0.1)
            refs, _ = perturb_refpoints(simulate_beams(gt, BeamConfig()), 10 + i, noise_rel=0.01)
            fits.append(rescale_image(disp, refs)[1])
        m = mean_scale(fits)
        alphas = [f.alpha for f in fits]
        assert m.alpha == pytest.approx(sum(alphas) / 5, rel=1e-12)
        assert min(alphas) <= m.alpha <= max(alphas)

    def test_fixed_rescale_is_apply(self):
        disp = _disp(np.linspace(0.1, 1, 12).reshape(3, 4))
        s = AffineScale(2, 0.1, 2, 2, 1, 0)
        np.testing.assert_array_equal(fixed_rescale(disp, s).values, apply_scale(disp, s).values)


class TestSerialization:
    def test_json_round_trip(self):
        s = AffineScale(1.25, -0.5, 80, 100, 0.97, 0.003, ("x",))
        data = json.loads(s.to_json())
        assert set(data) == {"alpha", "beta", "inlier_count", "total_count", "r_squared",
                             "residual_rms", "flags"}
        assert AffineScale.from_dict(data) == s

    def test_nan_becomes_null(self):
        s = AffineScale(1, 0, 0, 0, float("nan"), float("nan"))
        assert json.loads(s.to_json())["r_squared"] is None
        assert math.isnan(AffineScale.from_dict(s.to_dict()).r_squared)

    def test_scale_only_weighted_median(self):
        p = SamplePairs([1.0, 1.0, 1.0, -1.0], [1.0, 2.0, 3.0, 1.0])
        s = scale_only_fallback(p)
        assert s.alpha == 2.0 and s.beta == 0.0


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 10.0))
    def test_scale_equivariance(self, seed, k):
        rng = np.random.default_rng(seed)
        d = rng.uniform(0.1, 2, 30)
        g = 0.7 * d + 0.05
        a = fit_affine_ransac(SamplePairs(d, g))
        b = fit_affine_ransac(SamplePairs(d, g / k))
        assert b.alpha == pytest.approx(a.alpha / k, rel=1e-9)
        assert b.beta == pytest.approx(a.beta / k, rel=1e-9, abs=1e-12)
        assert b.inlier_count == a.inlier_count

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.2, 5.0), st.floats(-1.0, 1.0))
    def test_disparity_affine_invariance(self, seed, a, b):
        gt = make_depth_scene(24, 32, rng=seed, box=False)
        disp = affine_disparity(gt, 1.3, 0.04)
        disp2 = RasterMap(a * disp.values + b, disp.valid, MapKind.AFFINE_DISPARITY)
        refs = simulate_beams(gt, BeamConfig(n_beams=4))
        cap = (1e-3, 1e3)
        m1, s1 = rescale_image(disp, refs, depth_cap=cap)
        m2, s2 = rescale_image(disp2, refs, depth_cap=cap)
        assert s2.alpha == pytest.approx(s1.alpha / a, rel=1e-9)
        assert s2.beta == pytest.approx(s1.beta - s1.alpha * b / a, abs=1e-9)
        np.testing.assert_allclose(m2.values, m1.values, rtol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_zero_outlier_ransac_equals_lsq(self, seed):
        rng = np.random.default_rng(seed)
        d = rng.uniform(0, 3, int(rng.integers(2, 80)))
        p = SamplePairs(d, 0.3 * d + 0.2)
        r, l = fit_affine_ransac(p), fit_affine_lsq(p)
        assert abs(r.alpha - l.alpha) <= 1e-9 and abs(r.beta - l.beta) <= 1e-9

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_r_squared_bounded(self, seed):
        rng = np.random.default_rng(seed)
        p = SamplePairs(rng.uniform(0, 1, 20), rng.uniform(0.01, 1, 20))
        assert fit_affine_lsq(p).r_squared <= 1.0
        assert fit_affine_ransac(p).r_squared <= 1.0


class TestEstimator:
    def test_params_and_clone(self):
        est = AffineRescaler(threshold=0.1, random_state=3)
        params = est.get_params()
        assert params["threshold"] == 0.1 and params["random_state"] == 3
        c = clone(est)
        assert c.get_params() == params
        est.set_params(use_ransac=False)
        assert not est.use_ransac

    def test_fit_predict_score(self):
        d = np.linspace(0.1, 2, 40)
        y = 1.5 * d + 0.05
        est = AffineRescaler().fit(d.reshape(-1, 1), y)
        assert est.alpha_ == pytest.approx(1.5) and est.beta_ == pytest.approx(0.05)
        np.testing.assert_allclose(est.predict(d), y)
        assert est.score(d.reshape(-1, 1), y) == pytest.approx(1.0)
        assert est.inlier_mask_.all()

    def test_transform_matches_rescale_image(self):
        gt = make_depth_scene(rng=9)
        disp = affine_disparity(gt, 2.5, 0.1)
        refs = simulate_beams(gt, BeamConfig())
        est = AffineRescaler()
        out = est.fit_transform(disp, refs)
        ref_map, ref_scale = rescale_image(disp, refs)
        assert est.scale_ == ref_scale
        np.testing.assert_array_equal(out.values, ref_map.values)

    def test_with_scale(self):
        est = AffineRescaler().with_scale(AffineScale(4, 0, 2, 2, 1, 0))
        out = est.transform(_disp(np.full((2, 2), 0.25)))
        np.testing.assert_array_equal(out.values, np.ones((2, 2)))

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            AffineRescaler().predict([1.0])
