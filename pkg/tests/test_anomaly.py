import json

import numpy as np
import pytest

from sonarsynth.anomaly import (
    AnomalyConfig,
    Prototype,
    anomaly_map,
    anomaly_volume,
    bilinear_resize,
    export_anomaly_volume,
    feature_pyramid,
    otsu_threshold,
    segment_from_anomaly,
    terrain_prototype,
)


def speckle_square_image(seed, size=256, box=(100, 132)):
    """Seeded terrain with a planted bright high-contrast speckle square."""
    rng = np.random.default_rng(seed)
    img = rng.integers(90, 130, size=(size, size)).astype(np.uint8)
    lo, hi = box
    img[lo:hi, lo:hi] = rng.choice([60, 255], size=(hi - lo, hi - lo), p=[0.4, 0.6]).astype(np.uint8)
    return img


class TestFeaturePyramid:
    def test_constant_image_channels(self):
        pyr = feature_pyramid(np.full((32, 32), 0.5), AnomalyConfig(levels=2))
        for feats in pyr:
            assert np.allclose(feats[:, :, 0], 0.5, atol=1e-12)  # local mean
            assert np.allclose(feats[:, :, 1:], 0.0, atol=1e-7)  # std/grad/edges

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(64, 64)).astype(np.uint8)
        a = feature_pyramid(img)
        b = feature_pyramid(img)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa, fb)

    def test_vertical_step_edge_gradient_peak(self):
        img = np.zeros((64, 64))
        img[:, 32:] = 1.0
        feats = feature_pyramid(img, AnomalyConfig(levels=1))[0]
        grad = feats[:, :, 2]
        for row in range(64):
            assert int(np.argmax(grad[row])) in (31, 32)
        # horizontal-derivative channel responds, vertical one stays silent
        assert feats[:, :, 3].max() > 0.1
        assert np.abs(feats[:, :, 5]).max() < 1e-12

    def test_level_shapes_halve(self):
        pyr = feature_pyramid(np.zeros((64, 48)), AnomalyConfig(levels=3))
        assert pyr[0].shape == (64, 48, 7)
        assert pyr[1].shape == (32, 24, 7)
        assert pyr[2].shape == (16, 12, 7)

    def test_too_small_image_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            feature_pyramid(np.zeros((4, 64)), AnomalyConfig(levels=4))

    def test_channel_subset(self):
        pyr = feature_pyramid(np.zeros((16, 16)), AnomalyConfig(levels=1, channels=3))
        assert pyr[0].shape[2] == 3


class TestTerrainPrototype:
    def test_constant_grid_both_modes(self):
        c = np.array([0.3, 0.7, 0.1])
        grid = np.tile(c, (8, 8, 1))
        for mode in ("mean", "trimmed"):
            proto = terrain_prototype([grid], mode=mode)
            assert np.allclose(proto.vectors[0], c, atol=1e-12)

    def test_planted_outliers_trimmed_vs_mean(self):
        # constant terrain features + 5% huge-norm outliers: trimmed(0.1)
        # recovers the clean mean, plain mean does not
        c = np.array([1.0, 2.0, 3.0])
        grid = np.tile(c, (20, 20, 1))
        rng = np.random.default_rng(5)
        flat = grid.reshape(-1, 3)
        n_out = int(0.05 * flat.shape[0])
        idx = rng.choice(flat.shape[0], size=n_out, replace=False)
        flat[idx] = 1e6
        clean_mean = c
        trimmed = terrain_prototype([grid], mode="trimmed", trim_fraction=0.1)
        mean = terrain_prototype([grid], mode="mean")
        assert np.allclose(trimmed.vectors[0], clean_mean, atol=1e-6)
        assert not np.allclose(mean.vectors[0], clean_mean, atol=1.0)

    def test_two_row_mean(self):
        a = np.array([1.0, 4.0])
        b = np.array([3.0, 8.0])
        grid = np.stack([np.tile(a, (2, 1)), np.tile(b, (2, 1))])  # rows a, b
        proto = terrain_prototype([grid], mode="mean")
        assert np.allclose(proto.vectors[0], (a + b) / 2, atol=1e-15)

    def test_trim_fraction_domain(self):
        grid = np.ones((4, 4, 2))
        with pytest.raises(ValueError):
            terrain_prototype([grid], mode="trimmed", trim_fraction=0.7)
        with pytest.raises(ValueError):
            terrain_prototype([grid], mode="median")

    def test_permutation_invariance_mean_mode(self):
        rng = np.random.default_rng(9)
        grid = rng.normal(size=(16, 16, 5))
        flat = grid.reshape(-1, 5)
        shuffled = flat[rng.permutation(flat.shape[0])].reshape(16, 16, 5)
        a = terrain_prototype([grid], mode="mean").vectors
        b = terrain_prototype([shuffled], mode="mean").vectors
        assert np.allclose(a, b, atol=1e-12)


class TestAnomalyMap:
    def test_scaled_prototype_scores_zero(self):
        p = np.array([1.0, 2.0, 3.0])
        feats = np.tile(4.2 * p, (5, 5, 1))
        assert np.allclose(anomaly_map(p, feats), 0.0, atol=1e-12)

    def test_orthogonal_scores_one(self):
        p = np.array([1.0, 0.0])
        feats = np.tile(np.array([0.0, 3.0]), (4, 4, 1))
        assert np.allclose(anomaly_map(p, feats), 1.0, atol=1e-12)

    def test_antiparallel_scores_two(self):
        p = np.array([1.0, 1.0])
        feats = np.tile(-2.0 * p, (3, 3, 1))
        assert np.allclose(anomaly_map(p, feats), 2.0, atol=1e-12)

    def test_zero_norm_positions_score_zero(self):
        p = np.array([1.0, 1.0])
        feats = np.zeros((2, 2, 2))
        feats[0, 0] = p
        scores = anomaly_map(p, feats)
        assert scores[0, 0] == pytest.approx(0.0, abs=1e-12)
        # zero-norm positions are exactly 0 by convention, not NaN
        assert np.all(scores[np.linalg.norm(feats, axis=2) == 0] == 0.0)

    def test_zero_norm_prototype_rejected(self):
        with pytest.raises(ValueError, match="zero norm"):
            anomaly_map(np.zeros(3), np.ones((2, 2, 3)))

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            anomaly_map(np.ones(4), np.ones((2, 2, 3)))

    def test_bounds_on_random_pairs(self):
        rng = np.random.default_rng(2)
        p = rng.normal(size=6)
        feats = rng.normal(size=(200, 200, 6))
        scores = anomaly_map(p, feats)
        assert scores.min() >= 0.0
        assert scores.max() <= 2.0

    def test_scale_invariance_per_position(self):
        rng = np.random.default_rng(3)
        p = rng.normal(size=5)
        feats = rng.normal(size=(32, 32, 5))
        lam = rng.uniform(0.1, 10.0, size=(32, 32, 1))
        a = anomaly_map(p, feats)
        b = anomaly_map(p, feats * lam)
        assert np.allclose(a, b, atol=1e-9)


class TestBilinearResize:
    def test_constant_preserved(self):
        out = bilinear_resize(np.full((7, 5), 3.25), (23, 31))
        assert np.allclose(out, 3.25, atol=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(4)
        src = rng.normal(size=(5, 7))
        oh, ow = 13, 9
        got = bilinear_resize(src, (oh, ow))
        want = np.zeros((oh, ow))
        for r in range(oh):
            for c in range(ow):
                sr = min(max((r + 0.5) * 5 / oh - 0.5, 0.0), 4.0)
                sc = min(max((c + 0.5) * 7 / ow - 0.5, 0.0), 6.0)
                r0, c0 = int(sr), int(sc)
                r1, c1 = min(r0 + 1, 4), min(c0 + 1, 6)
                fr, fc = sr - r0, sc - c0
                want[r, c] = (
                    src[r0, c0] * (1 - fr) * (1 - fc)
                    + src[r0, c1] * (1 - fr) * fc
                    + src[r1, c0] * fr * (1 - fc)
                    + src[r1, c1] * fr * fc
                )
        assert np.allclose(got, want, atol=1e-12)


class TestAnomalyVolume:
    def test_shape(self):
        img = speckle_square_image(seed=0)
        vol = anomaly_volume(img, AnomalyConfig(levels=3))
        assert vol.shape == (256, 256, 3)

    def test_homogeneous_terrain_low_scores(self):
        rng = np.random.default_rng(0)
        img = rng.integers(90, 130, size=(256, 256)).astype(np.uint8)
        vol = anomaly_volume(img)
        assert np.all(vol.mean(axis=(0, 1)) < 0.05)

    def test_planted_square_separation(self):
        img = speckle_square_image(seed=1)
        score = anomaly_volume(img).mean(axis=2)
        inside = score[100:132, 100:132].mean()
        outside = (score.sum() - score[100:132, 100:132].sum()) / (score.size - 32 * 32)
        assert inside >= 2.0 * outside

    def test_bitwise_deterministic(self):
        img = speckle_square_image(seed=2)
        assert np.array_equal(anomaly_volume(img), anomaly_volume(img))

    def test_values_in_bounds(self):
        img = speckle_square_image(seed=3)
        vol = anomaly_volume(img)
        assert vol.min() >= 0.0 and vol.max() <= 2.0


class TestSegmentFromAnomaly:
    def test_zero_volume_empty_mask(self):
        assert segment_from_anomaly(np.zeros((32, 32, 3)), tau=0.1).sum() == 0

    def test_min_blob_removes_isolated_pixel(self):
        vol = np.zeros((16, 16, 1))
        vol[8, 8, 0] = 2.0
        assert segment_from_anomaly(vol, tau=0.5, min_blob=2).sum() == 0
        assert segment_from_anomaly(vol, tau=0.5, min_blob=1).sum() == 1

    def test_blob_filter_8_connectivity(self):
        vol = np.zeros((8, 8, 1))
        vol[2, 2, 0] = vol[3, 3, 0] = 2.0  # diagonal neighbors form one blob
        assert segment_from_anomaly(vol, tau=0.5, min_blob=2).sum() == 2

    def test_planted_square_iou_with_otsu(self):
        img = speckle_square_image(seed=6)
        vol = anomaly_volume(img)
        tau = otsu_threshold(vol.mean(axis=2))
        seg = segment_from_anomaly(vol, tau, min_blob=16)
        gt = np.zeros((256, 256), np.uint8)
        gt[100:132, 100:132] = 1
        inter = int((seg & gt).sum())
        union = int(((seg | gt) > 0).sum())
        assert inter / union >= 0.5

    def test_bad_volume_shape(self):
        with pytest.raises(ValueError):
            segment_from_anomaly(np.zeros((8, 8)), tau=0.5)


class TestExport:
    def test_export_files_and_sidecar(self, tmp_path):
        img = speckle_square_image(seed=7, size=64, box=(20, 40))
        cfg = AnomalyConfig()
        vol = anomaly_volume(img, cfg)
        paths = export_anomaly_volume(vol, tmp_path, cfg, tau=0.04)
        assert len(paths) == cfg.levels + 1
        sidecar = json.loads((tmp_path / "anomaly.json").read_text())
        assert sidecar["depth"] == cfg.levels
        assert sidecar["tau"] == 0.04
        assert sidecar["config_sha256"] == cfg.sha256()
        from sonarsynth import pngio

        level0 = pngio.read_gray(tmp_path / "anomaly_level1.png")
        expected = np.clip(np.floor(vol[:, :, 0] * 127.5 + 0.5), 0, 255).astype(np.uint8)
        assert np.array_equal(level0, expected)
