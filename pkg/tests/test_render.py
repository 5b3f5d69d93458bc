import math

import numpy as np
import pytest

from sonarsynth.render import (
    CLASS_SHADOW,
    CLASS_SHIP,
    SonarParams,
    db_to_pixel,
    render_scan,
    sonar_intensity,
    target_strength,
    trace_ping,
    transmission_loss,
)
from sonarsynth.scene import Material, ScenePlacement, SeabedConfig, build_scene

from conftest import box_mesh, unit_cube

ALT = 10.0


def make_scene(placements, meshes, extent_x=(0.0, 40.0), extent_y=(0.0, 49.0), **seabed_kw):
    seabed = SeabedConfig(extent_x=extent_x, extent_y=extent_y, **seabed_kw)
    return build_scene(seabed, placements, meshes, sensor_altitude=ALT)


def wall_scene(height, ground, width=0.1, length=6.0):
    """Thin across-track wall for shadow-geometry tests."""
    wall = box_mesh(length, width, height, name="wall")
    p = ScenePlacement("wall", (20.0 - length / 2, ground, 0.0), 0.0, 1.0, Material(0.9))
    return make_scene([p], {"wall": wall})


class TestKernels:
    def test_transmission_loss_values(self):
        assert transmission_loss(1.0) == 0.0
        assert transmission_loss(10.0) == pytest.approx(10.0, abs=1e-12)
        assert transmission_loss(100.0) == pytest.approx(20.0, abs=1e-12)

    def test_transmission_loss_domain(self):
        with pytest.raises(ValueError):
            transmission_loss(0.0)
        with pytest.raises(ValueError):
            transmission_loss(-3.0)

    def test_target_strength_values(self):
        assert target_strength(1.0, 1.0) == 0.0
        assert target_strength(1.0, 0.5) == pytest.approx(-3.0103, abs=1e-4)
        assert target_strength(0.0, 1.0) == -80.0  # grazing clamp

    def test_target_strength_reflectance_domain(self):
        with pytest.raises(ValueError):
            target_strength(1.0, 0.0)
        with pytest.raises(ValueError):
            target_strength(1.0, 1.2)

    def test_sonar_intensity_values(self):
        assert sonar_intensity(100.0, 1.0, 0.0) == 100.0
        assert sonar_intensity(200.0, 10.0, -20.0) == pytest.approx(160.0, abs=1e-12)

    def test_range_doubling_law(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            sl = rng.uniform(50, 220)
            d = rng.uniform(0.5, 500)
            ts = rng.uniform(-60, 0)
            delta = sonar_intensity(sl, 2 * d, ts) - sonar_intensity(sl, d, ts)
            assert delta == pytest.approx(-20.0 * math.log10(2.0), abs=1e-9)

    def test_db_to_pixel_endpoints_and_midpoint(self):
        win = (10.0, 20.0)
        assert db_to_pixel(10.0, win) == 0
        assert db_to_pixel(20.0, win) == 255
        assert db_to_pixel(15.0, win) == 128  # 127.5 rounds half up
        assert db_to_pixel(-1e9, win) == 0
        assert db_to_pixel(1e9, win) == 255

    def test_db_window_validation(self):
        with pytest.raises(ValueError):
            db_to_pixel(0.0, (5.0, 5.0))


class TestTracePing:
    def test_flat_seabed_strictly_decreasing(self):
        scene = make_scene([], {})
        params = SonarParams(range_bins=400, rays_per_ping=1200, max_slant_range=50.0, speckle=False)
        ping = trace_ping(scene, 5.0, params)
        finite = np.isfinite(ping.intensity_db)
        assert finite.any()
        first = int(np.argmax(finite))
        assert first == int(ALT / params.bin_size)
        assert finite[first:].all()
        assert np.all(np.diff(ping.intensity_db[finite]) < 0.0)

    def test_nadir_gap_has_no_return(self):
        scene = make_scene([], {})
        params = SonarParams(range_bins=400, rays_per_ping=1200, max_slant_range=50.0, speckle=False)
        ping = trace_ping(scene, 5.0, params)
        gap = int(ALT / params.bin_size)
        assert np.all(np.isneginf(ping.intensity_db[:gap]))

    def test_shadow_matches_similar_triangles(self):
        # wall height 2 at ground 20, altitude 10: shadow ground (20.1, 25.125]
        height, ground, width = 2.0, 20.0, 0.1
        scene = wall_scene(height, ground, width)
        params = SonarParams(range_bins=500, rays_per_ping=1500, max_slant_range=50.0, speckle=False)
        ping = trace_ping(scene, 20.0, params)
        shadow_bins = np.nonzero(ping.classes == CLASS_SHADOW)[0]
        shadow_bins = shadow_bins[shadow_bins >= int(ALT / params.bin_size)]
        far = ground + width
        s_start = math.hypot(far, ALT)
        s_end = math.hypot(far * ALT / (ALT - height), ALT)
        lo = int(s_start / params.bin_size)
        hi = int(s_end / params.bin_size)
        assert abs(int(shadow_bins.min()) - lo) <= 1
        assert abs(int(shadow_bins.max()) - hi) <= 1
        # contiguous run
        assert np.all(np.diff(shadow_bins) == 1)

    def test_ship_bins_labeled(self):
        scene = wall_scene(2.0, 20.0)
        params = SonarParams(range_bins=500, rays_per_ping=1500, max_slant_range=50.0, speckle=False)
        ping = trace_ping(scene, 20.0, params)
        ship_bins = set(np.nonzero(ping.classes == CLASS_SHIP)[0].tolist())
        assert ship_bins
        # per-ray oracle re-trace: the label must be exactly the bins some
        # contributing ship ray landed in
        oracle = set(ping.ray_bin[ping.ray_is_ship].tolist())
        assert ship_bins == oracle

    def test_contributing_rays_cover_hits(self):
        scene = make_scene([], {})
        params = SonarParams(range_bins=200, rays_per_ping=600, max_slant_range=50.0, speckle=False)
        ping = trace_ping(scene, 5.0, params)
        hit_bins = set(ping.ray_bin.tolist())
        finite_bins = set(np.nonzero(np.isfinite(ping.intensity_db))[0].tolist())
        assert hit_bins == finite_bins


class TestRenderScan:
    def _params(self, **kw):
        defaults = dict(
            range_bins=256, rays_per_ping=768, max_slant_range=50.0,
            pings=64, along_track_spacing=0.5, speckle=True,
        )
        defaults.update(kw)
        return SonarParams(**defaults)

    def test_empty_scene_label_all_zero(self):
        scene = make_scene([], {})
        img, label, shadow = render_scan(scene, self._params(), seed=5)
        assert label.sum() == 0
        assert img.shape == label.shape == shadow.shape == (64, 256)

    def test_mask_matches_ray_oracle(self):
        cube = unit_cube()
        p = ScenePlacement("cube", (12.0, 20.0, 0.0), 0.3, 3.0, Material(0.8))
        scene = make_scene([p], {"cube": cube})
        params = self._params(speckle=False)
        img, label, shadow = render_scan(scene, params, seed=0)
        assert label.sum() > 0
        for row in range(0, 64, 7):
            ping = trace_ping(scene, row * params.along_track_spacing, params)
            expected = np.zeros(256, dtype=np.uint8)
            expected[np.unique(ping.ray_bin[ping.ray_is_ship])] = 1
            assert np.array_equal(label[row], expected)

    def test_worker_count_invariance(self):
        cube = unit_cube()
        p = ScenePlacement("cube", (12.0, 20.0, 0.0), 0.3, 3.0, Material(0.8))
        scene = make_scene([p], {"cube": cube})
        params = self._params()
        base = render_scan(scene, params, seed=9, workers=1)
        for workers in (2, 4):
            other = render_scan(scene, params, seed=9, workers=workers)
            for a, b in zip(base, other):
                assert np.array_equal(a, b)

    def test_speckle_seed_changes_image_not_labels(self):
        cube = unit_cube()
        p = ScenePlacement("cube", (12.0, 20.0, 0.0), 0.3, 3.0, Material(0.8))
        scene = make_scene([p], {"cube": cube})
        params = self._params()
        img_a, lab_a, sh_a = render_scan(scene, params, seed=1)
        img_b, lab_b, sh_b = render_scan(scene, params, seed=2)
        assert not np.array_equal(img_a, img_b)
        assert np.array_equal(lab_a, lab_b)
        assert np.array_equal(sh_a, sh_b)

    def test_ship_shadow_exclusive(self):
        scene = wall_scene(2.5, 18.0)
        img, label, shadow = render_scan(scene, self._params(), seed=3)
        assert not np.any((label > 0) & (shadow > 0))
        # shadow pixels are forced black
        assert np.all(img[shadow > 0] == 0)

    def test_two_sided_layout(self):
        cube = unit_cube()
        p = ScenePlacement("cube", (12.0, 20.0, 0.0), 0.0, 3.0, Material(0.8))
        scene = make_scene([p], {"cube": cube}, extent_y=(-49.0, 49.0))
        params = self._params(two_sided=True, speckle=False)
        img, label, shadow = render_scan(scene, params, seed=0)
        assert img.shape == (64, 512)
        # object is on the starboard side only
        assert label[:, 256:].sum() > 0
        assert label[:, :256].sum() == 0
        # port half mirrors the starboard seabed profile when no object is present
        empty = make_scene([], {}, extent_y=(-49.0, 49.0))
        img_e, _, _ = render_scan(empty, params, seed=0)
        assert np.array_equal(img_e[:, :256], img_e[:, 256:][:, ::-1])

    def test_seabed_noise_renders(self):
        scene = make_scene([], {}, noise_amplitude=0.4, noise_scale=3.0, noise_seed=4)
        params = self._params(speckle=False)
        img, label, shadow = render_scan(scene, params, seed=0)
        flat = render_scan(make_scene([], {}), params, seed=0)[0]
        assert not np.array_equal(img, flat)
        assert label.sum() == 0

    def test_max_slant_must_exceed_altitude(self):
        scene = make_scene([], {})
        with pytest.raises(ValueError, match="altitude"):
            render_scan(scene, self._params(max_slant_range=8.0), seed=0)
