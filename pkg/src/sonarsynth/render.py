"""Side scan sonar waterfall rendering by ray casting.

Each ping casts a vertical across-track fan of rays from the sensor at
(x, 0, altitude). Per-ray return intensity follows the SONAR equation

    RI = SL - 2*TL + TS,   TL = 10*log10(d)

with a Lambertian target strength TS = 10*log10(rho * cos(incidence)).
Ray energies are summed per slant-range bin in the linear domain and
converted back to dB; slant bins with no return past the nadir gap are
acoustic shadow.

The fan is stratified per range bin (equal ray count aimed at every
seabed-reachable bin) so an unoccluded flat seabed produces strictly
decreasing per-bin intensity and shadow detection never has coverage gaps.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from sonarsynth.scene import Scene

CLASS_TERRAIN = 0
CLASS_SHIP = 1
CLASS_SHADOW = 2  # shadow / no-return

TS_FLOOR_DB = -80.0
_RAYLEIGH_UNIT_MEAN_SCALE = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class SonarParams:
    """Acquisition geometry and radiometry for one scan."""

    source_level: float = 120.0  # SL, dB
    rays_per_ping: int = 1024
    range_bins: int = 512  # W, image width (per side)
    max_slant_range: float = 50.0  # meters
    db_window: tuple[float, float] | None = None  # (lo_dB, hi_dB); default (SL-90, SL-20)
    pings: int = 512  # H, image height
    along_track_spacing: float = 0.2  # meters between pings
    speckle: bool = True  # multiplicative Rayleigh noise, seeded
    two_sided: bool = False  # render port+starboard mirrored about the nadir gap

    def __post_init__(self):
        if self.source_level <= 0.0:
            raise ValueError("source_level must be > 0 dB")
        if self.range_bins < 1:
            raise ValueError("range_bins must be >= 1")
        if self.rays_per_ping < 1:
            raise ValueError("rays_per_ping must be >= 1")
        if self.max_slant_range <= 0.0:
            raise ValueError("max_slant_range must be > 0")
        if self.pings < 1:
            raise ValueError("pings must be >= 1")
        if self.along_track_spacing <= 0.0:
            raise ValueError("along_track_spacing must be > 0")
        if self.db_window is None:
            object.__setattr__(
                self,
                "db_window",
                (self.source_level - 90.0, self.source_level - 20.0),
            )
        lo, hi = self.db_window
        if not hi > lo:
            raise ValueError(f"db_window must satisfy hi > lo, got ({lo}, {hi})")

    @property
    def bin_size(self) -> float:
        return self.max_slant_range / self.range_bins

    @classmethod
    def from_dict(cls, d: dict) -> "SonarParams":
        kwargs = dict(d)
        if "db_window" in kwargs and kwargs["db_window"] is not None:
            kwargs["db_window"] = tuple(float(v) for v in kwargs["db_window"])
        return cls(**kwargs)


@dataclass
class PingReturn:
    """One ping: per-bin intensity/class plus the contributing ray hits."""

    intensity_db: np.ndarray  # (W,) float, -inf where no return
    classes: np.ndarray  # (W,) uint8 in {terrain, ship, shadow/no-return}
    ray_distance: np.ndarray  # (n_hits,) slant distance of each contributing ray
    ray_bin: np.ndarray  # (n_hits,) bin index of each contributing ray
    ray_is_ship: np.ndarray  # (n_hits,) bool


def transmission_loss(d):
    """One-way transmission loss TL = 10*log10(d) in dB; d in meters, > 0."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0.0):
        raise ValueError("transmission loss undefined for distance <= 0")
    out = 10.0 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def target_strength(cos_incidence, reflectance):
    """Lambertian target strength 10*log10(rho*cos), floored at -80 dB."""
    rho = np.asarray(reflectance, dtype=np.float64)
    if np.any(rho <= 0.0) or np.any(rho > 1.0):
        raise ValueError("reflectance must be in (0, 1]")
    cos = np.clip(np.asarray(cos_incidence, dtype=np.float64), 0.0, 1.0)
    with np.errstate(divide="ignore"):
        out = np.maximum(10.0 * np.log10(rho * cos), TS_FLOOR_DB)
    return float(out) if out.ndim == 0 else out


def sonar_intensity(source_level, d, ts):
    """Return intensity RI = SL - 2*TL + TS in dB."""
    ri = np.asarray(source_level, dtype=np.float64) - 2.0 * transmission_loss(d) + np.asarray(ts)
    return float(ri) if ri.ndim == 0 else ri


def db_to_pixel(ri_db, window) -> np.ndarray | int:
    """Affine dB-to-8-bit map with clamping; round-half-up for reproducibility."""
    lo, hi = window
    if not hi > lo:
        raise ValueError("db window must satisfy hi > lo")
    scaled = 255.0 * (np.asarray(ri_db, dtype=np.float64) - lo) / (hi - lo)
    with np.errstate(invalid="ignore"):
        pix = np.clip(np.floor(scaled + 0.5), 0.0, 255.0)
    pix = np.nan_to_num(pix, nan=0.0).astype(np.uint8)
    return int(pix) if pix.ndim == 0 else pix


class _Fan:
    """Precomputed across-track ray fan, shared by every ping of a scan."""

    def __init__(self, altitude: float, params: SonarParams):
        a, r_max, w = altitude, params.max_slant_range, params.range_bins
        if r_max <= a:
            raise ValueError("max_slant_range must exceed the sensor altitude")
        dr = params.bin_size
        lo_bin = int(a / dr)
        intervals = []
        for k in range(lo_bin, w):
            lo = max(k * dr, a)
            hi = min((k + 1) * dr, r_max)
            if hi > lo:
                intervals.append((lo, hi))
        m = max(1, params.rays_per_ping // max(1, len(intervals)))
        targets = []
        for lo, hi in intervals:
            step = (hi - lo) / m
            targets.extend(lo + (s + 0.5) * step for s in range(m))
        d = np.asarray(targets, dtype=np.float64)
        self.altitude = a
        self.d_target = d
        self.cos_phi = a / d  # phi measured from vertical
        self.sin_phi = np.sqrt(np.clip(1.0 - self.cos_phi**2, 0.0, 1.0))
        self.ground_y = d * self.sin_phi
        self.first_reachable_bin = lo_bin

    def dirs(self, side: int) -> np.ndarray:
        out = np.zeros((self.d_target.size, 3))
        out[:, 1] = side * self.sin_phi
        out[:, 2] = -self.cos_phi
        return out


def _intersect_triangles(scene: Scene, origin: np.ndarray, dirs: np.ndarray, cand: np.ndarray):
    """Vectorized Moller-Trumbore; returns (t, tri_index) per ray, inf if none."""
    v0 = scene.tri_v0[cand]
    e1 = scene.tri_e1[cand]
    e2 = scene.tri_e2[cand]
    h = np.cross(dirs[:, None, :], e2[None, :, :])  # (n_rays, n_tris, 3)
    det = np.einsum("tk,ntk->nt", e1, h)
    s = origin[None, :] - v0  # (n_tris, 3)
    q = np.cross(s, e1)  # (n_tris, 3)
    eps = 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        u = inv * np.einsum("tk,ntk->nt", s, h)
        v = inv * np.einsum("ntk,tk->nt", np.broadcast_to(dirs[:, None, :], h.shape), q)
        t = inv * np.einsum("tk,tk->t", e2, q)[None, :]
        valid = (
            (np.abs(det) > 1e-12)
            & (u >= -eps)
            & (v >= -eps)
            & (u + v <= 1.0 + eps)
            & (t > 1e-6)
        )
    t = np.where(valid, t, np.inf)
    best = np.argmin(t, axis=1)
    t_best = t[np.arange(t.shape[0]), best]
    return t_best, cand[best]


def trace_ping(
    scene: Scene,
    sensor_x: float,
    params: SonarParams,
    side: int = 1,
    speckle_rng: np.random.Generator | None = None,
    _fan: _Fan | None = None,
) -> PingReturn:
    """Trace one across-track ping at along-track position `sensor_x`.

    Rays are first-hit against scene triangles and the (optionally
    noise-perturbed) seabed; each hit adds 10^(RI/10) to its slant-range bin.
    A bin is classed shipwreck if any contributing hit was a ship triangle,
    shadow/no-return if nothing hit it.
    """
    fan = _fan if _fan is not None else _Fan(scene.sensor_altitude, params)
    a = fan.altitude
    w = params.range_bins
    dr = params.bin_size
    origin = np.array([sensor_x, 0.0, a])
    dirs = fan.dirs(side)

    # seabed hit per ray
    if scene.seabed.noise_amplitude == 0.0:
        d_sea = fan.d_target.copy()
        cos_sea = fan.cos_phi.copy()
    else:
        y0 = side * fan.ground_y
        x0 = np.full_like(y0, sensor_x)
        h0 = scene.seabed_height(x0, y0)
        d_sea = (a - h0) / fan.cos_phi  # one-step heightfield correction
        y1 = side * d_sea * fan.sin_phi
        delta = scene.seabed.noise_scale / 64.0
        dndx = (scene.seabed_height(x0 + delta, y1) - scene.seabed_height(x0 - delta, y1)) / (2 * delta)
        dndy = (scene.seabed_height(x0, y1 + delta) - scene.seabed_height(x0, y1 - delta)) / (2 * delta)
        inv_norm = 1.0 / np.sqrt(dndx**2 + dndy**2 + 1.0)
        # dir = (0, side*sin, -cos); normal = (-dndx, -dndy, 1) * inv_norm
        cos_sea = np.abs((side * fan.sin_phi) * (-dndy) - fan.cos_phi) * inv_norm
        cos_sea = np.clip(cos_sea, 0.0, 1.0)
        bad = d_sea <= 0.0
        d_sea[bad] = np.inf

    d_hit = d_sea
    cos_hit = cos_sea
    rho_hit = np.full(dirs.shape[0], scene.seabed.reflectance)
    is_ship = np.zeros(dirs.shape[0], dtype=bool)

    cand = scene.candidates_for_x(sensor_x)
    if cand.size:
        t_tri, tri_idx = _intersect_triangles(scene, origin, dirs, cand)
        nearer = t_tri < d_hit
        if np.any(nearer):
            idx = tri_idx[nearer]
            d_hit = np.where(nearer, t_tri, d_hit)
            cos_tri = np.abs(np.einsum("nk,nk->n", dirs[nearer], scene.tri_normal[idx]))
            cos_hit = cos_hit.copy()
            cos_hit[nearer] = np.clip(cos_tri, 0.0, 1.0)
            rho_hit = rho_hit.copy()
            rho_hit[nearer] = scene.tri_reflectance[idx]
            is_ship = is_ship.copy()
            is_ship[nearer] = True

    keep = np.isfinite(d_hit) & (d_hit > 0.0)
    bins = np.floor(d_hit[keep] / dr).astype(np.int64)
    in_range = bins < w
    bins = bins[in_range]
    d_v = d_hit[keep][in_range]
    cos_v = cos_hit[keep][in_range]
    rho_v = rho_hit[keep][in_range]
    ship_v = is_ship[keep][in_range]

    ri = sonar_intensity(params.source_level, d_v, target_strength(cos_v, rho_v))
    linear = np.power(10.0, np.asarray(ri) / 10.0)

    acc = np.zeros(w)
    np.add.at(acc, bins, linear)
    hit_count = np.bincount(bins, minlength=w)
    ship_flag = np.zeros(w, dtype=bool)
    np.logical_or.at(ship_flag, bins, ship_v)

    if params.speckle and speckle_rng is not None:
        acc = acc * speckle_rng.rayleigh(scale=_RAYLEIGH_UNIT_MEAN_SCALE, size=w)

    with np.errstate(divide="ignore"):
        intensity_db = np.where(acc > 0.0, 10.0 * np.log10(np.maximum(acc, 1e-300)), -np.inf)

    classes = np.zeros(w, dtype=np.uint8)
    classes[ship_flag] = CLASS_SHIP
    no_hit = hit_count == 0
    classes[no_hit] = CLASS_SHADOW
    # bins entirely inside the nadir gap can never carry a seabed return;
    # ShadowMask only marks shadow past the gap (see render_scan)
    return PingReturn(
        intensity_db=intensity_db,
        classes=classes,
        ray_distance=d_v,
        ray_bin=bins,
        ray_is_ship=ship_v,
    )


def render_scan(
    scene: Scene,
    params: SonarParams,
    seed: int = 0,
    workers: int = 1,
):
    """Render the full waterfall: (SonarImage, LabelMask, ShadowMask) uint8 grids.

    Rows are pings along the track, columns slant-range bins. Each row is an
    independent pure function of (scene, params, seed, row), so results are
    byte-identical for any worker count. Speckle noise is seeded per row.
    """
    fan = _Fan(scene.sensor_altitude, params)
    h = params.pings
    w = params.range_bins
    width = 2 * w if params.two_sided else w
    lo, hi = params.db_window
    image = np.zeros((h, width), dtype=np.uint8)
    label = np.zeros((h, width), dtype=np.uint8)
    shadow = np.zeros((h, width), dtype=np.uint8)

    # shadow is only meaningful past the nadir gap
    past_nadir = (np.arange(w) + 1) * params.bin_size > scene.sensor_altitude

    def render_row(i: int):
        x = i * params.along_track_spacing
        rng = np.random.default_rng((seed, i)) if params.speckle else None
        sides = (1, -1) if params.two_sided else (1,)
        rows = []
        for side in sides:
            ping = trace_ping(scene, x, params, side=side, speckle_rng=rng, _fan=fan)
            pix = db_to_pixel(ping.intensity_db, (lo, hi))
            shad = (ping.classes == CLASS_SHADOW) & past_nadir
            pix[shad] = 0
            rows.append((pix, (ping.classes == CLASS_SHIP).astype(np.uint8), shad.astype(np.uint8)))
        if params.two_sided:
            (s_pix, s_lab, s_sh), (p_pix, p_lab, p_sh) = rows
            return (
                np.concatenate([p_pix[::-1], s_pix]),
                np.concatenate([p_lab[::-1], s_lab]),
                np.concatenate([p_sh[::-1], s_sh]),
            )
        return rows[0]

    if workers <= 1:
        results = map(render_row, range(h))
        for i, (pix, lab, sh) in enumerate(results):
            image[i] = pix
            label[i] = lab
            shadow[i] = sh
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for i, (pix, lab, sh) in enumerate(pool.map(render_row, range(h))):
                image[i] = pix
                label[i] = lab
                shadow[i] = sh
    return image, label, shadow
