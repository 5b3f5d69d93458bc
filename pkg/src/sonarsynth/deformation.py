"""Quadrant deformation fields: generation, one-hot encoding, forward warping.

A field assigns every pixel a discrete (magnitude bin, angle bin) pair. The
ship mask is split into four quadrants about its centroid and all pixels in
one quadrant share one pair, so fracturing rigidly translates each quarter
of the ship. Pixel (u, v) uses u for column and v for row; the warp sends a
source pixel to (u + r*cos(theta), v + r*sin(theta)), rounded half-up.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

DEFF_MAGIC = b"DEFF"
_DEFF_HEADER = struct.Struct("<4sIIIIfII")


@dataclass(frozen=True)
class DeformParams:
    """Discretization of the deformation field: N_r magnitude bins over
    [0, r_max] pixels and N_theta angle bins over [0, 2*pi)."""

    n_r: int = 10
    n_theta: int = 20
    r_max: float = 96.0

    def __post_init__(self):
        if self.n_r < 1 or self.n_theta < 1:
            raise ValueError("bin counts must be >= 1")
        if self.n_r > 256 or self.n_theta > 256:
            raise ValueError("bin counts above 256 do not fit the DEFF byte format")
        if self.r_max <= 0.0:
            raise ValueError("r_max must be > 0")

    @property
    def depth(self) -> int:
        """One-hot channel count D = N_r + N_theta."""
        return self.n_r + self.n_theta

    @classmethod
    def for_image(cls, height: int, width: int, n_r: int = 10, n_theta: int = 20) -> "DeformParams":
        # default debris spread: 15% of the short image side
        return cls(n_r=n_r, n_theta=n_theta, r_max=0.15 * min(height, width))

    @classmethod
    def from_dict(cls, d: dict) -> "DeformParams":
        return cls(**d)


@dataclass
class DeformationField:
    """Per-pixel (r_bin, theta_bin) grid with its quadrant origin (u_c, v_c)."""

    r_bin: np.ndarray  # (H, W) uint8
    theta_bin: np.ndarray  # (H, W) uint8
    params: DeformParams
    origin: tuple[int, int] = (0, 0)  # (u_c, v_c) in pixels

    def __post_init__(self):
        self.r_bin = np.asarray(self.r_bin, dtype=np.uint8)
        self.theta_bin = np.asarray(self.theta_bin, dtype=np.uint8)
        if self.r_bin.shape != self.theta_bin.shape or self.r_bin.ndim != 2:
            raise ValueError("r_bin and theta_bin must be equal-shape 2-d grids")
        if self.r_bin.max(initial=0) >= self.params.n_r:
            raise ValueError("r_bin out of range")
        if self.theta_bin.max(initial=0) >= self.params.n_theta:
            raise ValueError("theta_bin out of range")

    @property
    def shape(self) -> tuple[int, int]:
        return self.r_bin.shape

    def same_bins(self, other: "DeformationField") -> bool:
        return np.array_equal(self.r_bin, other.r_bin) and np.array_equal(
            self.theta_bin, other.theta_bin
        )


def bin_to_value(r_bin: int, theta_bin: int, params: DeformParams) -> tuple[float, float]:
    """Bin pair -> (r pixels, theta radians). Bin 0 is r=0 so the identity
    displacement is representable; angles divide [0, 2*pi) evenly."""
    if not (0 <= r_bin < params.n_r):
        raise ValueError(f"r_bin {r_bin} out of range [0, {params.n_r})")
    if not (0 <= theta_bin < params.n_theta):
        raise ValueError(f"theta_bin {theta_bin} out of range [0, {params.n_theta})")
    r = 0.0 if params.n_r == 1 else r_bin * params.r_max / (params.n_r - 1)
    theta = theta_bin * 2.0 * math.pi / params.n_theta
    return r, theta


def identity_field(shape: tuple[int, int], params: DeformParams, origin=(0, 0)) -> DeformationField:
    """All-zero field: every pixel keeps its place."""
    z = np.zeros(shape, dtype=np.uint8)
    return DeformationField(r_bin=z, theta_bin=z.copy(), params=params, origin=origin)


def generate_quadrant_field(
    mask: np.ndarray,
    params: DeformParams,
    rng: np.random.Generator,
) -> DeformationField:
    """Random per-quadrant field over the ship mask.

    The origin is the rounded centroid of ship pixels; quadrants partition the
    plane with the >= rule on (u - u_c, v - v_c). One (r_bin, theta_bin) pair
    is drawn per quadrant in fixed order (so the draw sequence is independent
    of which quadrants contain ship pixels); non-ship pixels get (0, 0).
    """
    mask = np.asarray(mask)
    ship = mask > 0
    if not ship.any():
        raise ValueError("cannot generate a deformation field for an empty mask")
    vs, us = np.nonzero(ship)
    u_c = int(math.floor(us.mean() + 0.5))
    v_c = int(math.floor(vs.mean() + 0.5))

    draws = [(int(rng.integers(0, params.n_r)), int(rng.integers(0, params.n_theta)))
             for _ in range(4)]

    h, w = ship.shape
    uu = np.arange(w)[None, :] >= u_c
    vv = np.arange(h)[:, None] >= v_c
    quadrant = (vv.astype(np.uint8) * 2 + uu.astype(np.uint8))  # (H, W) in {0..3}

    r_bin = np.zeros((h, w), dtype=np.uint8)
    t_bin = np.zeros((h, w), dtype=np.uint8)
    for q in range(4):
        sel = ship & (quadrant == q)
        r_bin[sel] = draws[q][0]
        t_bin[sel] = draws[q][1]
    return DeformationField(r_bin=r_bin, theta_bin=t_bin, params=params, origin=(u_c, v_c))


def encode_onehot(field: DeformationField) -> np.ndarray:
    """(H, W, N_r + N_theta) uint8 one-hot tensor: magnitude block first."""
    h, w = field.shape
    p = field.params
    out = np.zeros((h, w, p.depth), dtype=np.uint8)
    rows, cols = np.indices((h, w))
    out[rows, cols, field.r_bin.astype(np.int64)] = 1
    out[rows, cols, p.n_r + field.theta_bin.astype(np.int64)] = 1
    return out


def decode_onehot(
    onehot: np.ndarray,
    params: DeformParams,
    origin: tuple[int, int] = (0, 0),
) -> DeformationField:
    """Per-block argmax decode; also accepts predicted (non-binary) scores.

    Ties break toward the lower bin index. Raises on a channel-count mismatch.
    """
    onehot = np.asarray(onehot)
    if onehot.ndim != 3 or onehot.shape[2] != params.depth:
        raise ValueError(
            f"expected (H, W, {params.depth}) tensor, got shape {onehot.shape}"
        )
    if np.any(onehot < 0):
        raise ValueError("one-hot scores must be non-negative")
    r_bin = np.argmax(onehot[:, :, : params.n_r], axis=2).astype(np.uint8)
    t_bin = np.argmax(onehot[:, :, params.n_r :], axis=2).astype(np.uint8)
    return DeformationField(r_bin=r_bin, theta_bin=t_bin, params=params, origin=origin)


def _displacements(field: DeformationField) -> tuple[np.ndarray, np.ndarray]:
    """Integer (du, dv) per pixel via a lookup over the (r_bin, theta_bin) grid."""
    p = field.params
    if p.n_r == 1:
        r_vals = np.zeros(1)
    else:
        r_vals = np.arange(p.n_r) * (p.r_max / (p.n_r - 1))
    t_vals = np.arange(p.n_theta) * (2.0 * math.pi / p.n_theta)
    du_lut = np.floor(r_vals[:, None] * np.cos(t_vals)[None, :] + 0.5).astype(np.int64)
    dv_lut = np.floor(r_vals[:, None] * np.sin(t_vals)[None, :] + 0.5).astype(np.int64)
    r = field.r_bin.astype(np.int64)
    t = field.theta_bin.astype(np.int64)
    return du_lut[r, t], dv_lut[r, t]


def apply_field(
    image: np.ndarray,
    mask: np.ndarray,
    shadow: np.ndarray | None,
    field: DeformationField,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward-splat the ship (and shadow) through the field.

    Every source pixel with mask=1 lands at (u + round(r*cos t), v + round(r*sin t));
    out-of-bounds destinations are discarded. Collisions keep the max intensity
    and OR the masks, so the result is independent of splat order. Destinations
    nobody lands on stay empty; the compositor fills them with terrain. The
    shadow grid is warped with the identical field.
    """
    image = np.asarray(image)
    mask = np.asarray(mask)
    if shadow is None:
        shadow = np.zeros_like(mask)
    shadow = np.asarray(shadow)
    if not (image.shape == mask.shape == shadow.shape == field.shape):
        raise ValueError(
            f"shape mismatch: image {image.shape}, mask {mask.shape}, "
            f"shadow {shadow.shape}, field {field.shape}"
        )
    h, w = image.shape
    du, dv = _displacements(field)

    out_img = np.zeros_like(image)
    out_mask = np.zeros(mask.shape, dtype=np.uint8)
    out_shadow = np.zeros(shadow.shape, dtype=np.uint8)

    def splat(src_sel: np.ndarray, dest_img: np.ndarray | None, dest_mask: np.ndarray):
        vs, us = np.nonzero(src_sel)
        if vs.size == 0:
            return
        u2 = us + du[vs, us]
        v2 = vs + dv[vs, us]
        ok = (u2 >= 0) & (u2 < w) & (v2 >= 0) & (v2 < h)
        vs, us, u2, v2 = vs[ok], us[ok], u2[ok], v2[ok]
        dest_mask[v2, u2] = 1
        if dest_img is not None:
            np.maximum.at(dest_img, (v2, u2), image[vs, us])

    splat(mask > 0, out_img, out_mask)
    splat(shadow > 0, None, out_shadow)
    return out_img, out_mask, out_shadow


def write_deff(path: str | os.PathLike, field: DeformationField) -> None:
    """Serialize to the DEFF binary format (little-endian, row-major u8 pairs)."""
    h, w = field.shape
    p = field.params
    header = _DEFF_HEADER.pack(
        DEFF_MAGIC, w, h, p.n_r, p.n_theta, p.r_max, field.origin[0], field.origin[1]
    )
    pairs = np.stack([field.r_bin, field.theta_bin], axis=2).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pairs.tobytes())


def read_deff(path: str | os.PathLike) -> DeformationField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _DEFF_HEADER.size:
        raise ValueError(f"{path}: truncated DEFF header")
    magic, w, h, n_r, n_theta, r_max, ou, ov = _DEFF_HEADER.unpack_from(raw)
    if magic != DEFF_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=_DEFF_HEADER.size)
    if body.size != h * w * 2:
        raise ValueError(f"{path}: expected {h * w * 2} field bytes, got {body.size}")
    pairs = body.reshape(h, w, 2)
    params = DeformParams(n_r=n_r, n_theta=n_theta, r_max=r_max)
    return DeformationField(
        r_bin=pairs[:, :, 0].copy(),
        theta_bin=pairs[:, :, 1].copy(),
        params=params,
        origin=(int(ou), int(ov)),
    )
