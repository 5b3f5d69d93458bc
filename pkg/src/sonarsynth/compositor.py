"""Compositing fractured ship renders onto terrain tiles, plus scan tiling."""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from sonarsynth.deformation import DeformationField
from sonarsynth import pngio

log = logging.getLogger(__name__)

TILE_SIZE = 1728
TILE_STRIDE = 100


@dataclass
class TerrainTile:
    """One background crop served by the terrain library."""

    image: np.ndarray  # (H, W) uint8
    source_id: str
    site: str | None = None


@dataclass
class SyntheticSample:
    """Final composited training sample with its ground truth and provenance."""

    image: np.ndarray  # S, (H, W) uint8
    mask: np.ndarray  # M_f, (H, W) uint8 binary
    field: DeformationField | None = None
    provenance: dict = dataclasses.field(default_factory=dict)


@dataclass(frozen=True)
class CompositeOptions:
    shadow_gain: float = 0.25  # terrain multiplier inside acoustic shadow
    feather: bool = False  # 1-pixel blend band at the mask boundary
    histogram_match: bool = False  # match pasted ship intensities to terrain

    def __post_init__(self):
        if not (0.0 <= self.shadow_gain <= 1.0):
            raise ValueError("shadow_gain must be in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "CompositeOptions":
        return cls(**d)


class TerrainLibrary:
    """Deterministic random-crop server over a directory of terrain scans."""

    def __init__(self, images: list[np.ndarray], source_ids: list[str], target_size: tuple[int, int]):
        if not images:
            raise ValueError("terrain library is empty")
        self.images = images
        self.source_ids = source_ids
        self.target_size = target_size

    def __len__(self) -> int:
        return len(self.images)

    def sample(self, rng: np.random.Generator) -> TerrainTile:
        """Pick a source then a crop offset, both uniform; same rng state,
        same tile."""
        idx = int(rng.integers(0, len(self.images)))
        img = self.images[idx]
        th, tw = self.target_size
        dv = int(rng.integers(0, img.shape[0] - th + 1))
        du = int(rng.integers(0, img.shape[1] - tw + 1))
        crop = img[dv : dv + th, du : du + tw].copy()
        return TerrainTile(image=crop, source_id=self.source_ids[idx], site=self.source_ids[idx])


def load_terrain_library(directory: str | os.PathLike, target_size: tuple[int, int]) -> TerrainLibrary:
    """Load every grayscale image in `directory` that covers the target size.

    Undersized images are skipped with a warning; an empty result is an error.
    """
    directory = os.fspath(directory)
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"terrain directory not found: {directory}")
    th, tw = target_size
    images, ids = [], []
    for name in sorted(os.listdir(directory)):
        if not name.lower().endswith((".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")):
            continue
        path = os.path.join(directory, name)
        img = pngio.read_gray(path)
        if img.shape[0] < th or img.shape[1] < tw:
            log.warning("terrain %s is %s, smaller than target %s; skipped", name, img.shape, target_size)
            continue
        images.append(img)
        ids.append(os.path.splitext(name)[0])
    if not images:
        raise ValueError(f"no terrain image in {directory} covers the target size {target_size}")
    return TerrainLibrary(images=images, source_ids=ids, target_size=(th, tw))


def _match_histogram(values: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Map `values` onto the empirical distribution of `reference` (both uint8)."""
    src_sorted = np.sort(values.ravel())
    ref_sorted = np.sort(reference.ravel())
    quantiles = (np.searchsorted(src_sorted, values.ravel(), side="right") - 0.5) / src_sorted.size
    mapped = np.interp(quantiles, np.linspace(0, 1, ref_sorted.size), ref_sorted)
    return np.floor(mapped + 0.5).astype(np.uint8).reshape(values.shape)


def composite(
    fractured_image: np.ndarray,
    fractured_mask: np.ndarray,
    fractured_shadow: np.ndarray | None,
    terrain: TerrainTile,
    opts: CompositeOptions = CompositeOptions(),
    deform_field: DeformationField | None = None,
    provenance: dict | None = None,
) -> SyntheticSample:
    """Paste ship pixels over the terrain tile and darken shadowed terrain.

    S = I_f where the mask is set, shadow_gain * T where only shadow is set,
    and T untouched elsewhere, so background pixels stay bit-identical to the
    tile.
    """
    i_f = np.asarray(fractured_image)
    m_f = np.asarray(fractured_mask)
    sh = np.zeros_like(m_f) if fractured_shadow is None else np.asarray(fractured_shadow)
    t = terrain.image
    if not (i_f.shape == m_f.shape == sh.shape == t.shape):
        raise ValueError(
            f"shape mismatch: image {i_f.shape}, mask {m_f.shape}, shadow {sh.shape}, "
            f"terrain {t.shape}"
        )
    ship = m_f > 0
    shade = (sh > 0) & ~ship

    if opts.histogram_match and ship.any():
        i_f = i_f.copy()
        i_f[ship] = _match_histogram(i_f[ship], t)

    out = t.copy()
    out[shade] = np.floor(opts.shadow_gain * t[shade].astype(np.float64) + 0.5).astype(np.uint8)
    out[ship] = i_f[ship]

    if opts.feather and ship.any():
        eroded = ndimage.binary_erosion(ship, structure=np.ones((3, 3)))
        edge = ship & ~eroded
        blend = 0.5 * i_f[edge].astype(np.float64) + 0.5 * t[edge].astype(np.float64)
        out[edge] = np.floor(blend + 0.5).astype(np.uint8)

    return SyntheticSample(
        image=out,
        mask=(m_f > 0).astype(np.uint8),
        field=deform_field,
        provenance=dict(provenance or {}),
    )


def tile_scan(
    raw: np.ndarray,
    tile_size: int = TILE_SIZE,
    stride: int = TILE_STRIDE,
) -> list[np.ndarray]:
    """Slide a (tile_size, tile_size) window down a raw scan with the given
    vertical stride. Scans shorter than one tile yield a single tile padded by
    edge reflection at the bottom.
    """
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise ValueError(f"expected a 2-d grayscale scan, got shape {raw.shape}")
    h, w = raw.shape
    if w != tile_size:
        raise ValueError(f"scan width must be {tile_size}, got {w}")
    if h < 1:
        raise ValueError("scan must have at least one row")
    if h < tile_size:
        padded = np.pad(raw, ((0, tile_size - h), (0, 0)), mode="symmetric")
        return [padded]
    count = (h - tile_size) // stride + 1
    return [raw[k * stride : k * stride + tile_size].copy() for k in range(count)]
