"""Terrain-prototype anomaly scoring over a deterministic feature pyramid.

A multi-scale filter bank stands in for a learned encoder: per pyramid level
it emits local mean, local standard deviation, gradient magnitude and four
oriented edge responses (7 channels, all from 5x5 windows). Terrain is
summarized by pooling those features into a single prototype vector per
level; the anomaly score of a position is the cosine distance between its
feature vector and the prototype, so scores always lie in [0, 2]. Per-level
maps are bilinearly upsampled to the input resolution and stacked into the
anomaly volume.

Pooling modes: "mean" is plain global average pooling, correct when the
input is a clean terrain image (the teacher role). "trimmed" drops the
largest-norm fraction of positions before averaging, a robust stand-in for
a student that learned to ignore objects; it is the inference default.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_FILTER_WINDOW = 5
_EDGE_SIGMA = 1.2
_EDGE_ORIENTATIONS = (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4)
MAX_CHANNELS = 3 + len(_EDGE_ORIENTATIONS)


@dataclass(frozen=True)
class AnomalyConfig:
    levels: int = 3  # pyramid depth D_l
    channels: int = MAX_CHANNELS  # leading channels of the filter bank to keep
    trim_fraction: float = 0.1  # q for trimmed pooling at inference

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if not (1 <= self.channels <= MAX_CHANNELS):
            raise ValueError(f"channels must be in [1, {MAX_CHANNELS}]")
        if not (0.0 <= self.trim_fraction <= 0.5):
            raise ValueError("trim_fraction must be in [0, 0.5]")

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "channels": self.channels,
            "trim_fraction": self.trim_fraction,
        }

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "AnomalyConfig":
        return cls(**d)


@dataclass
class Prototype:
    """Per-level pooled feature vectors, one row per pyramid level."""

    vectors: np.ndarray  # (levels, C)
    mode: str

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError("prototype vectors must be (levels, channels)")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("prototype contains non-finite values")


def _edge_kernel(theta: float) -> np.ndarray:
    """5x5 derivative-of-Gaussian kernel along direction theta; zero-sum."""
    half = _FILTER_WINDOW // 2
    ys, xs = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    g = np.exp(-(xs**2 + ys**2) / (2.0 * _EDGE_SIGMA**2))
    k = -(xs * math.cos(theta) + ys * math.sin(theta)) * g
    k -= k.mean()
    return k / np.abs(k).sum()


_EDGE_KERNELS = [_edge_kernel(t) for t in _EDGE_ORIENTATIONS]


def _pyramid_reduce(image: np.ndarray) -> np.ndarray:
    """Binomial 5-tap blur then 2x decimation (classic Gaussian pyramid step)."""
    k = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    sm = ndimage.convolve1d(image, k, axis=0, mode="reflect")
    sm = ndimage.convolve1d(sm, k, axis=1, mode="reflect")
    return sm[::2, ::2]


def _filter_bank(image: np.ndarray, channels: int) -> np.ndarray:
    mean = ndimage.uniform_filter(image, _FILTER_WINDOW, mode="reflect")
    sq = ndimage.uniform_filter(image * image, _FILTER_WINDOW, mode="reflect")
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    edges = [ndimage.convolve(image, k, mode="reflect") for k in _EDGE_KERNELS]
    grad = np.sqrt(edges[0] ** 2 + edges[2] ** 2)  # 0 and 90 degree responses
    stack = [mean, std, grad] + [np.abs(e) for e in edges]
    return np.stack(stack[:channels], axis=2)


def feature_pyramid(image: np.ndarray, config: AnomalyConfig = AnomalyConfig()) -> list[np.ndarray]:
    """Deterministic multi-scale features: list of (H/2^i, W/2^i, C) grids."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected grayscale image, got shape {image.shape}")
    if image.max(initial=0.0) > 1.0:
        image = image / 255.0
    min_side = min(image.shape)
    if min_side < 2 ** (config.levels - 1):
        raise ValueError(
            f"image {image.shape} too small for {config.levels} pyramid levels"
        )
    levels = []
    current = image
    for _ in range(config.levels):
        levels.append(_filter_bank(current, config.channels))
        current = _pyramid_reduce(current)
    return levels


def terrain_prototype(
    pyramid: list[np.ndarray],
    mode: str = "mean",
    trim_fraction: float = 0.1,
) -> Prototype:
    """Pool each pyramid level down to a single channel vector.

    mean: global average pooling over spatial positions. trimmed: drop the
    floor(q * n) positions with the largest feature norm first.
    """
    if mode not in ("mean", "trimmed"):
        raise ValueError(f"unknown pooling mode '{mode}'")
    if mode == "trimmed" and not (0.0 <= trim_fraction <= 0.5):
        raise ValueError("trim fraction must be in [0, 0.5]")
    vectors = []
    for feats in pyramid:
        flat = feats.reshape(-1, feats.shape[2])
        if mode == "mean":
            vectors.append(flat.mean(axis=0))
        else:
            norms = np.linalg.norm(flat, axis=1)
            drop = int(math.floor(trim_fraction * flat.shape[0]))
            keep = np.argsort(norms, kind="stable")[: flat.shape[0] - drop]
            vectors.append(flat[keep].mean(axis=0))
    return Prototype(vectors=np.stack(vectors), mode=mode)


def anomaly_map(prototype_vector: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Cosine distance 1 - cos(prototype, f(p)) per position, in [0, 2].

    Positions whose feature vector has zero norm score 0 by convention (a
    perfectly flat patch is maximally normal).
    """
    p = np.asarray(prototype_vector, dtype=np.float64).reshape(-1)
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[2] != p.size:
        raise ValueError(
            f"feature grid {feats.shape} does not match prototype width {p.size}"
        )
    p_norm = np.linalg.norm(p)
    if p_norm == 0.0:
        raise ValueError("prototype has zero norm; anomaly distance undefined")
    f_norm = np.linalg.norm(feats, axis=2)
    dot = feats @ p
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = dot / (p_norm * f_norm)
    scores = 1.0 - np.clip(cos, -1.0, 1.0)
    scores[f_norm == 0.0] = 0.0
    return np.clip(scores, 0.0, 2.0)


def bilinear_resize(arr: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resample with half-pixel-center alignment (not corner-aligned)."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape
    oh, ow = out_shape
    if (h, w) == (oh, ow):
        return arr.copy()
    src_r = np.clip((np.arange(oh) + 0.5) * (h / oh) - 0.5, 0.0, h - 1.0)
    src_c = np.clip((np.arange(ow) + 0.5) * (w / ow) - 0.5, 0.0, w - 1.0)
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (src_r - r0)[:, None]
    fc = (src_c - c0)[None, :]
    top = arr[np.ix_(r0, c0)] * (1 - fc) + arr[np.ix_(r0, c1)] * fc
    bot = arr[np.ix_(r1, c0)] * (1 - fc) + arr[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def anomaly_volume(image: np.ndarray, config: AnomalyConfig = AnomalyConfig()) -> np.ndarray:
    """(H, W, D_l) stack of per-level anomaly maps upsampled to input size."""
    image = np.asarray(image)
    pyramid = feature_pyramid(image, config)
    proto = terrain_prototype(pyramid, mode="trimmed", trim_fraction=config.trim_fraction)
    h, w = image.shape[:2]
    maps = [
        bilinear_resize(anomaly_map(proto.vectors[i], pyramid[i]), (h, w))
        for i in range(config.levels)
    ]
    return np.clip(np.stack(maps, axis=2), 0.0, 2.0)


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Classic Otsu split of a score histogram; returns the threshold value."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(flat.min()), float(flat.max())
    if hi <= lo:
        return lo
    hist, edges = np.histogram(flat, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    weights = hist.astype(np.float64)
    total = weights.sum()
    w0 = np.cumsum(weights)
    w1 = total - w0
    m = np.cumsum(weights * centers)
    m_total = m[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m / w0
        mu1 = (m_total - m) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    return float(centers[int(np.argmax(between))])


def segment_from_anomaly(volume: np.ndarray, tau: float, min_blob: int = 1) -> np.ndarray:
    """Threshold the depth-mean anomaly score and drop connected components
    (8-connectivity) smaller than min_blob pixels. Returns a binary uint8 mask."""
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise ValueError(f"expected (H, W, D) anomaly volume, got shape {volume.shape}")
    score = volume.mean(axis=2)
    mask = score > tau
    if min_blob > 1 and mask.any():
        labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
        sizes = np.bincount(labels.ravel())
        small = np.nonzero(sizes < min_blob)[0]
        mask &= ~np.isin(labels, small[small > 0])
    return mask.astype(np.uint8)


def export_anomaly_volume(
    volume: np.ndarray,
    out_dir: str | os.PathLike,
    config: AnomalyConfig,
    tau: float | None = None,
    stem: str = "anomaly",
) -> list[str]:
    """Write one PNG per level (score * 127.5, clamped) plus a JSON sidecar."""
    from sonarsynth import pngio

    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i in range(volume.shape[2]):
        img = np.clip(np.floor(volume[:, :, i] * 127.5 + 0.5), 0, 255).astype(np.uint8)
        path = os.path.join(out_dir, f"{stem}_level{i + 1}.png")
        pngio.write_gray(path, img)
        paths.append(path)
    sidecar = {
        "depth": int(volume.shape[2]),
        "tau": tau,
        "config": config.to_dict(),
        "config_sha256": config.sha256(),
    }
    sidecar_path = os.path.join(out_dir, f"{stem}.json")
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    paths.append(sidecar_path)
    return paths
