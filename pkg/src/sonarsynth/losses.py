"""Closed-form training losses: prototype MSE, one-hot CE, BCE, and their sum.

These are pure numpy references (no gradients) for verifying a trainer built
on this toolkit. Probabilities are clamped at 1e-12 so losses stay finite.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

_P_CLAMP = 1e-12
_SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class LossBreakdown:
    """The four loss components and their exact unweighted sum (nats)."""

    magnitude: float
    angle: float
    prototype: float
    segmentation: float
    total: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def prototype_mse(student: np.ndarray, teacher: np.ndarray) -> float:
    """Sum over levels of squared Euclidean distance between prototype vectors.

    A sum, not a mean: each level contributes its full ||a_i - b_i||^2.
    """
    a = np.asarray(student, dtype=np.float64)
    b = np.asarray(teacher, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"prototype stacks must share shape (levels, C); got {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def cross_entropy_onehot(
    pred: np.ndarray,
    target: np.ndarray,
    pixel_mask: np.ndarray | None = None,
) -> float:
    """Mean per-pixel cross entropy of a class distribution vs one-hot targets.

    pred is (H, W, K) with each pixel on the simplex; target is (H, W, K)
    one-hot. pixel_mask, when given, restricts the mean to selected pixels
    (e.g. ship pixels only).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target)
    if pred.shape != target.shape or pred.ndim != 3:
        raise ValueError(f"pred {pred.shape} and target {target.shape} must be equal (H, W, K)")
    sums = pred.sum(axis=2)
    if np.any(np.abs(sums - 1.0) > _SIMPLEX_TOL) or np.any(pred < -_SIMPLEX_TOL):
        raise ValueError("per-pixel predictions must form a probability simplex")
    if np.any((target != 0) & (target != 1)) or np.any(target.sum(axis=2) != 1):
        raise ValueError("target must be one-hot per pixel")
    p_true = np.sum(pred * target, axis=2)
    nll = -np.log(np.maximum(p_true, _P_CLAMP))
    if pixel_mask is not None:
        sel = np.asarray(pixel_mask) > 0
        if sel.shape != nll.shape:
            raise ValueError("pixel_mask shape mismatch")
        if not sel.any():
            raise ValueError("pixel_mask selects no pixels")
        return float(nll[sel].mean())
    return float(nll.mean())


def binary_cross_entropy(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean per-pixel BCE; pred in [0, 1], target binary."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"pred {pred.shape} and target {target.shape} must match")
    if np.any(pred < 0.0) or np.any(pred > 1.0):
        raise ValueError("predictions must lie in [0, 1]")
    y = (target > 0).astype(np.float64)
    p = np.clip(pred, _P_CLAMP, 1.0 - _P_CLAMP)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def total_loss(magnitude: float, angle: float, prototype: float, segmentation: float) -> LossBreakdown:
    """Exact unweighted sum of the four components."""
    parts = (magnitude, angle, prototype, segmentation)
    for name, v in zip(("magnitude", "angle", "prototype", "segmentation"), parts):
        if not np.isfinite(v):
            raise ValueError(f"{name} loss is not finite: {v}")
        if v < 0.0:
            raise ValueError(f"{name} loss is negative: {v}")
    return LossBreakdown(
        magnitude=float(magnitude),
        angle=float(angle),
        prototype=float(prototype),
        segmentation=float(segmentation),
        total=float(magnitude) + float(angle) + float(prototype) + float(segmentation),
    )
