"""Region and boundary accuracy for label maps."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import binary_dilation

from .errors import InputError


def _binary(mask: np.ndarray, object_id: int) -> np.ndarray:
    return np.asarray(mask) == object_id


def jaccard(pred: np.ndarray, gt: np.ndarray, object_id: int) -> float:
    """Intersection over union of one object's binary masks; both empty -> 1."""
    if pred.shape != gt.shape:
        raise InputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p, g = _binary(pred, object_id), _binary(gt, object_id)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """True where a pixel differs from any 4-neighbor (outside counts as background)."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    diff = np.zeros_like(m)
    diff |= m != padded[:-2, 1:-1]
    diff |= m != padded[2:, 1:-1]
    diff |= m != padded[1:-1, :-2]
    diff |= m != padded[1:-1, 2:]
    return diff & m  # boundary belongs to the object side


def default_boundary_tol(shape: tuple) -> int:
    """0.8% of the image diagonal, rounded up; never below 0."""
    return math.ceil(0.008 * math.hypot(*shape))


def _disk(radius: int) -> np.ndarray:
    if radius <= 0:
        return np.ones((1, 1), dtype=bool)
    span = np.arange(-radius, radius + 1)
    yy, xx = np.meshgrid(span, span, indexing="ij")
    return yy * yy + xx * xx <= radius * radius


def boundary_f(pred: np.ndarray, gt: np.ndarray, object_id: int, tol_px: int | None = None) -> float:
    """Boundary precision/recall F-measure with a pixel tolerance.

    Boundaries are extracted on each side, dilated by a disk of radius
    tol_px, and matched both ways; F is the harmonic mean.  Both sides
    boundary-free -> 1, exactly one side -> 0.
    """
    if pred.shape != gt.shape:
        raise InputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    if tol_px is None:
        tol_px = default_boundary_tol(pred.shape)
    if tol_px < 0:
        raise InputError(f"tolerance must be >= 0, got {tol_px}")
    pb = boundary_pixels(_binary(pred, object_id))
    gb = boundary_pixels(_binary(gt, object_id))
    n_pb, n_gb = int(pb.sum()), int(gb.sum())
    if n_pb == 0 and n_gb == 0:
        return 1.0
    if n_pb == 0 or n_gb == 0:
        return 0.0
    disk = _disk(int(tol_px))
    gb_wide = binary_dilation(gb, structure=disk)
    pb_wide = binary_dilation(pb, structure=disk)
    precision = np.logical_and(pb, gb_wide).sum() / n_pb
    recall = np.logical_and(gb, pb_wide).sum() / n_gb
    if precision + recall == 0:
        return 0.0
    return float(2.0 * precision * recall / (precision + recall))


def sequence_scores(preds: list, gts: list, object_ids: list, tol_px: int | None = None) -> dict:
    """Mean J, F and J&F over frames, per object and overall."""
    if len(preds) != len(gts):
        raise InputError(f"{len(preds)} predictions vs {len(gts)} ground-truth masks")
    per_object = {}
    for obj in object_ids:
        js = [jaccard(p, g, obj) for p, g in zip(preds, gts)]
        fs = [boundary_f(p, g, obj, tol_px) for p, g in zip(preds, gts)]
        j, f = float(np.mean(js)), float(np.mean(fs))
        per_object[obj] = {"J": j, "F": f, "JF": (j + f) / 2.0}
    overall = {
        "J": float(np.mean([v["J"] for v in per_object.values()])),
        "F": float(np.mean([v["F"] for v in per_object.values()])),
        "JF": float(np.mean([v["JF"] for v in per_object.values()])),
    }
    return {"per_object": per_object, "overall": overall}
