"""Distillation loss, desk-scale regression loss, and NME evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LandmarkSet
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class LossReport:
    kd: float
    reg: float
    lambda_kd: float = 1.0
    lambda_reg: float = 1.0

    @property
    def total(self) -> float:
        return self.lambda_kd * self.kd + self.lambda_reg * self.reg

    def __post_init__(self):
        for name in ("kd", "reg"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} loss must be finite and >= 0, got {v}")


def kd_loss(teacher: Tensor, student: Tensor, reading: str = "l2") -> float:
    """Heatmap distillation distance summed over landmarks.

    The default `l2` reading takes, per landmark, the Euclidean norm over all
    heatmap cells of the teacher-student difference, then sums the norms over
    landmarks. The `abs` reading instead sums absolute per-cell differences
    (the scalar-norm interpretation), kept for comparison.
    """
    tv, sv = _as3d(teacher, "teacher"), _as3d(student, "student")
    if tv.shape != sv.shape:
        raise ShapeError(f"kd_loss: teacher {tv.shape} vs student {sv.shape}")
    diff = tv.astype(np.float64) - sv.astype(np.float64)
    if reading == "l2":
        per_landmark = np.sqrt((diff * diff).sum(axis=(1, 2)))
    elif reading == "abs":
        per_landmark = np.abs(diff).sum(axis=(1, 2))
    else:
        raise ValueError(f"unknown kd reading {reading!r}")
    return float(per_landmark.sum())


def l2_regression_loss(pred: LandmarkSet, gt: LandmarkSet) -> float:
    """Mean over landmarks of the squared Euclidean error in pixels."""
    p, g = _coords(pred), _coords(gt)
    if p.shape != g.shape:
        raise ShapeError(f"regression loss: {p.shape[0]} predictions vs {g.shape[0]} ground truths")
    d = p.astype(np.float64) - g.astype(np.float64)
    return float((d * d).sum(axis=1).mean())


def nme(pred: LandmarkSet, gt: LandmarkSet, norm="bbox_diag") -> float:
    """Normalized mean error in percent: 100 * mean_i ||pred_i - gt_i|| / D.

    norm selects the scale D: "bbox_diag" (diagonal of the ground-truth
    landmarks' tight bounding box), ("interocular", i, j) (distance between
    ground-truth points i and j), or ("constant", c).
    """
    p, g = _coords(pred), _coords(gt)
    if p.shape != g.shape:
        raise ShapeError(f"nme: {p.shape[0]} predictions vs {g.shape[0]} ground truths")
    d = norm_scale(gt, norm)
    if not np.isfinite(d) or d <= 0:
        raise ValueError(f"nme normalizer must be positive, got {d}")
    err = np.linalg.norm(p.astype(np.float64) - g.astype(np.float64), axis=1).mean()
    return float(100.0 * err / d)


def norm_scale(gt: LandmarkSet, norm) -> float:
    g = _coords(gt).astype(np.float64)
    if norm == "bbox_diag":
        span = g.max(axis=0) - g.min(axis=0)
        return float(np.hypot(span[0], span[1]))
    if isinstance(norm, (tuple, list)):
        kind = norm[0]
        if kind == "interocular":
            i, j = int(norm[1]), int(norm[2])
            return float(np.linalg.norm(g[i] - g[j]))
        if kind == "constant":
            return float(norm[1])
    raise ValueError(f"unknown nme normalizer {norm!r}")


def parse_norm(spec: str):
    """CLI form: bbox_diag | interocular:i,j | const:c."""
    if spec == "bbox_diag":
        return "bbox_diag"
    if spec.startswith("interocular:"):
        i, j = spec.split(":", 1)[1].split(",")
        return ("interocular", int(i), int(j))
    if spec.startswith("const:"):
        return ("constant", float(spec.split(":", 1)[1]))
    raise ValueError(f"unknown norm spec {spec!r}")


def _as3d(t, name) -> np.ndarray:
    v = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float32)
    if v.ndim != 3:
        raise ShapeError(f"kd_loss: {name} must be [N,h,w], got shape {v.shape}")
    if not np.isfinite(v).all():
        raise ValueError(f"kd_loss: {name} contains non-finite values")
    return v


def _coords(s) -> np.ndarray:
    return s.coords if isinstance(s, LandmarkSet) else np.asarray(s, dtype=np.float32)
