"""Evaluation metrics: per-vertex error, mean per-joint position error, and
the same after closed-form similarity (Procrustes) alignment.  Inputs are in
meters, reported values in millimeters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MM = 1000.0


def _as_points(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must be (N, 3), got {arr.shape}")
    return arr


def mpjpe(pred, target) -> float:
    """Mean Euclidean joint distance in mm after pelvis-centering both sets."""
    pred = _as_points(pred, "pred")
    target = _as_points(target, "target")
    if pred.shape != target.shape:
        raise ValueError(f"joint sets differ: {pred.shape} vs {target.shape}")
    pred = pred - pred[0]
    target = target - target[0]
    return float(np.linalg.norm(pred - target, axis=1).mean() * MM)


def procrustes_align(pred, target) -> tuple[float, np.ndarray, np.ndarray]:
    """Similarity transform (s, R, t) minimizing sum ||s R pred_i + t - target_i||^2.

    Closed form via the SVD of the cross-covariance; the rotation is proper
    (det +1, reflections excluded by sign-correcting the smallest singular
    direction).  Raises on degenerate input with no spatial extent.
    """
    x = _as_points(pred, "pred")
    y = _as_points(target, "target")
    if x.shape != y.shape:
        raise ValueError(f"point sets differ: {x.shape} vs {y.shape}")
    n = x.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    var_x = (xc * xc).sum() / n
    if var_x < 1e-18:
        raise ValueError("degenerate input: points are coincident")
    cov = yc.T @ xc / n
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u @ vt) < 0:
        sign[-1] = -1.0
    rot = (u * sign) @ vt
    scale = float((d * sign).sum() / var_x)
    trans = mu_y - scale * rot @ mu_x
    return scale, rot, trans


def pa_mpjpe(pred, target) -> float:
    """Mean joint distance in mm after optimal similarity alignment."""
    pred = _as_points(pred, "pred")
    target = _as_points(target, "target")
    scale, rot, trans = procrustes_align(pred, target)
    aligned = scale * pred @ rot.T + trans
    return float(np.linalg.norm(aligned - target, axis=1).mean() * MM)


def pve(pred_mesh, target_mesh, pred_root, target_root) -> float:
    """Mean per-vertex distance in mm; each mesh is centered on its own
    regressed root joint before comparison."""
    pred = _as_points(pred_mesh, "pred_mesh")
    target = _as_points(target_mesh, "target_mesh")
    if pred.shape != target.shape:
        raise ValueError(f"meshes differ: {pred.shape} vs {target.shape}")
    pred = pred - np.asarray(pred_root, dtype=np.float64)
    target = target - np.asarray(target_root, dtype=np.float64)
    return float(np.linalg.norm(pred - target, axis=1).mean() * MM)


@dataclass
class EvalReport:
    """Aggregate metrics over an evaluation split, all in millimeters."""

    pve_mm: float
    mpjpe_mm: float
    pa_mpjpe_mm: float
    count: int

    def csv_row(self, config_id: str, seed: int) -> str:
        return (
            f"{config_id},{seed},{self.pve_mm:.17g},{self.mpjpe_mm:.17g},"
            f"{self.pa_mpjpe_mm:.17g},{self.count}"
        )

    CSV_HEADER = "config,seed,pve_mm,mpjpe_mm,pa_mpjpe_mm,n"
