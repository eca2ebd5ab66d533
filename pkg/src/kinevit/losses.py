"""Training objective: squared-error terms on 2D keypoints, pelvis-centered
3D joints, pose, and shape, plus the rearranging-matrix regularizer, combined
as a weighted sum.  Each term sums squared differences over all elements of a
sample and averages over the batch; a term whose ground truth is unavailable
is simply omitted from the sum.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor
from .features import crm_loss

__all__ = [
    "LossWeights",
    "LossComponents",
    "keypoint_loss",
    "joint_loss",
    "pose_loss",
    "shape_loss",
    "crm_loss",
    "total_loss",
]


@dataclass(frozen=True)
class LossWeights:
    lambda_2d: float = 300.0
    lambda_3d: float = 300.0
    lambda_pose: float = 60.0
    lambda_shape: float = 0.06
    lambda_crm: float = 1.0

    def __post_init__(self):
        for name in ("lambda_2d", "lambda_3d", "lambda_pose", "lambda_shape", "lambda_crm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class LossComponents:
    """Scalar loss terms; None marks a term whose ground truth is missing."""

    l2d: Tensor | None = None
    l3d: Tensor | None = None
    lpose: Tensor | None = None
    lshape: Tensor | None = None
    lcrm: Tensor | None = None


def _sumsq_batch_mean(pred, target, sample_ndim: int) -> Tensor:
    pred = ad.as_tensor(pred)
    target = ad.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.ndim not in (sample_ndim, sample_ndim + 1):
        raise ValueError(
            f"expected {sample_ndim}-d sample or batch thereof, got {pred.shape}"
        )
    diff = pred - target
    sq = diff * diff
    if pred.ndim == sample_ndim:
        return sq.sum()
    return sq.reshape((pred.shape[0], -1)).sum(axis=1).mean()


def keypoint_loss(pred, target) -> Tensor:
    """Squared 2D keypoint error, (J, 2) per sample."""
    return _sumsq_batch_mean(pred, target, sample_ndim=2)


def joint_loss(pred, target) -> Tensor:
    """Squared 3D joint error after pelvis-centering both sides, (J, 3)."""
    pred = ad.as_tensor(pred)
    target = ad.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.ndim == 2:
        pred = pred - pred[0:1, :]
        target = target - target[0:1, :]
    elif pred.ndim == 3:
        pred = pred - pred[:, 0:1, :]
        target = target - target[:, 0:1, :]
    else:
        raise ValueError(f"joints must be (J, 3) or (B, J, 3), got {pred.shape}")
    return _sumsq_batch_mean(pred, target, sample_ndim=2)


def pose_loss(pred, target) -> Tensor:
    """Squared axis-angle pose error, (72,) per sample."""
    return _sumsq_batch_mean(pred, target, sample_ndim=1)


def shape_loss(pred, target) -> Tensor:
    """Squared shape-coefficient error, (10,) per sample."""
    return _sumsq_batch_mean(pred, target, sample_ndim=1)


def total_loss(components: LossComponents, weights: LossWeights) -> Tensor:
    """Weighted sum of the available terms, fixed accumulation order."""
    total = Tensor(0.0)
    for value, weight in (
        (components.l2d, weights.lambda_2d),
        (components.l3d, weights.lambda_3d),
        (components.lpose, weights.lambda_pose),
        (components.lshape, weights.lambda_shape),
        (components.lcrm, weights.lambda_crm),
    ):
        if value is not None:
            total = total + ad.as_tensor(value) * weight
    return total
