"""Iterative-error-feedback regression of body parameters from the encoded
feature vector.

Starting from a learned mean state, a two-hidden-layer MLP predicts additive
corrections three times, each time re-consuming the current estimate next to
the encoded vector.  The 85-number state is [pose 72, shape 10, raw scale,
translation 2]; camera scale is exp(raw scale), so it is always positive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import trunc_normal

POSE_DIM = 72
SHAPE_DIM = 10
CAM_DIM = 3
STATE_DIM = POSE_DIM + SHAPE_DIM + CAM_DIM
HIDDEN_DIM = 1024
NUM_ITERS = 3

# instrumented count of MLP evaluations, for verifying the iteration budget
mlp_evaluations = 0


@dataclass
class ThetaState:
    """Regressed body parameters for a batch.

    pose: (B, 72) axis-angle; shape: (B, 10); scale: (B,) positive;
    trans: (B, 2); raw: the (B, 85) pre-mapping state.
    """

    pose: Tensor
    shape: Tensor
    scale: Tensor
    trans: Tensor
    raw: Tensor


def init_regressor_params(feat_dim: int, rng: np.random.Generator, prefix: str = "reg.") -> dict[str, Tensor]:
    in_dim = feat_dim + STATE_DIM
    p = {
        prefix + "fc1_w": Tensor(trunc_normal(rng, (in_dim, HIDDEN_DIM), std=0.02), check=False),
        prefix + "fc1_b": Tensor(np.zeros(HIDDEN_DIM), check=False),
        prefix + "fc2_w": Tensor(trunc_normal(rng, (HIDDEN_DIM, HIDDEN_DIM), std=0.02), check=False),
        prefix + "fc2_b": Tensor(np.zeros(HIDDEN_DIM), check=False),
        prefix + "out_w": Tensor(trunc_normal(rng, (HIDDEN_DIM, STATE_DIM), std=0.02), check=False),
        prefix + "out_b": Tensor(np.zeros(STATE_DIM), check=False),
        prefix + "mean_state": Tensor(np.zeros(STATE_DIM), check=False),
    }
    return p


def count_regressor_params(feat_dim: int) -> int:
    in_dim = feat_dim + STATE_DIM
    return (
        in_dim * HIDDEN_DIM + HIDDEN_DIM
        + HIDDEN_DIM * HIDDEN_DIM + HIDDEN_DIM
        + HIDDEN_DIM * STATE_DIM + STATE_DIM
        + STATE_DIM
    )


def _mlp(params: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    global mlp_evaluations
    mlp_evaluations += 1
    h = ad.matmul(x, params[prefix + "fc1_w"]) + params[prefix + "fc1_b"]
    h = ad.matmul(h, params[prefix + "fc2_w"]) + params[prefix + "fc2_b"]
    return ad.matmul(h, params[prefix + "out_w"]) + params[prefix + "out_b"]


def ief_regress(params: dict[str, Tensor], z, prefix: str = "reg.") -> ThetaState:
    """Three additive refinement steps from the mean state.

    z: (F,) or (B, F) encoded vectors.  Raises FloatingPointError naming the
    iteration if the running state stops being finite.
    """
    z = ad.as_tensor(z)
    single = z.ndim == 1
    if single:
        z = z.reshape((1, z.shape[0]))
    expected = params[prefix + "fc1_w"].shape[0] - STATE_DIM
    if z.shape[1] != expected:
        raise ValueError(f"encoded vector length {z.shape[1]}, regressor expects {expected}")
    b = z.shape[0]

    state = ad.zeros((b, STATE_DIM)) + params[prefix + "mean_state"].reshape((1, STATE_DIM))
    for it in range(1, NUM_ITERS + 1):
        delta = _mlp(params, prefix, ad.concat([z, state], axis=1))
        state = state + delta
        if not np.all(np.isfinite(state.data)):
            raise FloatingPointError(f"non-finite regressor state at iteration {it}")

    return ThetaState(
        pose=state[:, :POSE_DIM],
        shape=state[:, POSE_DIM : POSE_DIM + SHAPE_DIM],
        scale=ad.exp(state[:, POSE_DIM + SHAPE_DIM]),
        trans=state[:, POSE_DIM + SHAPE_DIM + 1 :],
        raw=state,
    )


def mid_frame_index(seq_len: int) -> int:
    """Zero-based index of the middle frame, floor(T / 2) for even T."""
    if seq_len < 1:
        raise ValueError(f"sequence length must be >= 1, got {seq_len}")
    return seq_len // 2
