"""Temporal-kinematic feature image, the learnable channel rearranging
matrix, and patchification for the transformer encoder.

The feature image stacks one feature vector per frame into a T x C matrix.
A C x C rearranging matrix built from trainable logits right-multiplies it
to reorder channels; training drives the matrix toward a hard permutation.
Patchification cuts the (possibly rearranged) image into non-overlapping
P_t x P_c blocks flattened row-major, time axis outermost.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .autodiff import Tensor


def build_feature_image(frames) -> Tensor:
    """Stack per-frame feature vectors into a T x C matrix, row t = frame t."""
    rows = [np.asarray(f, dtype=np.float64) for f in frames]
    if not rows:
        raise ValueError("need at least one frame")
    width = rows[0].shape
    if len(width) != 1:
        raise ValueError(f"frame features must be vectors, got shape {width}")
    for i, r in enumerate(rows):
        if r.shape != width:
            raise ValueError(f"frame {i} has length {r.shape[0]}, expected {width[0]}")
    return Tensor(np.stack(rows, axis=0))


def make_crm(logits, temperature: float = 1.0) -> Tensor:
    """Relaxed channel rearranging matrix from trainable logits.

    One pass of row-then-column normalization in log space: scale the logits
    by 1/temperature, subtract the row log-sum-exp, subtract the column
    log-sum-exp, exponentiate.  Columns sum to one by construction of the
    final column step; as the logits sharpen the output approaches a hard
    permutation matrix.
    """
    logits = ad.as_tensor(logits)
    if logits.ndim != 2 or logits.shape[0] != logits.shape[1]:
        raise ValueError(f"logits must be square, got {logits.shape}")
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    x = logits * (1.0 / temperature)
    x = x - ad.logsumexp(x, axis=-1)
    x = x - ad.logsumexp(x, axis=-2)
    return ad.exp(x)


def apply_crm(image, crm) -> Tensor:
    """Right-multiply the feature image by the rearranging matrix."""
    image = ad.as_tensor(image)
    crm = ad.as_tensor(crm)
    if image.shape[-1] != crm.shape[-2]:
        raise ValueError(
            f"feature image channels {image.shape} do not match matrix {crm.shape}"
        )
    return ad.matmul(image, crm)


def crm_loss(crm) -> Tensor:
    """Squared deviation of every row sum and column sum from one.

    Zero exactly when the matrix is doubly stochastic, positive otherwise.
    """
    crm = ad.as_tensor(crm)
    if crm.ndim != 2 or crm.shape[0] != crm.shape[1]:
        raise ValueError(f"crm must be square, got {crm.shape}")
    row_dev = crm.sum(axis=1) - 1.0
    col_dev = crm.sum(axis=0) - 1.0
    return (row_dev * row_dev).sum() + (col_dev * col_dev).sum()


def patchify(image, patch_t: int, patch_c: int) -> Tensor:
    """Cut a (T, C) or (B, T, C) image into flattened non-overlapping patches.

    Output is (N, patch_t * patch_c) with N = (T / patch_t) * (C / patch_c);
    patches are ordered row-major over the (T/patch_t, C/patch_c) grid and
    each patch is flattened row-major (time-major).  Dimensions must divide
    exactly; there is no implicit padding.
    """
    image = ad.as_tensor(image)
    if image.ndim not in (2, 3):
        raise ValueError(f"image must be (T, C) or (B, T, C), got {image.shape}")
    t, c = image.shape[-2], image.shape[-1]
    if patch_t <= 0 or patch_c <= 0:
        raise ValueError("patch sizes must be positive")
    if t % patch_t != 0 or c % patch_c != 0:
        raise ValueError(
            f"image {t}x{c} not divisible by patch {patch_t}x{patch_c}"
        )
    gt, gc = t // patch_t, c // patch_c
    single = image.ndim == 2
    x = image.reshape((1, t, c)) if single else image
    b = x.shape[0]
    x = x.reshape((b, gt, patch_t, gc, patch_c))
    x = x.transpose((0, 1, 3, 2, 4))
    x = x.reshape((b, gt * gc, patch_t * patch_c))
    return x.reshape((gt * gc, patch_t * patch_c)) if single else x


def unpatchify(patches, seq_len: int, channels: int, patch_t: int, patch_c: int) -> Tensor:
    """Exact inverse of patchify for the given image dimensions."""
    patches = ad.as_tensor(patches)
    gt, gc = seq_len // patch_t, channels // patch_c
    n = gt * gc
    if patches.shape[-2:] != (n, patch_t * patch_c):
        raise ValueError(
            f"patches {patches.shape} do not match grid {gt}x{gc} of {patch_t}x{patch_c}"
        )
    single = patches.ndim == 2
    x = patches.reshape((1,) + patches.shape) if single else patches
    b = x.shape[0]
    x = x.reshape((b, gt, gc, patch_t, patch_c))
    x = x.transpose((0, 1, 3, 2, 4))
    x = x.reshape((b, seq_len, channels))
    return x.reshape((seq_len, channels)) if single else x


def num_patches(seq_len: int, channels: int, patch_t: int, patch_c: int) -> int:
    if seq_len % patch_t != 0 or channels % patch_c != 0:
        raise ValueError(
            f"image {seq_len}x{channels} not divisible by patch {patch_t}x{patch_c}"
        )
    return (seq_len // patch_t) * (channels // patch_c)


def nearest_permutation(crm) -> tuple[np.ndarray, float]:
    """Closest permutation to the matrix, and the Frobenius distance to it.

    Solves the assignment maximizing sum_i crm[i, perm[i]] exactly, then
    reports ||crm - P||_F for the selected permutation matrix P.
    """
    m = crm.data if isinstance(crm, Tensor) else np.asarray(crm, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got {m.shape}")
    rows, cols = linear_sum_assignment(m, maximize=True)
    perm = np.empty(m.shape[0], dtype=np.int64)
    perm[rows] = cols
    target = np.zeros_like(m)
    target[rows, cols] = 1.0
    return perm, float(np.linalg.norm(m - target))


def permutation_matrix(perm: np.ndarray) -> np.ndarray:
    """P with P[i, perm[i]] = 1."""
    n = len(perm)
    p = np.zeros((n, n))
    p[np.arange(n), perm] = 1.0
    return p


# ---------------------------------------------------------------------------
# inspection exports


def crm_to_csv(crm, path: str | Path) -> None:
    m = crm.data if isinstance(crm, Tensor) else np.asarray(crm)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in m:
            writer.writerow([f"{v:.17g}" for v in row])


def crm_to_pgm(crm, path: str | Path) -> None:
    """8-bit grayscale PGM (P5), entries scaled by 255 and clamped."""
    m = crm.data if isinstance(crm, Tensor) else np.asarray(crm)
    scaled = np.clip(np.round(m * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + scaled.tobytes())
