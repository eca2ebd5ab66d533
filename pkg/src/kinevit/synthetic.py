"""Synthetic data: ground-truth motion sequences and the frozen per-frame
feature encoder they are observed through.

Sequences use per-joint sinusoidal axis-angle trajectories with a fixed
random axis per joint, a per-sequence shape vector, and a slowly drifting
weak-perspective camera.  Frames are never rendered; a frozen stub maps the
generative state [pose, shape, camera] to a C-channel feature vector whose
channels are block-ordered by joint and then scrambled by a hidden channel
permutation, which is exactly the structure the learnable rearranging matrix
is supposed to recover.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .body import NUM_JOINTS, BodyTemplate, body_mesh, build_template, project, regress_joints
from .regressor import CAM_DIM, POSE_DIM, SHAPE_DIM, STATE_DIM, mid_frame_index
from .rng import (
    STREAM_STUB,
    STREAM_TRAIN_BASE,
    STREAM_VAL_BASE,
    make_rng,
)


@dataclass
class MotionSequence:
    """Ground truth for one clip: per-frame pose/camera, one shape vector,
    per-frame derived joints and keypoints, and the middle-frame mesh."""

    theta: np.ndarray      # (T, 72)
    beta: np.ndarray       # (10,)
    cam_scale: np.ndarray  # (T,)
    cam_trans: np.ndarray  # (T, 2)
    joints3d: np.ndarray   # (T, 24, 3)
    keypoints2d: np.ndarray  # (T, 24, 2)
    mid_mesh: np.ndarray   # (V, 3)

    @property
    def seq_len(self) -> int:
        return self.theta.shape[0]


def generate_sequence(
    template: BodyTemplate,
    rng: np.random.Generator,
    seq_len: int,
    amplitude: float = 1.0,
) -> MotionSequence:
    """One sinusoidal motion clip with self-consistent derived quantities.

    Per joint: theta_j(t) = a_j sin(w_j t + phi_j) axis_j with |a_j| <= 0.5
    rad (scaled by ``amplitude``), w_j in [0.05, 0.3] rad/frame.  Shape is
    normal(0, 0.5^2) clipped to [-2, 2].  Camera scale drifts inside
    [0.7, 1.3].
    """
    if seq_len < 1:
        raise ValueError(f"seq_len must be >= 1, got {seq_len}")
    j = NUM_JOINTS
    amp = rng.uniform(0.1, 0.5, size=j) * amplitude
    omega = rng.uniform(0.05, 0.3, size=j)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=j)
    axis = rng.standard_normal((j, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)

    t = np.arange(seq_len)[:, None]  # (T, 1)
    angles = amp * np.sin(omega * t + phase)  # (T, J)
    theta = (angles[:, :, None] * axis[None, :, :]).reshape(seq_len, j * 3)

    beta = np.clip(rng.normal(0.0, 0.5, size=SHAPE_DIM), -2.0, 2.0)

    s0 = rng.uniform(0.8, 1.2)
    s_omega = rng.uniform(0.01, 0.05)
    s_phase = rng.uniform(0.0, 2.0 * np.pi)
    cam_scale = s0 + 0.1 * np.sin(s_omega * np.arange(seq_len) + s_phase)
    t_omega = rng.uniform(0.01, 0.05, size=2)
    t_phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
    cam_trans = 0.1 * np.sin(t_omega * np.arange(seq_len)[:, None] + t_phase)

    betas = np.broadcast_to(beta, (seq_len, SHAPE_DIM))
    meshes = body_mesh(template, theta, betas).data  # (T, V, 3)
    joints = regress_joints(template, meshes).data
    keypoints = project(joints, cam_scale, cam_trans).data

    return MotionSequence(
        theta=theta,
        beta=beta,
        cam_scale=cam_scale,
        cam_trans=cam_trans,
        joints3d=joints,
        keypoints2d=keypoints,
        mid_mesh=meshes[mid_frame_index(seq_len)].copy(),
    )


# ---------------------------------------------------------------------------
# frozen feature encoder stub


@dataclass
class EncoderStub:
    """Frozen map from generative state to a C-channel feature vector.

    f = P_hidden tanh(G state + bias) + noise.  G is block-structured: the
    channels of block k respond to joint k's pose entries (plus weak global
    shape/camera terms), so before the hidden permutation, kinematically
    close channels sit next to each other.
    """

    proj: np.ndarray          # (C, 85)
    bias: np.ndarray          # (C,)
    hidden_perm: np.ndarray   # (C,) channel permutation indices
    noise_sigma: float
    block_ranges: list[tuple[int, int]] = field(default_factory=list)

    @property
    def channels(self) -> int:
        return self.proj.shape[0]


def joint_blocks(channels: int) -> list[tuple[int, int]]:
    """Contiguous channel ranges per joint; the remainder joins joint 0."""
    base = channels // NUM_JOINTS
    if base < 1:
        raise ValueError(f"need at least {NUM_JOINTS} channels, got {channels}")
    first = base + (channels - base * NUM_JOINTS)
    ranges = [(0, first)]
    start = first
    for _ in range(1, NUM_JOINTS):
        ranges.append((start, start + base))
        start += base
    return ranges


def build_stub(
    channels: int,
    rng: np.random.Generator,
    noise_sigma: float = 0.01,
    scramble: bool = True,
    pose_scale: float = 1.0,
    extra_scale: float = 0.1,
) -> EncoderStub:
    """Sample the frozen stub; the hidden permutation is drawn once here."""
    ranges = joint_blocks(channels)
    proj = np.zeros((channels, STATE_DIM))
    for k, (lo, hi) in enumerate(ranges):
        proj[lo:hi, 3 * k : 3 * k + 3] = rng.normal(0.0, pose_scale, size=(hi - lo, 3))
    proj[:, POSE_DIM:] = rng.normal(0.0, extra_scale, size=(channels, CAM_DIM + SHAPE_DIM))
    bias = rng.normal(0.0, 0.1, size=channels)
    perm = rng.permutation(channels) if scramble else np.arange(channels)
    return EncoderStub(
        proj=proj,
        bias=bias,
        hidden_perm=perm,
        noise_sigma=noise_sigma,
        block_ranges=ranges,
    )


def frame_state(seq: MotionSequence) -> np.ndarray:
    """Per-frame generative state [theta, beta, scale, trans], (T, 85)."""
    t = seq.seq_len
    return np.concatenate(
        [
            seq.theta,
            np.broadcast_to(seq.beta, (t, SHAPE_DIM)),
            seq.cam_scale[:, None],
            seq.cam_trans,
        ],
        axis=1,
    )


def encode_frames(stub: EncoderStub, seq: MotionSequence, rng: np.random.Generator | None = None) -> np.ndarray:
    """Feature matrix (T, C) for a sequence through the frozen stub."""
    state = frame_state(seq)
    clean = np.tanh(state @ stub.proj.T + stub.bias)
    # scrambled channel i carries block-ordered channel hidden_perm[i]
    scrambled = clean[:, stub.hidden_perm]
    if stub.noise_sigma > 0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        scrambled = scrambled + rng.normal(0.0, stub.noise_sigma, size=scrambled.shape)
    return scrambled


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass
class Split:
    """Stacked arrays over n sequences."""

    features: np.ndarray    # (n, T, C)
    theta: np.ndarray       # (n, T, 72)
    beta: np.ndarray        # (n, 10)
    cam_scale: np.ndarray   # (n, T)
    cam_trans: np.ndarray   # (n, T, 2)
    joints3d: np.ndarray    # (n, T, 24, 3)
    keypoints2d: np.ndarray  # (n, T, 24, 2)
    mid_mesh: np.ndarray    # (n, V, 3)

    @property
    def count(self) -> int:
        return self.features.shape[0]

    @property
    def seq_len(self) -> int:
        return self.features.shape[1]

    def mid_frame_batch(self, indices: np.ndarray) -> dict[str, np.ndarray]:
        """Features plus middle-frame ground truth for the given sequences."""
        mid = mid_frame_index(self.seq_len)
        return {
            "features": self.features[indices],
            "theta": self.theta[indices, mid],
            "beta": self.beta[indices],
            "joints3d": self.joints3d[indices, mid],
            "keypoints2d": self.keypoints2d[indices, mid],
            "mid_mesh": self.mid_mesh[indices],
        }


@dataclass
class SyntheticDataset:
    template: BodyTemplate
    stub: EncoderStub
    train: Split
    val: Split
    seed: int


def _build_split(
    template: BodyTemplate,
    stub: EncoderStub,
    seed: int,
    stream_base: int,
    count: int,
    seq_len: int,
    amplitude: float,
) -> Split:
    seqs = []
    feats = []
    for i in range(count):
        rng = make_rng(seed, stream_base + i)
        seq = generate_sequence(template, rng, seq_len, amplitude=amplitude)
        seqs.append(seq)
        feats.append(encode_frames(stub, seq, rng=rng))
    return Split(
        features=np.stack(feats),
        theta=np.stack([s.theta for s in seqs]),
        beta=np.stack([s.beta for s in seqs]),
        cam_scale=np.stack([s.cam_scale for s in seqs]),
        cam_trans=np.stack([s.cam_trans for s in seqs]),
        joints3d=np.stack([s.joints3d for s in seqs]),
        keypoints2d=np.stack([s.keypoints2d for s in seqs]),
        mid_mesh=np.stack([s.mid_mesh for s in seqs]),
    )


def make_dataset(
    seed: int,
    seq_len: int,
    channels: int,
    train_size: int,
    val_size: int,
    noise_sigma: float = 0.01,
    amplitude: float = 1.0,
    verts_per_joint: int = 4,
    template: BodyTemplate | None = None,
) -> SyntheticDataset:
    """Full train/val dataset; a pure function of its arguments."""
    if template is None:
        template = build_template(verts_per_joint=verts_per_joint, seed=seed)
    stub = build_stub(channels, make_rng(seed, STREAM_STUB), noise_sigma=noise_sigma)
    train = _build_split(template, stub, seed, STREAM_TRAIN_BASE, train_size, seq_len, amplitude)
    val = _build_split(template, stub, seed, STREAM_VAL_BASE, val_size, seq_len, amplitude)
    return SyntheticDataset(template=template, stub=stub, train=train, val=val, seed=seed)


# ---------------------------------------------------------------------------
# export / import

_SPLIT_ARRAYS = (
    "features",
    "theta",
    "beta",
    "cam_scale",
    "cam_trans",
    "joints3d",
    "keypoints2d",
    "mid_mesh",
)


def save_dataset(dataset: SyntheticDataset, out_dir: str | Path) -> None:
    """Manifest (JSON) plus raw little-endian float64 arrays per split."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"seed": dataset.seed, "splits": {}}
    for split_name in ("train", "val"):
        split = getattr(dataset, split_name)
        entry = {}
        for name in _SPLIT_ARRAYS:
            arr = getattr(split, name)
            fname = f"{split_name}.{name}.f64"
            (out / fname).write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            entry[name] = {"file": fname, "shape": list(arr.shape), "dtype": "<f8"}
        manifest["splits"][split_name] = entry
    (out / "dataset.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_split(in_dir: str | Path, split_name: str) -> Split:
    src = Path(in_dir)
    manifest = json.loads((src / "dataset.json").read_text())
    entry = manifest["splits"][split_name]
    arrays = {}
    for name in _SPLIT_ARRAYS:
        meta = entry[name]
        raw = (src / meta["file"]).read_bytes()
        arrays[name] = np.frombuffer(raw, dtype=meta["dtype"]).reshape(meta["shape"]).copy()
    return Split(**arrays)
