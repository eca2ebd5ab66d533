"""Configurable parametric body: shape blendshapes, forward kinematics over a
24-joint tree, linear blend skinning, joint regression, and weak-perspective
projection.

The template is procedural: a small humanoid with a fixed 24-joint kinematic
tree (standard SMPL-style ordering), a ring of vertices around each joint,
inverse-distance skinning weights over the two nearest joints, and a joint
regressor that averages each joint's ring.  Pose is 72 axis-angle numbers
(24 joints x 3), shape is 10 blend coefficients, all in meters / radians.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import STREAM_TEMPLATE, make_rng

NUM_JOINTS = 24
NUM_SHAPE_COEFFS = 10

# Kinematic tree, SMPL-style joint ordering; parents[0] is the root sentinel.
PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21],
    dtype=np.int64,
)

# Rest joint positions in meters, pelvis at the origin, y up, x left/right.
_REST_JOINTS = np.array(
    [
        [0.00, 0.00, 0.00],   # pelvis
        [0.09, -0.06, 0.00],  # left hip
        [-0.09, -0.06, 0.00], # right hip
        [0.00, 0.11, 0.00],   # spine1
        [0.10, -0.46, 0.00],  # left knee
        [-0.10, -0.46, 0.00], # right knee
        [0.00, 0.24, 0.00],   # spine2
        [0.11, -0.86, 0.00],  # left ankle
        [-0.11, -0.86, 0.00], # right ankle
        [0.00, 0.30, 0.00],   # spine3
        [0.12, -0.93, 0.12],  # left foot
        [-0.12, -0.93, 0.12], # right foot
        [0.00, 0.42, 0.00],   # neck
        [0.05, 0.37, 0.00],   # left collar
        [-0.05, 0.37, 0.00],  # right collar
        [0.00, 0.52, 0.00],   # head
        [0.17, 0.40, 0.00],   # left shoulder
        [-0.17, 0.40, 0.00],  # right shoulder
        [0.43, 0.40, 0.00],   # left elbow
        [-0.43, 0.40, 0.00],  # right elbow
        [0.68, 0.40, 0.00],   # left wrist
        [-0.68, 0.40, 0.00],  # right wrist
        [0.77, 0.40, 0.00],   # left hand
        [-0.77, 0.40, 0.00],  # right hand
    ]
)


@dataclass
class BodyTemplate:
    """Rest mesh plus the linear operators that drive it.

    rest_vertices: (V, 3) meters
    shape_dirs: (V, 3, 10) meters per unit shape coefficient
    skin_weights: (V, J) nonnegative, rows sum to 1
    joint_regressor: (J, V) nonnegative, rows sum to 1
    parents: (J,) int, parents[0] == -1, parents[j] < j
    """

    rest_vertices: np.ndarray
    shape_dirs: np.ndarray
    skin_weights: np.ndarray
    joint_regressor: np.ndarray
    parents: np.ndarray

    def __post_init__(self):
        v = self.rest_vertices.shape[0]
        j = self.parents.shape[0]
        if j != NUM_JOINTS:
            raise ValueError(f"template must have {NUM_JOINTS} joints, got {j}")
        if self.rest_vertices.shape != (v, 3):
            raise ValueError(f"rest_vertices must be (V, 3), got {self.rest_vertices.shape}")
        if self.shape_dirs.shape != (v, 3, NUM_SHAPE_COEFFS):
            raise ValueError(f"shape_dirs must be (V, 3, {NUM_SHAPE_COEFFS}), got {self.shape_dirs.shape}")
        if self.skin_weights.shape != (v, j):
            raise ValueError(f"skin_weights must be (V, J), got {self.skin_weights.shape}")
        if self.joint_regressor.shape != (j, v):
            raise ValueError(f"joint_regressor must be (J, V), got {self.joint_regressor.shape}")
        for arr in (self.rest_vertices, self.shape_dirs, self.skin_weights, self.joint_regressor):
            if not np.all(np.isfinite(arr)):
                raise ValueError("template arrays must be finite")
        if np.any(self.skin_weights < 0) or np.any(self.joint_regressor < 0):
            raise ValueError("skinning weights and joint regressor must be nonnegative")
        if np.max(np.abs(self.skin_weights.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("skin weight rows must sum to 1")
        if np.max(np.abs(self.joint_regressor.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("joint regressor rows must sum to 1")
        if self.parents[0] != -1 or np.any(self.parents[1:] >= np.arange(1, j)):
            raise ValueError("parents must form a tree with parents[j] < j and root sentinel -1")

    @property
    def num_vertices(self) -> int:
        return self.rest_vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return self.parents.shape[0]


def build_template(verts_per_joint: int = 4, seed: int = 0) -> BodyTemplate:
    """Procedural humanoid template with verts_per_joint ring vertices per joint.

    Ring offsets around each joint sum to zero, so the block-averaging joint
    regressor reproduces the designed rest joints exactly.  Skinning weights
    are inverse-distance over the two nearest rest joints, with the nearer
    weight computed first and the second set to 1 minus it so rows sum to
    exactly 1.
    """
    if verts_per_joint < 3:
        raise ValueError(f"verts_per_joint must be >= 3, got {verts_per_joint}")
    rng = make_rng(seed, STREAM_TEMPLATE)
    j = NUM_JOINTS
    v = j * verts_per_joint
    radius = 0.05

    verts = np.zeros((v, 3))
    for k in range(j):
        phi = 2.0 * np.pi * np.arange(verts_per_joint) / verts_per_joint
        ring = radius * np.stack([np.cos(phi), np.zeros_like(phi), np.sin(phi)], axis=1)
        # random orientation per joint so rings are not globally coplanar
        rot = _random_rotation(rng)
        verts[k * verts_per_joint : (k + 1) * verts_per_joint] = _REST_JOINTS[k] + ring @ rot.T

    regressor = np.zeros((j, v))
    for k in range(j):
        regressor[k, k * verts_per_joint : (k + 1) * verts_per_joint] = 1.0 / verts_per_joint

    weights = np.zeros((v, j))
    for i in range(v):
        d = np.linalg.norm(_REST_JOINTS - verts[i], axis=1)
        j1, j2 = np.argsort(d)[:2]
        inv1, inv2 = 1.0 / (d[j1] + 1e-6), 1.0 / (d[j2] + 1e-6)
        w1 = inv1 / (inv1 + inv2)
        weights[i, j1] = w1
        weights[i, j2] = 1.0 - w1

    dirs = np.zeros((v, 3, NUM_SHAPE_COEFFS))
    dirs[:, :, 0] = 0.05 * verts                      # overall scale
    dirs[:, 1, 1] = 0.08 * verts[:, 1]                # height
    dirs[:, 0, 2] = 0.05 * verts[:, 0]                # width
    homog = np.concatenate([verts, np.ones((v, 1))], axis=1)
    for k in range(3, NUM_SHAPE_COEFFS):
        field = rng.standard_normal((4, 3)) * 0.02
        dirs[:, :, k] = homog @ field

    return BodyTemplate(
        rest_vertices=verts,
        shape_dirs=dirs,
        skin_weights=weights,
        joint_regressor=regressor,
        parents=PARENTS.copy(),
    )


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


# ---------------------------------------------------------------------------
# differentiable body function

_TAYLOR_CUTOFF_SQ = 1e-16  # rotation angle below 1e-8 rad uses series terms


def rotation_from_axis_angle(aa: Tensor) -> Tensor:
    """Rotation matrices from axis-angle vectors, (..., 3) -> (..., 3, 3).

    Uses R = I + (sin a / a) K + ((1 - cos a) / a^2) K^2 with K the skew
    matrix of the unnormalized vector.  Below angle 1e-8 the two ratios
    switch to second-order series in a^2, keeping the map smooth at zero.
    """
    aa = ad.as_tensor(aa)
    if aa.shape[-1] != 3:
        raise ValueError(f"axis-angle vectors must have last dim 3, got {aa.shape}")
    batch = aa.shape[:-1]

    t2 = (aa * aa).sum(axis=-1, keepdims=True)  # squared angle, (..., 1)
    small = t2.data < _TAYLOR_CUTOFF_SQ
    guard = Tensor(np.where(small, 1.0, 0.0), check=False)  # keeps sqrt/div finite
    t2_safe = t2 + guard
    angle = ad.sqrt(t2_safe)

    sin_ratio = ad.where(
        small,
        1.0 - t2 * (1.0 / 6.0) + (t2 * t2) * (1.0 / 120.0),
        ad.sin(angle) / angle,
    )
    cos_ratio = ad.where(
        small,
        0.5 - t2 * (1.0 / 24.0) + (t2 * t2) * (1.0 / 720.0),
        (1.0 - ad.cos(angle)) / t2_safe,
    )

    k = _skew(aa)
    k2 = ad.matmul(k, k)
    identity = Tensor(np.broadcast_to(np.eye(3), batch + (3, 3)).copy(), check=False)
    sin_r = sin_ratio.reshape(batch + (1, 1))
    cos_r = cos_ratio.reshape(batch + (1, 1))
    return identity + k * sin_r + k2 * cos_r


def _skew(aa: Tensor) -> Tensor:
    x = aa[..., 0:1]
    y = aa[..., 1:2]
    z = aa[..., 2:3]
    zero = x * 0.0
    rows = [
        ad.concat([zero, -z, y], axis=-1),
        ad.concat([z, zero, -x], axis=-1),
        ad.concat([-y, x, zero], axis=-1),
    ]
    return ad.stack(rows, axis=-2)


def rodrigues(aa) -> Tensor:
    """Single axis-angle vector (3,) to a 3x3 rotation matrix."""
    aa = ad.as_tensor(aa)
    if aa.shape != (3,):
        raise ValueError(f"rodrigues expects shape (3,), got {aa.shape}")
    return rotation_from_axis_angle(aa.reshape((1, 3))).reshape((3, 3))


def shaped_vertices(template: BodyTemplate, beta) -> Tensor:
    """Rest vertices plus the shape blend, (10,) or (B, 10) -> (V, 3) / (B, V, 3)."""
    beta = ad.as_tensor(beta)
    single = beta.ndim == 1
    if beta.shape[-1] != NUM_SHAPE_COEFFS:
        raise ValueError(f"beta must have {NUM_SHAPE_COEFFS} coefficients, got {beta.shape}")
    b2 = beta.reshape((1, -1)) if single else beta
    v = template.num_vertices
    basis = Tensor(
        np.ascontiguousarray(template.shape_dirs.transpose(2, 0, 1).reshape(NUM_SHAPE_COEFFS, v * 3)),
        check=False,
    )
    rest = Tensor(template.rest_vertices.reshape(1, v * 3), check=False)
    out = (rest + ad.matmul(b2, basis)).reshape((b2.shape[0], v, 3))
    return out.reshape((v, 3)) if single else out


def body_mesh(template: BodyTemplate, theta, beta) -> Tensor:
    """Posed, skinned mesh from pose theta (72,) and shape beta (10,).

    Accepts leading batch axes on both parameters.  Forward kinematics
    composes per-joint world transforms along the parent chain from the
    regressed rest joints; vertices follow by linear blend skinning with
    the rest pose as the inverse bind.
    """
    theta = ad.as_tensor(theta)
    beta = ad.as_tensor(beta)
    single = theta.ndim == 1
    if theta.shape[-1] != NUM_JOINTS * 3:
        raise ValueError(f"theta must have {NUM_JOINTS * 3} entries, got {theta.shape}")
    if single != (beta.ndim == 1):
        raise ValueError("theta and beta must both be single or both batched")
    if single:
        theta = theta.reshape((1, NUM_JOINTS * 3))
        beta = beta.reshape((1, NUM_SHAPE_COEFFS))
    n = theta.shape[0]
    v = template.num_vertices

    shaped = shaped_vertices(template, beta)  # (B, V, 3)
    regressor = Tensor(template.joint_regressor, check=False)
    rest_joints = ad.matmul(regressor, shaped)  # (B, J, 3)

    rot = rotation_from_axis_angle(theta.reshape((n, NUM_JOINTS, 3)))  # (B, J, 3, 3)

    world_rot = [rot[:, 0]]
    world_loc = [rest_joints[:, 0]]
    for j in range(1, NUM_JOINTS):
        p = int(template.parents[j])
        offset = rest_joints[:, j] - rest_joints[:, p]  # (B, 3)
        world_rot.append(ad.matmul(world_rot[p], rot[:, j]))
        moved = ad.matmul(world_rot[p], offset.reshape((n, 3, 1))).reshape((n, 3))
        world_loc.append(world_loc[p] + moved)
    g_rot = ad.stack(world_rot, axis=1)  # (B, J, 3, 3)
    g_loc = ad.stack(world_loc, axis=1)  # (B, J, 3)

    # inverse bind: translation part after removing the rest joint position
    bind = g_loc - ad.matmul(g_rot, rest_joints.reshape((n, NUM_JOINTS, 3, 1))).reshape(
        (n, NUM_JOINTS, 3)
    )

    verts_t = shaped.transpose((0, 2, 1)).reshape((n, 1, 3, v))
    posed = ad.matmul(g_rot, verts_t) + bind.reshape((n, NUM_JOINTS, 3, 1))  # (B, J, 3, V)
    weights = Tensor(
        np.ascontiguousarray(template.skin_weights.T).reshape(1, NUM_JOINTS, 1, v), check=False
    )
    mesh = (posed * weights).sum(axis=1).transpose((0, 2, 1))  # (B, V, 3)
    return mesh.reshape((v, 3)) if single else mesh


def regress_joints(template: BodyTemplate, mesh) -> Tensor:
    """3D joints from a mesh via the linear joint regressor."""
    mesh = ad.as_tensor(mesh)
    v = template.num_vertices
    if mesh.shape[-2:] != (v, 3):
        raise ValueError(f"mesh must end in ({v}, 3), got {mesh.shape}")
    return ad.matmul(Tensor(template.joint_regressor, check=False), mesh)


def project(joints, scale, trans) -> Tensor:
    """Weak-perspective projection: drop z, multiply by scale, add translation.

    joints: (J, 3) or (B, J, 3); scale: scalar or (B,); trans: (2,) or (B, 2).
    """
    joints = ad.as_tensor(joints)
    scale = ad.as_tensor(scale)
    trans = ad.as_tensor(trans)
    if joints.shape[-1] != 3:
        raise ValueError(f"joints must end in 3 coords, got {joints.shape}")
    if np.any(scale.data <= 0):
        raise ValueError("camera scale must be positive")
    xy = joints[..., 0:2]
    if joints.ndim == 2:
        return xy * scale.reshape((1, 1)) + trans.reshape((1, 2))
    n = joints.shape[0]
    return xy * scale.reshape((n, 1, 1)) + trans.reshape((n, 1, 2))


# ---------------------------------------------------------------------------
# template import/export

_TEMPLATE_ARRAYS = ("rest_vertices", "shape_dirs", "skin_weights", "joint_regressor", "parents")


def save_template(template: BodyTemplate, out_dir: str | Path) -> None:
    """Manifest (JSON) plus raw little-endian float64 sidecar files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name in _TEMPLATE_ARRAYS:
        arr = np.asarray(getattr(template, name), dtype=np.float64)
        fname = f"{name}.f64"
        (out / fname).write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        manifest[name] = {"file": fname, "shape": list(arr.shape), "dtype": "<f8", "order": "C"}
    (out / "template.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_template(in_dir: str | Path) -> BodyTemplate:
    src = Path(in_dir)
    manifest = json.loads((src / "template.json").read_text())
    arrays = {}
    for name in _TEMPLATE_ARRAYS:
        entry = manifest[name]
        raw = (src / entry["file"]).read_bytes()
        arrays[name] = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
    arrays["parents"] = arrays["parents"].astype(np.int64)
    return BodyTemplate(**arrays)
