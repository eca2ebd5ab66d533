"""The assembled recovery model in its three variants.

hmrvit_full:    feature image -> rearranging matrix -> patchify -> encoder
hmrvit_nocrm:   feature image -> patchify -> encoder (identity rearrangement)
baseline_naive: each frame vector is one transformer token, no feature image

All variants share the regressor, the body model, the losses, and the
metrics, so differences between them are attributable to the encoding path.
Parameters are a flat name -> Tensor dict; component init draws come from
separate seeded streams, so shared components are bit-identical across
variants at the same seed.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .body import BodyTemplate, body_mesh, project, regress_joints
from .config import PipelineConfig
from .encoder import EncoderConfig, count_params, encoder_forward, init_encoder_params
from .features import apply_crm, crm_loss, make_crm, num_patches, patchify
from .losses import LossComponents, LossWeights, joint_loss, keypoint_loss, pose_loss, shape_loss, total_loss
from .regressor import ThetaState, count_regressor_params, ief_regress, init_regressor_params
from .rng import STREAM_CRM_INIT, STREAM_ENCODER_INIT, STREAM_REGRESSOR_INIT, make_rng


def encoder_config_for(cfg: PipelineConfig) -> EncoderConfig:
    if cfg.variant == "baseline_naive":
        return EncoderConfig(
            patch_len=cfg.channels,
            num_tokens=cfg.seq_len,
            dim=cfg.dim,
            depth=cfg.depth,
            heads=cfg.heads,
            out_dim=cfg.out_dim,
        )
    return EncoderConfig(
        patch_len=cfg.patch_t * cfg.patch_c,
        num_tokens=num_patches(cfg.seq_len, cfg.channels, cfg.patch_t, cfg.patch_c),
        dim=cfg.dim,
        depth=cfg.depth,
        heads=cfg.heads,
        out_dim=cfg.out_dim,
    )


class MeshRecoveryModel:
    """Parameters plus the forward pass for one variant."""

    def __init__(self, cfg: PipelineConfig, seed: int | None = None):
        self.cfg = cfg
        self.enc_cfg = encoder_config_for(cfg)
        seed = cfg.seed if seed is None else seed
        self.params: dict[str, Tensor] = {}
        if cfg.variant == "hmrvit_full":
            rng = make_rng(seed, STREAM_CRM_INIT)
            self.params["crm_logits"] = Tensor(
                rng.normal(0.0, 0.02, size=(cfg.channels, cfg.channels)), check=False
            )
        self.params.update(init_encoder_params(self.enc_cfg, make_rng(seed, STREAM_ENCODER_INIT)))
        self.params.update(init_regressor_params(cfg.out_dim, make_rng(seed, STREAM_REGRESSOR_INIT)))

    @property
    def variant(self) -> str:
        return self.cfg.variant

    def param_names(self) -> list[str]:
        return list(self.params)

    def tensors(self) -> list[Tensor]:
        return list(self.params.values())

    def num_params(self) -> int:
        return sum(t.size for t in self.params.values())

    def num_params_formula(self) -> int:
        total = count_params(self.enc_cfg) + count_regressor_params(self.cfg.out_dim)
        if self.cfg.variant == "hmrvit_full":
            total += self.cfg.channels * self.cfg.channels
        return total

    def crm(self) -> Tensor | None:
        if self.cfg.variant != "hmrvit_full":
            return None
        return make_crm(self.params["crm_logits"], self.cfg.tau)

    def encode(self, features) -> tuple[Tensor, Tensor | None]:
        """Encoded vectors (B, F) from feature images (B, T, C)."""
        feats = ad.as_tensor(features)
        if feats.ndim != 3:
            raise ValueError(f"features must be (B, T, C), got {feats.shape}")
        if self.cfg.variant == "baseline_naive":
            return encoder_forward(self.params, self.enc_cfg, feats), None
        crm = self.crm()
        image = apply_crm(feats, crm) if crm is not None else feats
        patches = patchify(image, self.cfg.patch_t, self.cfg.patch_c)
        return encoder_forward(self.params, self.enc_cfg, patches), crm

    def predict(self, features) -> tuple[ThetaState, Tensor | None]:
        z, crm = self.encode(features)
        return ief_regress(self.params, z), crm

    def predict_body(self, template: BodyTemplate, features):
        """ThetaState plus mesh, 3D joints, and 2D keypoints for a batch."""
        state, crm = self.predict(features)
        mesh = body_mesh(template, state.pose, state.shape)
        joints = regress_joints(template, mesh)
        keypoints = project(joints, state.scale, state.trans)
        return state, crm, mesh, joints, keypoints

    def batch_loss(
        self, template: BodyTemplate, batch: dict[str, np.ndarray], weights: LossWeights
    ) -> tuple[Tensor, dict[str, float], Tensor | None]:
        """Total training loss on a mid-frame batch, plus per-term values."""
        state, crm, mesh, joints, keypoints = self.predict_body(template, batch["features"])
        comps = LossComponents(
            l2d=keypoint_loss(keypoints, batch["keypoints2d"]),
            l3d=joint_loss(joints, batch["joints3d"]),
            lpose=pose_loss(state.pose, batch["theta"]),
            lshape=shape_loss(state.shape, batch["beta"]),
            lcrm=crm_loss(crm) if crm is not None else None,
        )
        total = total_loss(comps, weights)
        values = {
            "loss_2d": comps.l2d.item(),
            "loss_3d": comps.l3d.item(),
            "loss_pose": comps.lpose.item(),
            "loss_shape": comps.lshape.item(),
            "loss_crm": comps.lcrm.item() if comps.lcrm is not None else 0.0,
            "loss_total": total.item(),
        }
        return total, values, crm

    def loss_weights(self) -> LossWeights:
        cfg = self.cfg
        crm_weight = cfg.lambda_crm if cfg.variant == "hmrvit_full" else 0.0
        return LossWeights(
            lambda_2d=cfg.lambda_2d,
            lambda_3d=cfg.lambda_3d,
            lambda_pose=cfg.lambda_pose,
            lambda_shape=cfg.lambda_shape,
            lambda_crm=crm_weight,
        )
