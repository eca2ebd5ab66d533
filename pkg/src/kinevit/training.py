"""Optimizer, deterministic training loop, checkpointing, and evaluation.

Training is single-threaded and a pure function of (config, dataset): the
batch sampler runs on its own seeded stream, metrics rows are written with a
fixed float format, and checkpoints are a JSON manifest plus raw
little-endian float64 arrays, so identical runs produce byte-identical
artifacts.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor
from .body import BodyTemplate, build_template
from .config import PipelineConfig, build_config
from .features import crm_loss, make_crm, nearest_permutation
from .metrics import EvalReport, mpjpe, pa_mpjpe, pve
from .model import MeshRecoveryModel
from .rng import (
    STREAM_CRM_INIT,
    STREAM_SAMPLER,
    STREAM_STUB,
    STREAM_TRAIN_BASE,
    make_rng,
    restore_rng,
    rng_state,
)
from .synthetic import Split, SyntheticDataset, build_stub, encode_frames, generate_sequence

CHECKPOINT_VERSION = "1"
DIVERGENCE_LIMIT = 1e8

METRICS_HEADER = (
    "step,epoch,loss_2d,loss_3d,loss_pose,loss_shape,loss_crm,loss_total,"
    "crm_rowsum_dev,crm_perm_dist,val_pve_mm,val_mpjpe_mm,val_pa_mpjpe_mm"
)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint_dir: str | None = None):
        super().__init__(message)
        self.checkpoint_dir = checkpoint_dir


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """First/second-moment adaptive steps with bias correction."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0:
            raise ValueError("lr must be positive")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self, grads: list[np.ndarray], names: list[str] | None = None) -> None:
        """One update; rejects the whole step on any non-finite gradient."""
        if len(grads) != len(self.params):
            raise ValueError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        for i, g in enumerate(grads):
            if g.shape != self.params[i].data.shape:
                raise ValueError(
                    f"gradient {i} shape {g.shape} != parameter shape {self.params[i].data.shape}"
                )
            if not np.all(np.isfinite(g)):
                name = names[i] if names else f"param{i}"
                raise FloatingPointError(f"non-finite gradient for tensor {name!r}")
        self.t += 1
        step_size = self.lr / (1.0 - self.beta1 ** self.t)
        inv_sqrt_bc2 = 1.0 / np.sqrt(1.0 - self.beta2 ** self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            denom = np.sqrt(v)
            denom *= inv_sqrt_bc2
            denom += self.eps
            p.data -= step_size * m / denom


# ---------------------------------------------------------------------------
# checkpoint io


def save_checkpoint(
    out_dir: str | Path,
    model: MeshRecoveryModel,
    optimizer: Adam | None,
    sampler_rng: np.random.Generator,
    step: int,
    epoch: int,
) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, dict] = {}

    def dump(name: str, arr: np.ndarray) -> None:
        fname = name + ".f64"
        (out / fname).write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        arrays[name] = {"file": fname, "shape": list(arr.shape), "dtype": "<f8"}

    for name, tensor in model.params.items():
        dump("param." + name, tensor.data)
    adam_meta = None
    if optimizer is not None:
        for name, m, v in zip(model.params, optimizer.m, optimizer.v):
            dump("adam_m." + name, m)
            dump("adam_v." + name, v)
        adam_meta = {
            "t": optimizer.t,
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
        }
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "step": step,
        "epoch": epoch,
        "adam": adam_meta,
        "rng": rng_state(sampler_rng),
        "arrays": arrays,
    }
    (out / "checkpoint.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    return str(out)


@dataclass
class LoadedCheckpoint:
    model: MeshRecoveryModel
    optimizer: Adam | None
    sampler_rng: np.random.Generator
    step: int
    epoch: int
    config: PipelineConfig


def load_checkpoint(in_dir: str | Path) -> LoadedCheckpoint:
    src = Path(in_dir)
    manifest = json.loads((src / "checkpoint.json").read_text())
    if manifest["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest['version']!r}")
    cfg = build_config(manifest["config"]["preset"], file_values=manifest["config"])

    def pull(name: str) -> np.ndarray:
        meta = manifest["arrays"][name]
        raw = (src / meta["file"]).read_bytes()
        return np.frombuffer(raw, dtype=meta["dtype"]).reshape(meta["shape"]).copy()

    model = MeshRecoveryModel(cfg)
    for name in model.params:
        model.params[name] = Tensor(pull("param." + name), check=False)
    optimizer = None
    if manifest["adam"] is not None:
        meta = manifest["adam"]
        optimizer = Adam(
            model.tensors(), lr=meta["lr"], beta1=meta["beta1"],
            beta2=meta["beta2"], eps=meta["eps"],
        )
        optimizer.t = meta["t"]
        optimizer.m = [pull("adam_m." + n) for n in model.params]
        optimizer.v = [pull("adam_v." + n) for n in model.params]
    return LoadedCheckpoint(
        model=model,
        optimizer=optimizer,
        sampler_rng=restore_rng(manifest["rng"]),
        step=manifest["step"],
        epoch=manifest["epoch"],
        config=cfg,
    )


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model: MeshRecoveryModel, template: BodyTemplate, split: Split,
             batch_size: int = 64) -> tuple[EvalReport, dict[str, np.ndarray]]:
    """Metrics over a split on read-only parameters; also returns per-sample
    values for invariant checks."""
    n = split.count
    pves, mpjpes, pas = [], [], []
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        batch = split.mid_frame_batch(idx)
        state, crm, mesh, joints, keypoints = model.predict_body(template, batch["features"])
        for b in range(len(idx)):
            pred_j = joints.data[b]
            gt_j = batch["joints3d"][b]
            mpjpes.append(mpjpe(pred_j, gt_j))
            pas.append(pa_mpjpe(pred_j, gt_j))
            pves.append(pve(mesh.data[b], batch["mid_mesh"][b], pred_j[0], gt_j[0]))
    report = EvalReport(
        pve_mm=float(np.mean(pves)),
        mpjpe_mm=float(np.mean(mpjpes)),
        pa_mpjpe_mm=float(np.mean(pas)),
        count=n,
    )
    per_sample = {
        "pve_mm": np.array(pves),
        "mpjpe_mm": np.array(mpjpes),
        "pa_mpjpe_mm": np.array(pas),
    }
    return report, per_sample


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    checkpoint_dir: str
    best_checkpoint_dir: str
    metrics_path: str
    untrained: EvalReport
    final: EvalReport
    best: EvalReport
    steps: int


def train(cfg: PipelineConfig, dataset: SyntheticDataset, out_dir: str | Path) -> TrainResult:
    """Deterministic training run; writes metrics.csv plus last/best checkpoints."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    template = dataset.template
    model = MeshRecoveryModel(cfg)
    names = model.param_names()
    tensors = model.tensors()
    optimizer = Adam(tensors, lr=cfg.lr)
    weights = model.loss_weights()
    sampler = make_rng(cfg.seed, STREAM_SAMPLER)

    metrics_path = out / "metrics.csv"
    lines = [METRICS_HEADER]

    untrained, _ = evaluate(model, template, dataset.val)
    best = untrained
    best_dir = out / "checkpoint_best"
    save_checkpoint(best_dir, model, optimizer, sampler, step=0, epoch=0)
    lines.append(_eval_row(step=0, epoch=0, model=model, values=None, report=untrained))

    step = 0
    n = dataset.train.count
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = sampler.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                batch = dataset.train.mid_frame_batch(idx)
                with Tape() as tape:
                    total, values, crm = model.batch_loss(template, batch, weights)
                if not np.isfinite(values["loss_total"]) or values["loss_total"] > DIVERGENCE_LIMIT:
                    raise TrainingDiverged(
                        f"loss {values['loss_total']} at step {step}", None
                    )
                grads = tape.grad(total, tensors)
                optimizer.step(grads, names=names)
                step += 1
                if step % cfg.log_every == 0:
                    lines.append(_train_row(step, epoch, values, crm))
            report, _ = evaluate(model, template, dataset.val)
            lines.append(_eval_row(step=step, epoch=epoch, model=model, values=None, report=report))
            if report.mpjpe_mm < best.mpjpe_mm:
                best = report
                save_checkpoint(best_dir, model, optimizer, sampler, step=step, epoch=epoch)
    except TrainingDiverged as diverged:
        last_dir = save_checkpoint(out / "checkpoint_last", model, optimizer, sampler, step, cfg.epochs)
        metrics_path.write_text("\n".join(lines) + "\n")
        raise TrainingDiverged(str(diverged), last_dir) from None

    last_dir = save_checkpoint(out / "checkpoint_last", model, optimizer, sampler, step, cfg.epochs)
    metrics_path.write_text("\n".join(lines) + "\n")
    final, _ = evaluate(model, template, dataset.val)
    return TrainResult(
        checkpoint_dir=last_dir,
        best_checkpoint_dir=str(best_dir),
        metrics_path=str(metrics_path),
        untrained=untrained,
        final=final,
        best=best,
        steps=step,
    )


def _crm_diagnostics(crm) -> tuple[float, float]:
    rowsum_dev = float(np.abs(crm.data.sum(axis=1) - 1.0).max())
    _, dist = nearest_permutation(crm)
    return rowsum_dev, dist


def _train_row(step: int, epoch: int, values: dict[str, float], crm) -> str:
    if crm is not None:
        rowsum_dev, dist = _crm_diagnostics(crm)
        crm_cols = f"{_fmt(rowsum_dev)},{_fmt(dist)}"
    else:
        crm_cols = ","
    loss_cols = ",".join(
        _fmt(values[k])
        for k in ("loss_2d", "loss_3d", "loss_pose", "loss_shape", "loss_crm", "loss_total")
    )
    return f"{step},{epoch},{loss_cols},{crm_cols},,,"


def _eval_row(step: int, epoch: int, model: MeshRecoveryModel, values, report: EvalReport) -> str:
    crm = model.crm()
    if crm is not None:
        rowsum_dev, dist = _crm_diagnostics(crm)
        crm_cols = f"{_fmt(rowsum_dev)},{_fmt(dist)}"
    else:
        crm_cols = ","
    return (
        f"{step},{epoch},,,,,,,{crm_cols},"
        f"{_fmt(report.pve_mm)},{_fmt(report.mpjpe_mm)},{_fmt(report.pa_mpjpe_mm)}"
    )


# ---------------------------------------------------------------------------
# channel unscrambling task for the rearranging matrix


@dataclass
class UnscrambleResult:
    initial_distance: float
    final_distance: float
    mean_column_max: float
    max_rowsum_dev: float
    max_colsum_dev: float
    crm: np.ndarray
    target_perm: np.ndarray
    losses: list[float]


def train_crm_unscrambler(
    channels: int = 25,
    frames: int = 256,
    steps: int = 2000,
    lr: float = 0.05,
    seed: int = 0,
    tau: float = 1.0,
    lambda_crm: float = 1.0,
    noise_sigma: float = 0.01,
) -> UnscrambleResult:
    """Train rearranging-matrix logits to undo a hidden channel permutation.

    Block-ordered features come from the frozen stub on one long synthetic
    sequence; the observed features are a column permutation of them.  The
    task loss is squared reconstruction of the block-ordered features from
    the observed ones, plus the doubly-stochastic regularizer.
    """
    template = build_template(seed=seed)
    stub = build_stub(channels, make_rng(seed, STREAM_STUB), noise_sigma=noise_sigma, scramble=False)
    rng = make_rng(seed, STREAM_TRAIN_BASE)
    seq = generate_sequence(template, rng, frames)
    blocked = encode_frames(stub, seq, rng=rng)  # (frames, C), block-ordered
    perm = make_rng(seed, STREAM_STUB + 1).permutation(channels)
    observed = blocked[:, perm]  # undoing this needs crm[i, perm[i]] = 1

    obs_t = Tensor(observed, check=False)
    target_t = Tensor(blocked, check=False)
    logits = Tensor(
        make_rng(seed, STREAM_CRM_INIT).normal(0.0, 0.02, size=(channels, channels)), check=False
    )

    _, initial_distance = nearest_permutation(make_crm(logits, tau))
    optimizer = Adam([logits], lr=lr)
    losses = []
    for _ in range(steps):
        with Tape() as tape:
            crm = make_crm(logits, tau)
            diff = obs_t @ crm - target_t
            task = (diff * diff).reshape((frames, -1)).sum(axis=1).mean()
            loss = task + crm_loss(crm) * lambda_crm
        losses.append(loss.item())
        grads = tape.grad(loss, [logits])
        optimizer.step(grads)

    final = make_crm(logits, tau).data
    _, final_distance = nearest_permutation(final)
    return UnscrambleResult(
        initial_distance=initial_distance,
        final_distance=final_distance,
        mean_column_max=float(final.max(axis=0).mean()),
        max_rowsum_dev=float(np.abs(final.sum(axis=1) - 1.0).max()),
        max_colsum_dev=float(np.abs(final.sum(axis=0) - 1.0).max()),
        crm=final,
        target_perm=perm,
        losses=losses,
    )
