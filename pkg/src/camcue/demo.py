"""Self-contained training demo for the fusion + pose-adapter stack.

The synthetic task: four fixed context cameras orbit a procedurally built
room.  Per-view camera tokens Z come from Plucker ray maps; visual tokens X
are deterministic sinusoidal features of the rendered context depths; the
"text" tokens H encode each sample's target pose (translation + Euler
angles) through a fixed random projection of sinusoidal features, plus
seeded noise - a stand-in for language hidden states.  Targets live on a
fixed-radius ring inside the room with a language-free readout, so the head
can regress them from H alone.

Training is full-batch gradient descent on the weighted pose loss (the
language term is externally supplied and fed zero here).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import DivergedLoss
from .fusion import (
    AdapterConfig,
    AdapterParams,
    FusionParams,
    LossConfig,
    PARAM_FIELDS,
    RawPose,
    backward,
    forward_pose_head,
    init_adapter_params,
    init_fusion_params,
    pose_loss,
    pose_loss_grad,
    total_loss,
)
from .geometry import CameraIntrinsics, CameraPose, euler_angles_zyx, look_at
from .metrics import PoseAccuracyReport, PoseErrorSample, accuracy_report, pose_errors
from .plucker import PatchConfig, init_embed_params, patchify_embed, ray_map
from .synthetic import make_scene, render_depth, sample_trajectory

_FEATURE_FREQS = (0.5, 1.0, 2.0)


@dataclass(frozen=True)
class TrainDemoConfig:
    """Shapes and schedule of the toy pose-regression task."""

    model_dim: int = 32
    heads: int = 4
    n_queries: int = 16
    query_out_dim: int = 32
    text_tokens: int = 4
    n_train: int = 64
    n_heldout: int = 32
    lr: float = 2.0
    log_every: int = 10
    eval_every: int = 200
    depth_size: int = 32
    ray_size: int = 16
    patch_size: int = 8
    n_obstacles: int = 2
    noise_scale: float = 0.01
    lambda_lang: float = 1.0
    lambda_pose: float = 0.2

    def adapter(self) -> AdapterConfig:
        return AdapterConfig(
            model_dim=self.model_dim,
            n_queries=self.n_queries,
            heads=self.heads,
            query_out_dim=self.query_out_dim,
        )

    def loss(self) -> LossConfig:
        return LossConfig(lambda_lang=self.lambda_lang, lambda_pose=self.lambda_pose)


@dataclass(frozen=True)
class HeldoutEval:
    step: int
    median_rot_deg: float
    median_trans: float


@dataclass
class TrainingReport:
    """Loss trajectory, held-out error trajectory, and the final accuracy."""

    seed: int
    steps: int
    lr: float
    losses: list[tuple[int, float]]
    heldout: list[HeldoutEval]
    final_accuracy: PoseAccuracyReport

    @property
    def initial_loss(self) -> float:
        return self.losses[0][1]

    @property
    def final_loss(self) -> float:
        return self.losses[-1][1]

    def to_json_lines(self) -> list[str]:
        lines = [
            json.dumps({"kind": "meta", "seed": self.seed, "steps": self.steps,
                        "lr": self.lr})
        ]
        lines += [
            json.dumps({"kind": "loss", "step": s, "loss": v}) for s, v in self.losses
        ]
        lines += [
            json.dumps({
                "kind": "heldout", "step": e.step,
                "median_rot_deg": e.median_rot_deg, "median_trans": e.median_trans,
            })
            for e in self.heldout
        ]
        lines.append(
            json.dumps({"kind": "final_accuracy",
                        "report": self.final_accuracy.to_json_dict()})
        )
        return lines


def _pose_features(pose: CameraPose) -> np.ndarray:
    """Sinusoidal embedding of translation plus ZYX Euler angles."""
    yaw, pitch, roll = euler_angles_zyx(pose.rotation)
    params = np.concatenate([pose.translation, [yaw, pitch, roll]])
    feats = [f(w * p) for p in params for w in _FEATURE_FREQS for f in (np.sin, np.cos)]
    return np.array(feats)


@dataclass(frozen=True)
class _DemoTask:
    x: np.ndarray
    z: np.ndarray
    train_h: list[np.ndarray]
    train_gt: list[CameraPose]
    heldout_h: list[np.ndarray]
    heldout_gt: list[CameraPose]


def _build_task(seed: int, cfg: TrainDemoConfig) -> _DemoTask:
    scene = make_scene(seed, cfg.n_obstacles)
    contexts = sample_trajectory(scene, 4, seed, "orbit")
    ds = cfg.depth_size
    intr = CameraIntrinsics(fx=ds, fy=ds, cx=ds / 2, cy=ds / 2, width=ds, height=ds)
    patch = PatchConfig(
        canonical_width=cfg.ray_size,
        canonical_height=cfg.ray_size,
        patch_size=cfg.patch_size,
        token_dim=cfg.model_dim,
    )
    embed = init_embed_params(patch, seed + 1)

    feat_rng = np.random.default_rng(seed + 2)
    depth_freqs = feat_rng.uniform(0.3, 2.0, size=cfg.model_dim)
    depth_phases = feat_rng.uniform(0.0, 2.0 * np.pi, size=cfg.model_dim)

    z_views = []
    x_views = []
    for _, pose in contexts:
        z_views.append(patchify_embed(ray_map(pose, intr, cfg.ray_size, cfg.ray_size),
                                      patch, embed).tokens)
        depth = render_depth(scene, pose, intr, ds, ds).values
        side = cfg.ray_size // cfg.patch_size  # patches per axis
        cell = ds // side
        means = depth.reshape(side, cell, side, cell).mean(axis=(1, 3)).ravel()
        x_views.append(np.sin(np.outer(means, depth_freqs) + depth_phases))
    z = np.vstack(z_views)
    x = np.vstack(x_views)

    # fixed random projection from pose features to the text-token block
    n_feats = 6 * 2 * len(_FEATURE_FREQS)
    proj_rng = np.random.default_rng(seed + 3)
    proj = proj_rng.normal(0.0, 1.0 / np.sqrt(n_feats),
                           size=(n_feats, cfg.text_tokens * cfg.model_dim))

    scene_center = scene.room.center
    ring_radius = 0.7 * float(min(scene.room.half[0], scene.room.half[1]))
    sample_rng = np.random.default_rng(seed + 4)

    def draw(n: int) -> tuple[list[np.ndarray], list[CameraPose]]:
        hs, gts = [], []
        for _ in range(n):
            theta = sample_rng.uniform(0.0, 2.0 * np.pi)
            dz = sample_rng.uniform(-0.15, 0.15)
            eye = scene_center + np.array(
                [ring_radius * np.cos(theta), ring_radius * np.sin(theta), dz]
            )
            gaze = np.array([scene_center[0], scene_center[1], eye[2]])
            gt = look_at(eye, gaze)
            h = (_pose_features(gt) @ proj).reshape(cfg.text_tokens, cfg.model_dim)
            h = h + sample_rng.normal(0.0, cfg.noise_scale, size=h.shape)
            hs.append(h)
            gts.append(gt)
        return hs, gts

    train_h, train_gt = draw(cfg.n_train)
    heldout_h, heldout_gt = draw(cfg.n_heldout)
    return _DemoTask(x=x, z=z, train_h=train_h, train_gt=train_gt,
                     heldout_h=heldout_h, heldout_gt=heldout_gt)


def _batch_pass(task, fusion, acfg, params, loss_cfg, with_grads: bool):
    """Mean weighted loss over the training batch, optionally with gradients."""
    n = len(task.train_h)
    acc: dict[str, np.ndarray] | None = None
    mean_pose = 0.0
    for h, gt in zip(task.train_h, task.train_gt):
        tape = forward_pose_head(task.x, task.z, h, fusion, acfg, params)
        mean_pose += pose_loss(RawPose(m=tape.pred), gt) / n
        if with_grads:
            scale = loss_cfg.lambda_pose / n
            grads = backward(tape, scale * pose_loss_grad(RawPose(m=tape.pred), gt))
            if acc is None:
                acc = {name: np.array(g) for name, g in grads.named()
                       if name in PARAM_FIELDS}
            else:
                for name, g in grads.named():
                    if name in PARAM_FIELDS:
                        acc[name] += g
    return total_loss(0.0, mean_pose, loss_cfg), acc


def _heldout_samples(task, fusion, acfg, params) -> list[PoseErrorSample]:
    out = []
    for h, gt in zip(task.heldout_h, task.heldout_gt):
        tape = forward_pose_head(task.x, task.z, h, fusion, acfg, params)
        out.append(pose_errors(RawPose(m=tape.pred), gt))
    return out


def _heldout_eval(step, samples: list[PoseErrorSample]) -> HeldoutEval:
    return HeldoutEval(
        step=step,
        median_rot_deg=float(np.median([s.rot_err_deg for s in samples])),
        median_trans=float(np.median([s.trans_err for s in samples])),
    )


def train_adapter_demo(
    seed: int = 0,
    steps: int = 2000,
    lr: float | None = None,
    cfg: TrainDemoConfig | None = None,
) -> TrainingReport:
    """Gradient-descent demo on the synthetic pose-regression task.

    The language term of the total loss is fed zero (it is supplied
    externally in the full system), so training minimizes
    lambda_pose * mean pose loss.  Raises :class:`DivergedLoss` with the
    step index if the loss goes non-finite.
    """
    cfg = cfg or TrainDemoConfig()
    if lr is not None:
        cfg = replace(cfg, lr=lr)
    task = _build_task(seed, cfg)
    acfg = cfg.adapter()
    loss_cfg = cfg.loss()
    fusion = init_fusion_params(cfg.model_dim, seed + 5)
    params = init_adapter_params(acfg, seed + 6)

    losses: list[tuple[int, float]] = []
    heldout: list[HeldoutEval] = [
        _heldout_eval(0, _heldout_samples(task, fusion, acfg, params))
    ]

    for step in range(steps):
        loss, grads = _batch_pass(task, fusion, acfg, params, loss_cfg, True)
        if not np.isfinite(loss):
            raise DivergedLoss(step)
        if step % cfg.log_every == 0:
            losses.append((step, loss))
        fusion = FusionParams(w=fusion.w - cfg.lr * grads["fusion_w"])
        params = AdapterParams(**{
            name: np.asarray(getattr(params, name)) - cfg.lr * grads[name]
            for name in PARAM_FIELDS[1:]
        })
        if (step + 1) % cfg.eval_every == 0:
            heldout.append(
                _heldout_eval(step + 1, _heldout_samples(task, fusion, acfg, params))
            )

    final_loss, _ = _batch_pass(task, fusion, acfg, params, loss_cfg, False)
    if not np.isfinite(final_loss):
        raise DivergedLoss(steps)
    losses.append((steps, final_loss))
    final_samples = _heldout_samples(task, fusion, acfg, params)
    if not heldout or heldout[-1].step != steps:
        heldout.append(_heldout_eval(steps, final_samples))
    return TrainingReport(
        seed=seed,
        steps=steps,
        lr=cfg.lr,
        losses=losses,
        heldout=heldout,
        final_accuracy=accuracy_report(final_samples),
    )
