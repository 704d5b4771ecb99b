"""Pose-aware token fusion and the query-attention pose-regression head.

Forward pipeline (all float64, single sample):

    fused   = X + W @ [Z; X]              per-token residual, Z features first
    KV      = [H; fused]                  text tokens first, then visual
    Y       = MultiHeadAttn(Q0, KV, KV)   bare scaled dot-product attention
    U       = psi(Y)                      linear projection per query
    pred    = reshape(g(U), 4x4)          one scalar per query, row-major

plus the pose regression loss (mean-square over the rotation block and the
translation column separately) and the weighted total loss.  The backward
pass is hand-derived chain rule; :func:`grad_check` verifies every
parameter and input gradient against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatch
from .geometry import CameraPose, RawPose, decompose, orthonormalize, _frozen
from .plucker import TokenGrid


@dataclass(frozen=True)
class FusionParams:
    """Residual projection W (d x 2d) applied to [Z; X] feature concatenation."""

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 2 or w.shape[1] != 2 * w.shape[0]:
            raise ValueError(f"fusion weight must be (d, 2d), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("fusion weight must be finite")
        object.__setattr__(self, "w", _frozen(w))


@dataclass(frozen=True)
class AdapterConfig:
    """Shape of the query-attention head; 16 queries map to the 4x4 output."""

    model_dim: int = 32
    n_queries: int = 16
    heads: int = 4
    query_out_dim: int = 32

    def __post_init__(self):
        if self.model_dim < 1 or self.n_queries < 1 or self.query_out_dim < 1:
            raise ValueError("adapter dimensions must be >= 1")
        if self.heads < 1 or self.model_dim % self.heads:
            raise ValueError("heads must divide model_dim")


@dataclass(frozen=True)
class AdapterParams:
    """Learnable queries, attention projections, and the two readout layers."""

    q0: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    psi_w: np.ndarray
    psi_b: np.ndarray
    g_w: np.ndarray
    g_b: np.ndarray

    def __post_init__(self):
        for name in PARAM_FIELDS[1:]:
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, _frozen(arr))

    def items(self):
        for name in PARAM_FIELDS[1:]:
            yield name, getattr(self, name)


# field order used by gradient containers and the finite-difference sweep
PARAM_FIELDS = ("fusion_w", "q0", "wq", "wk", "wv", "wo", "psi_w", "psi_b", "g_w", "g_b")
INPUT_FIELDS = ("x", "z", "h")


@dataclass(frozen=True)
class LossConfig:
    """Weights of the combined language + pose objective."""

    lambda_lang: float = 1.0
    lambda_pose: float = 0.2

    def __post_init__(self):
        if self.lambda_lang < 0.0 or self.lambda_pose < 0.0:
            raise ValueError("loss weights must be nonnegative")


def init_fusion_params(model_dim: int, seed: int) -> FusionParams:
    rng = np.random.default_rng(seed)
    a = 1.0 / np.sqrt(2 * model_dim)
    return FusionParams(w=rng.uniform(-a, a, size=(model_dim, 2 * model_dim)))


def init_adapter_params(cfg: AdapterConfig, seed: int) -> AdapterParams:
    """Seeded uniform(-a, a) with a = 1/sqrt(fan_in) per matrix."""
    rng = np.random.default_rng(seed)
    d, dq = cfg.model_dim, cfg.query_out_dim

    def u(fan_in: int, shape) -> np.ndarray:
        a = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-a, a, size=shape)

    return AdapterParams(
        q0=u(d, (cfg.n_queries, d)),
        wq=u(d, (d, d)),
        wk=u(d, (d, d)),
        wv=u(d, (d, d)),
        wo=u(d, (d, d)),
        psi_w=u(d, (dq, d)),
        psi_b=u(d, (dq,)),
        g_w=u(dq, (1, dq)),
        g_b=u(dq, (1,)),
    )


def fuse(x: TokenGrid, z: TokenGrid, params: FusionParams) -> TokenGrid:
    """Residual pose injection: X + W [Z; X] per token (Z features first)."""
    if x.tokens.shape != z.tokens.shape:
        raise ShapeMismatch(
            f"X {x.tokens.shape} and Z {z.tokens.shape} must have the same shape"
        )
    if params.w.shape[0] != x.dim:
        raise ShapeMismatch(
            f"fusion weight is for dim {params.w.shape[0]}, tokens have dim {x.dim}"
        )
    cat = np.hstack([z.tokens, x.tokens])
    return TokenGrid(tokens=x.tokens + cat @ params.w.T)


@dataclass
class Tape:
    """Forward-pass intermediates needed by the analytic backward pass."""

    cfg: AdapterConfig
    params: AdapterParams
    fusion_w: np.ndarray
    x: np.ndarray
    z: np.ndarray
    h: np.ndarray
    cat: np.ndarray       # [Z; X] feature concat, (T_vis, 2d)
    kv: np.ndarray        # [H; fused], (T, d)
    qh: np.ndarray        # (N, heads, dh)
    kh: np.ndarray        # (T, heads, dh)
    vh: np.ndarray        # (T, heads, dh)
    att: np.ndarray       # (heads, N, T) softmax weights
    o: np.ndarray         # concatenated head outputs, (N, d)
    y: np.ndarray         # (N, d)
    u: np.ndarray         # (N, d_q)
    scalars: np.ndarray   # (N,)
    pred: np.ndarray      # (4, 4)


@dataclass(frozen=True)
class Gradients:
    """Gradients for every parameter and input of the pose head."""

    fusion_w: np.ndarray
    q0: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    psi_w: np.ndarray
    psi_b: np.ndarray
    g_w: np.ndarray
    g_b: np.ndarray
    x: np.ndarray
    z: np.ndarray
    h: np.ndarray

    def named(self):
        for name in PARAM_FIELDS + INPUT_FIELDS:
            yield name, getattr(self, name)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward_pose_head(
    x: np.ndarray,
    z: np.ndarray,
    h: np.ndarray,
    fusion: FusionParams,
    cfg: AdapterConfig,
    params: AdapterParams,
) -> Tape:
    """Full forward pass (fusion + attention + readout), recording a tape."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    h = np.asarray(h, dtype=float)
    d = cfg.model_dim
    if x.shape != z.shape or x.ndim != 2 or x.shape[1] != d:
        raise ShapeMismatch(f"X/Z must both be (T_vis, {d}); got {x.shape} and {z.shape}")
    if h.ndim != 2 or h.shape[1] != d:
        raise ShapeMismatch(f"H must be (T_text, {d}), got {h.shape}")
    if cfg.n_queries != 16:
        raise ConfigError("pose output needs exactly 16 queries to fill a 4x4 matrix")

    cat = np.hstack([z, x])
    fused = x + cat @ fusion.w.T
    kv = np.vstack([h, fused])
    if kv.shape[0] == 0:
        raise ShapeMismatch("attention needs at least one key token")

    n, nh = cfg.n_queries, cfg.heads
    dh = d // nh
    q = params.q0 @ params.wq
    k = kv @ params.wk
    v = kv @ params.wv
    qh = q.reshape(n, nh, dh)
    kh = k.reshape(-1, nh, dh)
    vh = v.reshape(-1, nh, dh)
    logits = np.einsum("nhd,thd->hnt", qh, kh) / np.sqrt(dh)
    att = _softmax(logits)
    o = np.einsum("hnt,thd->nhd", att, vh).reshape(n, d)
    y = o @ params.wo
    u = y @ params.psi_w.T + params.psi_b
    scalars = (u @ params.g_w.T).ravel() + params.g_b[0]
    pred = scalars.reshape(4, 4)
    return Tape(
        cfg=cfg, params=params, fusion_w=np.asarray(fusion.w), x=x, z=z, h=h,
        cat=cat, kv=kv, qh=qh, kh=kh, vh=vh, att=att, o=o, y=y, u=u,
        scalars=scalars, pred=pred,
    )


def adapter_forward(
    h: TokenGrid,
    fused_visual: TokenGrid,
    cfg: AdapterConfig,
    params: AdapterParams,
) -> tuple[np.ndarray, np.ndarray, RawPose]:
    """Attend the learnable queries over [H; fused] and regress the 4x4 pose.

    Returns (Y, U, predicted pose).  Fusion is assumed already applied to
    the visual tokens; use :func:`forward_pose_head` for the fused chain
    with gradient support.
    """
    d = cfg.model_dim
    if h.dim != d or fused_visual.dim != d:
        raise ShapeMismatch(
            f"token dims {h.dim}/{fused_visual.dim} must equal model_dim {d}"
        )
    # reuse the taped forward with an identity (zero-weight) fusion stage
    zero_fusion = FusionParams(w=np.zeros((d, 2 * d)))
    zeros = np.zeros_like(fused_visual.tokens)
    tape = forward_pose_head(fused_visual.tokens, zeros, h.tokens, zero_fusion, cfg, params)
    return tape.y, tape.u, RawPose(m=tape.pred)


def backward(tape: Tape, d_pred: np.ndarray) -> Gradients:
    """Chain rule through reshape, g, psi, attention and the fusion MLP."""
    cfg, params = tape.cfg, tape.params
    n, nh = cfg.n_queries, cfg.heads
    d = cfg.model_dim
    dh = d // nh
    t_text = tape.h.shape[0]

    ds = np.asarray(d_pred, dtype=float).reshape(16, 1)
    dg_w = ds.T @ tape.u
    dg_b = np.array([ds.sum()])
    du = ds @ params.g_w
    dpsi_w = du.T @ tape.y
    dpsi_b = du.sum(axis=0)
    dy = du @ params.psi_w
    dwo = tape.o.T @ dy
    do = dy @ params.wo.T

    doh = do.reshape(n, nh, dh)
    datt = np.einsum("nhd,thd->hnt", doh, tape.vh)
    dvh = np.einsum("hnt,nhd->thd", tape.att, doh)
    dlogits = tape.att * (datt - (datt * tape.att).sum(axis=-1, keepdims=True))
    scale = 1.0 / np.sqrt(dh)
    dqh = np.einsum("hnt,thd->nhd", dlogits, tape.kh) * scale
    dkh = np.einsum("hnt,nhd->thd", dlogits, tape.qh) * scale

    dq = dqh.reshape(n, d)
    dk = dkh.reshape(-1, d)
    dv = dvh.reshape(-1, d)
    dq0 = dq @ params.wq.T
    dwq = params.q0.T @ dq
    dwk = tape.kv.T @ dk
    dwv = tape.kv.T @ dv
    dkv = dk @ params.wk.T + dv @ params.wv.T

    dh_text = dkv[:t_text]
    dfused = dkv[t_text:]
    dfusion_w = dfused.T @ tape.cat
    dcat = dfused @ tape.fusion_w
    dz = dcat[:, :d]
    dx = dfused + dcat[:, d:]

    return Gradients(
        fusion_w=dfusion_w, q0=dq0, wq=dwq, wk=dwk, wv=dwv, wo=dwo,
        psi_w=dpsi_w, psi_b=dpsi_b, g_w=dg_w, g_b=dg_b,
        x=dx, z=dz, h=dh_text,
    )


def pose_loss(pred: RawPose | CameraPose, gt: CameraPose) -> float:
    """Mean-square gap of the translation column plus of the rotation block.

    Uses the raw (un-projected) predicted blocks; entries outside those two
    blocks are ignored, matching the regression objective.
    """
    p = decompose(pred)
    g = decompose(gt)
    return float(np.mean((p.t - g.t) ** 2) + np.mean((p.r - g.r) ** 2))


def pose_loss_grad(pred: RawPose | CameraPose, gt: CameraPose) -> np.ndarray:
    """d pose_loss / d pred as a 4x4 matrix (zero outside the R and t blocks)."""
    p = decompose(pred)
    g = decompose(gt)
    grad = np.zeros((4, 4))
    grad[:3, :3] = 2.0 * (p.r - g.r) / 9.0
    grad[:3, 3] = 2.0 * (p.t - g.t) / 3.0
    return grad


def total_loss(lang_loss: float, pose_loss_value: float, cfg: LossConfig) -> float:
    """Weighted objective: lambda_lang * L_lang + lambda_pose * L_pose."""
    if not (np.isfinite(lang_loss) and np.isfinite(pose_loss_value)):
        raise ValueError("loss terms must be finite")
    return cfg.lambda_lang * lang_loss + cfg.lambda_pose * pose_loss_value


@dataclass(frozen=True)
class GradCheckReport:
    """Finite-difference comparison summary for one randomized instance."""

    seed: int
    shapes: dict[str, tuple[int, ...]]
    max_rel_error: float
    per_field: dict[str, float]
    n_entries: int
    threshold: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold


def _random_instance(seed: int, n_vis: int, model_dim: int, n_text: int,
                     query_out_dim: int, heads: int):
    rng = np.random.default_rng(seed)
    cfg = AdapterConfig(model_dim=model_dim, n_queries=16, heads=heads,
                        query_out_dim=query_out_dim)
    fusion = init_fusion_params(model_dim, seed + 1)
    params = init_adapter_params(cfg, seed + 2)
    x = rng.normal(0.0, 0.7, size=(n_vis, model_dim))
    z = rng.normal(0.0, 0.7, size=(n_vis, model_dim))
    h = rng.normal(0.0, 0.7, size=(n_text, model_dim))
    r = orthonormalize(rng.normal(size=(3, 3)))
    t = rng.uniform(-1.5, 1.5, size=3)
    gt = CameraPose.from_rt(r, t)
    return cfg, fusion, params, x, z, h, gt


def grad_check(
    seed: int,
    n_vis: int = 6,
    model_dim: int = 12,
    n_text: int = 3,
    query_out_dim: int = 8,
    heads: int = 4,
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Relative error per entry is |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-3); the floor keeps near-zero gradients from turning
    rounding noise into spurious failures while still exposing any real
    formula error, which perturbs gradients at their own scale.
    """
    cfg, fusion, params, x, z, h, gt = _random_instance(
        seed, n_vis, model_dim, n_text, query_out_dim, heads
    )

    def loss_given(values: dict[str, np.ndarray]) -> float:
        f = FusionParams(w=values["fusion_w"])
        p = AdapterParams(**{k: values[k] for k in PARAM_FIELDS[1:]})
        tape = forward_pose_head(values["x"], values["z"], values["h"], f, cfg, p)
        return pose_loss(RawPose(m=tape.pred), gt)

    base = {"fusion_w": np.asarray(fusion.w), "x": x, "z": z, "h": h}
    base.update({name: np.asarray(arr) for name, arr in params.items()})

    tape = forward_pose_head(x, z, h, fusion, cfg, params)
    grads = backward(tape, pose_loss_grad(RawPose(m=tape.pred), gt))

    per_field: dict[str, float] = {}
    total_entries = 0
    for name, analytic in grads.named():
        analytic = np.asarray(analytic)
        worst = 0.0
        flat_base = base[name].copy()
        for idx in np.ndindex(flat_base.shape):
            orig = flat_base[idx]
            flat_base[idx] = orig + step
            up = loss_given({**base, name: flat_base})
            flat_base[idx] = orig - step
            down = loss_given({**base, name: flat_base})
            flat_base[idx] = orig
            numeric = (up - down) / (2.0 * step)
            a = float(analytic[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            worst = max(worst, rel)
            total_entries += 1
        per_field[name] = worst

    return GradCheckReport(
        seed=seed,
        shapes={name: tuple(arr.shape) for name, arr in base.items()},
        max_rel_error=max(per_field.values()),
        per_field=per_field,
        n_entries=total_entries,
    )
