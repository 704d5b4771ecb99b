"""Pixel-aligned Plucker ray maps and their patch tokenization.

A ray map stores, per pixel, the Plucker coordinates of that pixel's viewing
ray: unit direction d followed by moment m = o x d, where o is the camera
center.  Channel order is (dx, dy, dz, mx, my, mz).  Every valid map
satisfies ||d|| = 1 and d . m = 0 at each pixel.

Ray construction adapts the intrinsics to the requested output resolution,
so maps are invariant to any intrinsics rescaling that preserves the field
of view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .geometry import CameraIntrinsics, CameraPose, _frozen


@dataclass(frozen=True)
class RayMap:
    """(H, W, 6) Plucker field plus the camera center shared by all rays."""

    values: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        o = np.array(self.origin, dtype=float).reshape(3)
        if v.ndim != 3 or v.shape[2] != 6:
            raise ValueError(f"ray map must be (H, W, 6), got {v.shape}")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(o))):
            raise ValueError("ray map has non-finite entries")
        d = v[..., :3]
        m = v[..., 3:]
        if np.max(np.abs(np.linalg.norm(d, axis=-1) - 1.0)) > 1e-9:
            raise ValueError("ray directions must be unit length within 1e-9")
        if np.max(np.abs(np.sum(d * m, axis=-1))) > 1e-9:
            raise ValueError("d . m must vanish within 1e-9")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "origin", _frozen(o))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def directions(self) -> np.ndarray:
        return self.values[..., :3]

    @property
    def moments(self) -> np.ndarray:
        return self.values[..., 3:]


@dataclass(frozen=True)
class PatchConfig:
    """Canonical resolution, patch size and token width for tokenization."""

    canonical_width: int = 448
    canonical_height: int = 448
    patch_size: int = 14
    token_dim: int = 32

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch size must be >= 1")
        if (
            self.canonical_width % self.patch_size
            or self.canonical_height % self.patch_size
        ):
            raise ValueError("patch size must divide the canonical resolution")
        if self.token_dim < 1:
            raise ValueError("token dim must be >= 1")

    @property
    def patches_x(self) -> int:
        return self.canonical_width // self.patch_size

    @property
    def patches_y(self) -> int:
        return self.canonical_height // self.patch_size

    @property
    def token_count(self) -> int:
        return self.patches_x * self.patches_y

    @property
    def patch_features(self) -> int:
        """Length of one flattened p x p x 6 ray patch."""
        return 6 * self.patch_size * self.patch_size


@dataclass(frozen=True)
class EmbedParams:
    """Affine patch embedding: token = weight @ flat_patch + bias."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.array(self.weight, dtype=float)
        b = np.array(self.bias, dtype=float).reshape(-1)
        if w.ndim != 2:
            raise ValueError("weight must be 2-D (token_dim, patch_features)")
        if b.shape[0] != w.shape[0]:
            raise ValueError("bias length must match weight rows")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("embedding parameters must be finite")
        object.__setattr__(self, "weight", _frozen(w))
        object.__setattr__(self, "bias", _frozen(b))


@dataclass(frozen=True)
class TokenGrid:
    """(rows, token_dim) token matrix, row-major over the patch grid."""

    tokens: np.ndarray

    def __post_init__(self):
        t = np.array(self.tokens, dtype=float)
        if t.ndim != 2:
            raise ValueError(f"tokens must be 2-D, got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("tokens must be finite")
        object.__setattr__(self, "tokens", _frozen(t))

    @property
    def count(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


def ray_map(
    pose: CameraPose, intrinsics: CameraIntrinsics, out_w: int, out_h: int
) -> RayMap:
    """Plucker ray map on an ``out_w x out_h`` grid covering the camera's FOV."""
    k = intrinsics.scaled(out_w, out_h)
    x = (np.arange(out_w) + 0.5 - k.cx) / k.fx
    y = (np.arange(out_h) + 0.5 - k.cy) / k.fy
    xs, ys = np.meshgrid(x, y)
    dirs = np.stack([xs, ys, np.ones_like(xs)], axis=-1)
    d = dirs @ pose.rotation.T
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    o = pose.center
    m = np.cross(np.broadcast_to(o, d.shape), d)
    return RayMap(values=np.concatenate([d, m], axis=-1), origin=o)


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Channel-wise bilinear resample with pixel-center alignment, edge clamp."""
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    # lerp formulation keeps constant fields exact
    top = img[np.ix_(y0, x0)] + fx * (img[np.ix_(y0, x1)] - img[np.ix_(y0, x0)])
    bot = img[np.ix_(y1, x0)] + fx * (img[np.ix_(y1, x1)] - img[np.ix_(y1, x0)])
    return top + fy * (bot - top)


def resize_ray_map(ray_field: RayMap, cfg: PatchConfig) -> RayMap:
    """Resample a ray map to the canonical resolution.

    Directions are bilinearly interpolated and re-normalized; moments are
    recomputed from the pass-through camera center (interpolating moments
    would break d . m = 0).
    """
    out_h, out_w = cfg.canonical_height, cfg.canonical_width
    if (ray_field.height, ray_field.width) == (out_h, out_w):
        return RayMap(values=ray_field.values.copy(), origin=ray_field.origin.copy())
    d = _bilinear_resize(np.asarray(ray_field.directions), out_h, out_w)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    o = ray_field.origin
    m = np.cross(np.broadcast_to(o, d.shape), d)
    return RayMap(values=np.concatenate([d, m], axis=-1), origin=o)


def patch_tokens(
    values: np.ndarray, cfg: PatchConfig, params: EmbedParams
) -> np.ndarray:
    """Embed every non-overlapping p x p x 6 block of ``values``.

    Blocks are flattened row-major in (row, col, channel) order and mapped
    through the affine embedding; token order is row-major over the patch
    grid.  Exposed separately from :func:`patchify_embed` so linear-map
    properties can be exercised on arbitrary (non-Plucker) fields.
    """
    values = np.asarray(values, dtype=float)
    expected = (cfg.canonical_height, cfg.canonical_width, 6)
    if values.shape != expected:
        raise ShapeMismatch(f"expected field of shape {expected}, got {values.shape}")
    if params.weight.shape != (cfg.token_dim, cfg.patch_features):
        raise ShapeMismatch(
            f"embedding weight must be {(cfg.token_dim, cfg.patch_features)}, "
            f"got {params.weight.shape}"
        )
    p = cfg.patch_size
    hp, wp = cfg.patches_y, cfg.patches_x
    flat = (
        values.reshape(hp, p, wp, p, 6)
        .transpose(0, 2, 1, 3, 4)
        .reshape(hp * wp, cfg.patch_features)
    )
    return flat @ params.weight.T + params.bias


def patchify_embed(
    ray_field: RayMap, cfg: PatchConfig, params: EmbedParams
) -> TokenGrid:
    """Tokenize a canonical-resolution ray map into S x d patch tokens."""
    return TokenGrid(tokens=patch_tokens(ray_field.values, cfg, params))


def init_embed_params(cfg: PatchConfig, seed: int) -> EmbedParams:
    """Deterministic uniform(-a, a) init with a = 1/sqrt(patch_features)."""
    rng = np.random.default_rng(seed)
    a = 1.0 / np.sqrt(cfg.patch_features)
    weight = rng.uniform(-a, a, size=(cfg.token_dim, cfg.patch_features))
    bias = rng.uniform(-a, a, size=cfg.token_dim)
    return EmbedParams(weight=weight, bias=bias)
