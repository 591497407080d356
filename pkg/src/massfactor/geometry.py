"""Depth-map geometry cue: normalization, unprojection, sampling, encoding.

Depth maps are lifted to object-centric point clouds and summarized by a
shared per-point MLP with coordinate-wise max pooling, so the resulting
feature is exactly permutation invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, DimensionError
from .nn import (
    DenseLayer,
    LayerNormParams,
    activate,
    activate_grad,
    layernorm_backward,
    layernorm_forward,
    make_dense,
    make_layernorm,
)
from .rng import Rng


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel-space box, max edges exclusive."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float


def bbox_diagonal(b: BBox) -> float:
    dx = b.x_max - b.x_min
    dy = b.y_max - b.y_min
    if dx <= 0 or dy <= 0:
        raise DimensionError(f"degenerate bounding box {b}")
    return float(np.hypot(dx, dy))


@dataclass
class DepthMap:
    """Per-pixel depth (meters) plus a boolean object mask, both (H, W)."""

    depth: np.ndarray
    mask: np.ndarray

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


def mask_bbox(mask: np.ndarray) -> BBox:
    """Tight pixel box around the mask (exclusive max edges)."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise DegenerateInputError("mask has no pixels set")
    return BBox(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


def normalize_depth(d: DepthMap, b: BBox) -> DepthMap:
    """Divide depths by the pixel diagonal of the object's bounding box."""
    diag = bbox_diagonal(b)
    return DepthMap(d.depth / diag, d.mask)


@dataclass(frozen=True)
class Orthographic:
    scale: float  # meters per pixel


@dataclass(frozen=True)
class Pinhole:
    focal_px: float
    cx: float
    cy: float


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3)

    def __len__(self) -> int:
        return self.points.shape[0]


def unproject(d: DepthMap, camera: Orthographic | Pinhole) -> PointCloud:
    """One 3D point per masked-in pixel, centroid-centered."""
    vs, us = np.nonzero(d.mask)
    if us.size < 3:
        raise DegenerateInputError(f"only {us.size} masked pixels, need at least 3")
    z = d.depth[vs, us].astype(np.float64)
    if not np.isfinite(z).all() or (z <= 0).any():
        raise DegenerateInputError("masked depths must be finite and positive")
    u = us.astype(np.float64)
    v = vs.astype(np.float64)
    if isinstance(camera, Orthographic):
        x = u * camera.scale
        y = v * camera.scale
    elif isinstance(camera, Pinhole):
        x = (u - camera.cx) * z / camera.focal_px
        y = (v - camera.cy) * z / camera.focal_px
    else:
        raise TypeError(f"unsupported camera {camera!r}")
    pts = np.stack([x, y, z], axis=1)
    pts -= pts.mean(axis=0)
    return PointCloud(pts)


def sample_points(pc: PointCloud, n: int, seed: int) -> PointCloud:
    """Exactly n points: without replacement when possible, else with."""
    if n <= 0:
        raise DimensionError("sample size must be >= 1")
    total = len(pc)
    if total == 0:
        raise DegenerateInputError("cannot sample from an empty point cloud")
    rng = Rng(seed)
    if total >= n:
        idx = rng.choose_indices(total, n)
    else:
        idx = [rng.randint(total) for _ in range(n)]
    return PointCloud(pc.points[np.asarray(idx, dtype=np.intp)])


@dataclass
class PointEncoderParams:
    """Shared per-point MLP, max pool, post-pool MLP, LayerNorm."""

    point_layers: list[DenseLayer]
    post_layers: list[DenseLayer]
    norm: LayerNormParams
    expected_n: int | None = None

    @property
    def out_dim(self) -> int:
        return self.post_layers[-1].out_dim


def make_point_encoder(rng: Rng, feature_dim: int, expected_n: int | None = None) -> PointEncoderParams:
    point_layers = [
        make_dense(rng, 3, feature_dim, "tanh"),
        make_dense(rng, feature_dim, feature_dim, "identity"),
    ]
    post_layers = [make_dense(rng, feature_dim, feature_dim, "tanh")]
    return PointEncoderParams(point_layers, post_layers, make_layernorm(feature_dim), expected_n)


@dataclass
class PointEncoderCache:
    point_inputs: list[np.ndarray] = field(default_factory=list)
    point_zs: list[np.ndarray] = field(default_factory=list)
    argmax: np.ndarray | None = None
    pooled: np.ndarray | None = None
    post_inputs: list[np.ndarray] = field(default_factory=list)
    pre_norm: np.ndarray | None = None


def encode_points_with_cache(params: PointEncoderParams, pc: PointCloud):
    if pc.points.ndim != 2 or pc.points.shape[1] != 3:
        raise DimensionError(f"point cloud must be (N, 3), got {pc.points.shape}")
    if params.expected_n is not None and len(pc) != params.expected_n:
        raise DimensionError(f"encoder configured for N={params.expected_n}, got {len(pc)}")
    cache = PointEncoderCache()
    x = pc.points.astype(np.float64)
    for layer in params.point_layers:
        cache.point_inputs.append(x)
        z = x @ layer.weight.T + layer.bias
        cache.point_zs.append(z)
        x = activate(layer.activation, z)
    cache.argmax = np.argmax(x, axis=0)  # argmax picks the lowest index on ties
    cache.pooled = x.max(axis=0)
    h = cache.pooled
    for layer in params.post_layers:
        cache.post_inputs.append(h)
        h = activate(layer.activation, layer.weight @ h + layer.bias)
    cache.pre_norm = h
    return layernorm_forward(params.norm, h), cache


def encode_points(params: PointEncoderParams, pc: PointCloud) -> np.ndarray:
    feature, _ = encode_points_with_cache(params, pc)
    return feature


@dataclass
class PointEncoderGrads:
    point_layers: list[tuple[np.ndarray, np.ndarray]]
    post_layers: list[tuple[np.ndarray, np.ndarray]]
    norm_gain: np.ndarray
    norm_shift: np.ndarray


def encode_points_backward(params: PointEncoderParams, cache: PointEncoderCache,
                           grad_out: np.ndarray) -> PointEncoderGrads:
    """Analytic gradients wrt every encoder parameter."""
    g, g_gain, g_shift = layernorm_backward(params.norm, cache.pre_norm, grad_out)
    post_grads: list[tuple[np.ndarray, np.ndarray]] = []
    for layer, x_in in zip(reversed(params.post_layers), reversed(cache.post_inputs)):
        z = layer.weight @ x_in + layer.bias
        gz = g * activate_grad(layer.activation, z)
        post_grads.append((np.outer(gz, x_in), gz))
        g = layer.weight.T @ gz
    post_grads.reverse()

    # Route the pooled gradient back to the argmax rows only.
    n_points = cache.point_inputs[0].shape[0]
    gx = np.zeros((n_points, params.point_layers[-1].out_dim), dtype=np.float64)
    gx[cache.argmax, np.arange(gx.shape[1])] = g

    point_grads: list[tuple[np.ndarray, np.ndarray]] = []
    for layer, x_in, z in zip(reversed(params.point_layers),
                              reversed(cache.point_inputs),
                              reversed(cache.point_zs)):
        gz = gx * activate_grad(layer.activation, z)
        point_grads.append((gz.T @ x_in, gz.sum(axis=0)))
        gx = gz @ layer.weight
    point_grads.reverse()
    return PointEncoderGrads(point_grads, post_grads, g_gain, g_shift)
