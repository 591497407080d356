"""Fusing the modality features: concatenation, self-attention, gated.

All three mechanisms operate on whichever cues are present: a disabled cue
simply contributes no token. Gate weights always form a probability simplex
point over the present tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .nn import DenseLayer, activate_grad, make_dense
from .rng import Rng

CUE_ORDER = ("image", "geometry", "text")


@dataclass
class ModalFeatures:
    """Post-LayerNorm feature vector per cue; None means the cue is disabled."""

    image: np.ndarray | None = None
    geometry: np.ndarray | None = None
    text: np.ndarray | None = None

    def tokens(self) -> list[tuple[str, np.ndarray]]:
        present = [(name, getattr(self, name)) for name in CUE_ORDER
                   if getattr(self, name) is not None]
        if not present:
            raise DimensionError("at least one modality feature is required")
        dims = {vec.shape for _, vec in present}
        if len(dims) != 1 or next(iter(dims))[-1] < 1:
            raise DimensionError(f"modality features disagree in shape: {dims}")
        return present


@dataclass
class FusedFeature:
    vector: np.ndarray
    gate_weights: np.ndarray | None = None


def fuse_concat(f: ModalFeatures) -> FusedFeature:
    """[image || geometry || text] over the present cues."""
    return FusedFeature(np.concatenate([vec for _, vec in f.tokens()]))


def softmax(logits: np.ndarray) -> np.ndarray:
    # max-subtracted, so adding a constant to all logits is a bit-exact no-op
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def _softmax_vjp(weights: np.ndarray, grad_w: np.ndarray) -> np.ndarray:
    return (grad_w - float(grad_w @ weights)) * weights


@dataclass
class AttentionFusionParams:
    """Single-head scaled dot-product attention over the cue tokens."""

    query: DenseLayer
    key: DenseLayer
    value: DenseLayer


def make_attention_fusion(rng: Rng, dim: int) -> AttentionFusionParams:
    return AttentionFusionParams(
        make_dense(rng, dim, dim, "identity"),
        make_dense(rng, dim, dim, "identity"),
        make_dense(rng, dim, dim, "identity"),
    )


def fuse_self_attention_with_cache(params: AttentionFusionParams, f: ModalFeatures):
    tokens = f.tokens()
    t = np.stack([vec for _, vec in tokens])  # (k, D)
    if t.shape[1] != params.query.in_dim:
        raise DimensionError(
            f"attention fusion configured for D={params.query.in_dim}, got {t.shape[1]}"
        )
    q = t @ params.query.weight.T + params.query.bias
    k = t @ params.key.weight.T + params.key.bias
    v = t @ params.value.weight.T + params.value.bias
    scores = (q @ k.T) / np.sqrt(t.shape[1])
    attn = np.stack([softmax(row) for row in scores])
    attended = attn @ v
    out = attended.mean(axis=0)
    cache = (t, q, k, v, attn)
    return FusedFeature(out), cache


def fuse_self_attention(params: AttentionFusionParams, f: ModalFeatures) -> FusedFeature:
    fused, _ = fuse_self_attention_with_cache(params, f)
    return fused


def fuse_self_attention_backward(params: AttentionFusionParams, cache, grad_out: np.ndarray):
    """Returns ((gWq, gbq), (gWk, gbk), (gWv, gbv)) and per-token input grads."""
    t, q, k, v, attn = cache
    n, dim = t.shape
    g_attended = np.repeat(grad_out[None, :] / n, n, axis=0)
    g_attn = g_attended @ v.T
    g_v = attn.T @ g_attended
    g_scores = np.stack([_softmax_vjp(attn[i], g_attn[i]) for i in range(n)])
    g_scores /= np.sqrt(dim)
    g_q = g_scores @ k
    g_k = g_scores.T @ q
    grads = []
    g_t = np.zeros_like(t)
    for layer, g_proj in ((params.query, g_q), (params.key, g_k), (params.value, g_v)):
        grads.append((g_proj.T @ t, g_proj.sum(axis=0)))
        g_t += g_proj @ layer.weight
    return tuple(grads), g_t


@dataclass
class GatedFusionParams:
    """Two-layer gate over the concatenated tokens, softmax to scalar weights."""

    hidden: DenseLayer  # (k*D -> D), tanh
    logits: DenseLayer  # (D -> k), identity


def make_gated_fusion(rng: Rng, dim: int, n_tokens: int) -> GatedFusionParams:
    return GatedFusionParams(
        make_dense(rng, n_tokens * dim, dim, "tanh"),
        make_dense(rng, dim, n_tokens, "identity"),
    )


def fuse_gated_with_cache(params: GatedFusionParams, f: ModalFeatures):
    tokens = f.tokens()
    t = np.stack([vec for _, vec in tokens])
    n, dim = t.shape
    if params.hidden.in_dim != n * dim or params.logits.out_dim != n:
        raise DimensionError(
            f"gated fusion configured for {params.logits.out_dim} tokens of "
            f"D={params.hidden.in_dim // max(params.logits.out_dim, 1)}, got {n} of D={dim}"
        )
    concat = t.reshape(-1)
    z_h = params.hidden.weight @ concat + params.hidden.bias
    h = np.tanh(z_h)
    logits = params.logits.weight @ h + params.logits.bias
    weights = softmax(logits)
    out = weights @ t
    cache = (t, concat, z_h, h, weights)
    return FusedFeature(out, gate_weights=weights), cache


def fuse_gated(params: GatedFusionParams, f: ModalFeatures) -> FusedFeature:
    fused, _ = fuse_gated_with_cache(params, f)
    return fused


def fuse_gated_backward(params: GatedFusionParams, cache, grad_out: np.ndarray):
    """Returns ((gW_hidden, gb_hidden), (gW_logits, gb_logits)) and token grads."""
    t, concat, z_h, h, weights = cache
    n, dim = t.shape
    g_weights = t @ grad_out
    g_t = np.outer(weights, grad_out)
    g_logits = _softmax_vjp(weights, g_weights)
    g_w_logits = np.outer(g_logits, h)
    g_h = params.logits.weight.T @ g_logits
    g_zh = g_h * activate_grad("tanh", z_h)
    g_w_hidden = np.outer(g_zh, concat)
    g_concat = params.hidden.weight.T @ g_zh
    g_t += g_concat.reshape(n, dim)
    return ((g_w_hidden, g_zh), (g_w_logits, g_logits)), g_t
