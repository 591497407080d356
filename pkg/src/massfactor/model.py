"""Full pipeline model: cue encoders, fusion, and the two factor heads.

Cues are named by the factor they inform (image, density, volume) and map to
the modality features (image, text, geometry). Disabled cues contribute no
token anywhere: concatenation shortens, gating and attention run over the
present tokens only.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .fusion import (
    ModalFeatures,
    fuse_concat,
    fuse_gated_backward,
    fuse_gated_with_cache,
    fuse_self_attention_backward,
    fuse_self_attention_with_cache,
    make_attention_fusion,
    make_gated_fusion,
)
from .geometry import (
    Orthographic,
    PointCloud,
    encode_points_backward,
    encode_points_with_cache,
    make_point_encoder,
    mask_bbox,
    normalize_depth,
    sample_points,
    unproject,
)
from .heads import (
    DensityActivationConfig,
    MassPrediction,
    alde_loss,
    compose_mass,
    density_head_backward,
    density_head_with_cache,
    make_head,
    volume_head_backward,
    volume_head_with_cache,
)
from .materials import MaterialVocab, make_material_embedding
from .nn import (
    ParameterBlock,
    dense_backward,
    dense_forward,
    layernorm_backward,
    layernorm_forward,
    make_dense,
    make_layernorm,
)
from .rng import Rng, derive_seed
from .synth import Sample

CUES = ("image", "density", "volume")
FUSION_VARIANTS = ("concat", "self_attn", "gated")

# cue name -> modality feature it produces
CUE_TO_MODALITY = {"image": "image", "density": "text", "volume": "geometry"}
MODALITY_TO_CUE = {v: k for k, v in CUE_TO_MODALITY.items()}


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 64
    fusion: str = "gated"
    use_image: bool = True
    use_density: bool = True
    use_volume: bool = True
    n_points: int = 1024
    rho_min: float = 50.0
    rho_max: float = 20000.0
    head_hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be at least 2")
        if self.fusion not in FUSION_VARIANTS:
            raise ConfigError(f"fusion must be one of {FUSION_VARIANTS}, got {self.fusion!r}")
        if not (self.use_image or self.use_density or self.use_volume):
            raise ConfigError("at least one cue must be enabled")
        if self.n_points < 1:
            raise ConfigError("n_points must be at least 1")

    def enabled_cues(self) -> tuple[str, ...]:
        return tuple(c for c in CUES if getattr(self, f"use_{c}"))

    def enabled_modalities(self) -> tuple[str, ...]:
        # canonical modality order: image, geometry, text
        order = []
        if self.use_image:
            order.append("image")
        if self.use_volume:
            order.append("geometry")
        if self.use_density:
            order.append("text")
        return tuple(order)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls)})


@dataclass
class PreparedSample:
    """Per-sample inputs after the fixed preprocessing, cached for training."""

    id: str
    category: str
    split: str
    seen: bool
    mass: float
    material_id: int
    appearance: np.ndarray
    points: np.ndarray | None = None  # (N, 3)


def prepare_sample(sample: Sample, n_points: int, pixel_m: float,
                   need_points: bool = True) -> PreparedSample:
    """Depth -> bbox-normalized -> point cloud -> fixed-size point sample."""
    points = None
    if need_points:
        if sample.depth is None:
            raise InputError(f"sample {sample.id} carries no depth map")
        bbox = mask_bbox(sample.depth.mask)
        normalized = normalize_depth(sample.depth, bbox)
        cloud = unproject(normalized, Orthographic(pixel_m))
        picked = sample_points(cloud, n_points, derive_seed("points", sample.id))
        points = picked.points
    return PreparedSample(
        id=sample.id, category=sample.category, split=sample.split,
        seen=(sample.split != "test_unseen"), mass=sample.mass,
        material_id=sample.material_id, appearance=sample.appearance, points=points,
    )


class MassModel:
    """Encoders, fusion, and heads over one flat trainable parameter vector."""

    def __init__(self, cfg: ModelConfig, app_dim: int, vocab: MaterialVocab):
        self.cfg = cfg
        self.app_dim = app_dim
        self.vocab = vocab
        self.density_cfg = DensityActivationConfig(cfg.rho_min, cfg.rho_max)
        d = cfg.feature_dim
        rng = Rng(derive_seed(cfg.seed, "model-init"))
        params = ParameterBlock()

        self.image_hidden = self.image_out = self.image_norm = None
        if cfg.use_image:
            self.image_hidden = make_dense(rng, app_dim, d, "tanh")
            self.image_out = make_dense(rng, d, d, "identity")
            self.image_norm = make_layernorm(d)
            params.register_dense("image.hidden", self.image_hidden)
            params.register_dense("image.out", self.image_out)
            params.register_layernorm("image.norm", self.image_norm)

        self.point_encoder = None
        if cfg.use_volume:
            self.point_encoder = make_point_encoder(rng, d, expected_n=cfg.n_points)
            for i, layer in enumerate(self.point_encoder.point_layers):
                params.register_dense(f"points.layer{i}", layer)
            for i, layer in enumerate(self.point_encoder.post_layers):
                params.register_dense(f"points.post{i}", layer)
            params.register_layernorm("points.norm", self.point_encoder.norm)

        self.embedding = None
        self.text_norm = None
        if cfg.use_density:
            # frozen table: deliberately NOT registered with the optimizer
            self.embedding = make_material_embedding(vocab, d, cfg.seed)
            self.text_norm = make_layernorm(d)
            params.register_layernorm("text.norm", self.text_norm)

        n_tokens = len(cfg.enabled_modalities())
        self.gate = self.attn = None
        if cfg.fusion == "gated":
            self.gate = make_gated_fusion(rng, d, n_tokens)
            params.register_dense("fusion.gate.hidden", self.gate.hidden)
            params.register_dense("fusion.gate.logits", self.gate.logits)
        elif cfg.fusion == "self_attn":
            self.attn = make_attention_fusion(rng, d)
            params.register_dense("fusion.attn.query", self.attn.query)
            params.register_dense("fusion.attn.key", self.attn.key)
            params.register_dense("fusion.attn.value", self.attn.value)

        fused_dim = n_tokens * d if cfg.fusion == "concat" else d
        self.volume_head = make_head(rng, fused_dim, cfg.head_hidden,
                                     out_scale=cfg.volume_scale)
        self.density_head = make_head(rng, fused_dim, cfg.head_hidden)
        # Positive output bias starts the composed mass mid-distribution
        # (volume_scale times the geometric-mean density), so early gradient
        # pressure is two-sided rather than a collective crash into the dead
        # ReLU region.
        self.volume_head.out.bias[:] = 1.0
        params.register_dense("head.volume.hidden", self.volume_head.hidden)
        params.register_dense("head.volume.out", self.volume_head.out)
        params.register_dense("head.density.hidden", self.density_head.hidden)
        params.register_dense("head.density.out", self.density_head.out)

        params.finalize()
        self.params = params

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def _encode(self, prep: PreparedSample):
        feats = ModalFeatures()
        caches: dict[str, object] = {}
        if self.cfg.use_image:
            if prep.appearance is None:
                raise InputError(f"sample {prep.id} carries no appearance vector")
            h1 = dense_forward(self.image_hidden, prep.appearance)
            z2 = dense_forward(self.image_out, h1)
            feats.image = layernorm_forward(self.image_norm, z2)
            caches["image"] = (prep.appearance, h1, z2)
        if self.cfg.use_volume:
            if prep.points is None:
                raise InputError(f"sample {prep.id} carries no point cloud")
            feature, cache = encode_points_with_cache(self.point_encoder, PointCloud(prep.points))
            feats.geometry = feature
            caches["geometry"] = cache
        if self.cfg.use_density:
            row = self.embedding.table[prep.material_id]
            feats.text = layernorm_forward(self.text_norm, row)
            caches["text"] = row
        return feats, caches

    def _fuse(self, feats: ModalFeatures):
        if self.cfg.fusion == "concat":
            return fuse_concat(feats), None
        if self.cfg.fusion == "gated":
            return fuse_gated_with_cache(self.gate, feats)
        return fuse_self_attention_with_cache(self.attn, feats)

    def forward(self, prep: PreparedSample):
        feats, enc_caches = self._encode(prep)
        fused, fuse_cache = self._fuse(feats)
        v, v_cache = volume_head_with_cache(self.volume_head, fused.vector)
        rho, d_cache = density_head_with_cache(self.density_head, self.density_cfg, fused.vector)
        pred = compose_mass(v, rho, self.density_cfg, gate_weights=fused.gate_weights)
        cache = (feats, enc_caches, fused, fuse_cache, v_cache, d_cache)
        return pred, cache

    def predict(self, prep: PreparedSample) -> MassPrediction:
        pred, _ = self.forward(prep)
        return pred

    # ------------------------------------------------------------------
    # backward (accumulates into self.params.grads)
    # ------------------------------------------------------------------

    def step_sample(self, prep: PreparedSample, m_true: float) -> float:
        pred, cache = self.forward(prep)
        loss, grad_mass = alde_loss(m_true, pred.mass)
        self._backward(prep, cache, grad_mass, pred)
        return loss

    def _backward(self, prep, cache, grad_mass, pred):
        feats, enc_caches, fused, fuse_cache, v_cache, d_cache = cache
        g = self.params.grad
        grad_v = grad_mass * pred.density_factor
        grad_rho = grad_mass * pred.volume_factor

        ((gwh, gbh), (gwo, gbo)), g_fused = volume_head_backward(
            self.volume_head, fused.vector, v_cache, grad_v)
        g("head.volume.hidden.weight")[...] += gwh
        g("head.volume.hidden.bias")[...] += gbh
        g("head.volume.out.weight")[...] += gwo
        g("head.volume.out.bias")[...] += gbo

        ((gwh, gbh), (gwo, gbo)), g_fused_d = density_head_backward(
            self.density_head, self.density_cfg, fused.vector, d_cache, grad_rho)
        g("head.density.hidden.weight")[...] += gwh
        g("head.density.hidden.bias")[...] += gbh
        g("head.density.out.weight")[...] += gwo
        g("head.density.out.bias")[...] += gbo
        g_fused = g_fused + g_fused_d

        modalities = self.cfg.enabled_modalities()
        if self.cfg.fusion == "concat":
            d = self.cfg.feature_dim
            token_grads = [g_fused[i * d:(i + 1) * d] for i in range(len(modalities))]
        elif self.cfg.fusion == "gated":
            ((gw1, gb1), (gw2, gb2)), g_tokens = fuse_gated_backward(
                self.gate, fuse_cache, g_fused)
            g("fusion.gate.hidden.weight")[...] += gw1
            g("fusion.gate.hidden.bias")[...] += gb1
            g("fusion.gate.logits.weight")[...] += gw2
            g("fusion.gate.logits.bias")[...] += gb2
            token_grads = list(g_tokens)
        else:
            proj_grads, g_tokens = fuse_self_attention_backward(self.attn, fuse_cache, g_fused)
            for name, (gw, gb) in zip(("query", "key", "value"), proj_grads):
                g(f"fusion.attn.{name}.weight")[...] += gw
                g(f"fusion.attn.{name}.bias")[...] += gb
            token_grads = list(g_tokens)

        for modality, g_token in zip(modalities, token_grads):
            if modality == "image":
                appearance, h1, z2 = enc_caches["image"]
                g_z2, g_gain, g_shift = layernorm_backward(self.image_norm, z2, g_token)
                g("image.norm.gain")[...] += g_gain
                g("image.norm.shift")[...] += g_shift
                g_h1, gw, gb = dense_backward(self.image_out, h1, g_z2)
                g("image.out.weight")[...] += gw
                g("image.out.bias")[...] += gb
                _, gw, gb = dense_backward(self.image_hidden, appearance, g_h1)
                g("image.hidden.weight")[...] += gw
                g("image.hidden.bias")[...] += gb
            elif modality == "geometry":
                grads = encode_points_backward(self.point_encoder, enc_caches["geometry"], g_token)
                for i, (gw, gb) in enumerate(grads.point_layers):
                    g(f"points.layer{i}.weight")[...] += gw
                    g(f"points.layer{i}.bias")[...] += gb
                for i, (gw, gb) in enumerate(grads.post_layers):
                    g(f"points.post{i}.weight")[...] += gw
                    g(f"points.post{i}.bias")[...] += gb
                g("points.norm.gain")[...] += grads.norm_gain
                g("points.norm.shift")[...] += grads.norm_shift
            else:  # text: gradients stop at the LayerNorm, the table stays frozen
                row = enc_caches["text"]
                _, g_gain, g_shift = layernorm_backward(self.text_norm, row, g_token)
                g("text.norm.gain")[...] += g_gain
                g("text.norm.shift")[...] += g_shift


def forward_sample(model: MassModel, sample: Sample, pixel_m: float) -> MassPrediction:
    """Preprocess one raw sample and run the model on it."""
    prep = prepare_sample(sample, model.cfg.n_points, pixel_m,
                          need_points=model.cfg.use_volume)
    return model.predict(prep)
