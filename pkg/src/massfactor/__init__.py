"""Factored volume/density mass estimation over fused visual cues.

The package provides a minimal float64 network core with analytic gradients,
a depth-to-point-cloud geometry cue, a material vocabulary with frozen
embeddings, three fusion mechanisms, the factored mass heads with a log-mass
loss, the five evaluation metrics, a synthetic benchmark with analytic
ground truth, and a CLI for seeded, reproducible experiments.
"""

from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    InputError,
    NumericError,
    UnknownMaterialError,
)
from .fusion import ModalFeatures, FusedFeature, fuse_concat, fuse_gated, fuse_self_attention
from .geometry import BBox, DepthMap, PointCloud, bbox_diagonal, normalize_depth, \
    sample_points, unproject
from .heads import DensityActivationConfig, MassPrediction, alde_loss, compose_mass
from .materials import MaterialVocab, default_vocab, parse_material, rule_based_density
from .metrics import EvalPair, MetricsReport, aggregate
from .model import MassModel, ModelConfig, forward_sample, prepare_sample
from .synth import Dataset, GeneratorConfig, Sample, ShapeSpec, analytic_volume, \
    generate_dataset, load_dataset, render_depth, write_dataset
from .train import RunRecord, TrainConfig, density_floor_oracle, load_model, \
    run_ablation_grid, run_baseline_direct, run_baseline_rulebased, run_training, save_model

__version__ = "0.1.0"
