"""Volume and density regression heads, mass composition, and the log loss.

Mass is the product of two latent factors. The volume head is ReLU-clamped
to a small positive floor; the density head squashes its pre-activation into
[rho_min, rho_max] through a sigmoid in log-density space, so the composed
mass is always strictly positive and the log loss is always defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, DomainError
from .nn import DenseLayer, dense_backward, dense_forward, make_dense, sigmoid
from .rng import Rng

V_FLOOR = 1e-6


@dataclass(frozen=True)
class DensityActivationConfig:
    rho_min: float = 50.0
    rho_max: float = 20000.0

    def __post_init__(self):
        if not (0.0 < self.rho_min < self.rho_max):
            raise ConfigError(f"need 0 < rho_min < rho_max, got [{self.rho_min}, {self.rho_max}]")


DEFAULT_DENSITY_CFG = DensityActivationConfig()


@dataclass
class MassPrediction:
    volume_factor: float
    density_factor: float
    mass: float
    gate_weights: np.ndarray | None = None


@dataclass
class RegressionHead:
    """One hidden tanh layer and a linear scalar output.

    ``out_scale`` is a fixed multiplier on the output (a reparametrization of
    the last layer, not extra capacity). It lets a head whose target lives far
    from O(1) keep its parameters at O(1), where Adam's fixed-size steps are
    stable; without it a volume factor of ~1e-3 sits within one optimizer
    step of the dead ReLU region.
    """

    hidden: DenseLayer
    out: DenseLayer
    out_scale: float = 1.0


def make_head(rng: Rng, in_dim: int, hidden_dim: int = 64,
              out_scale: float = 1.0) -> RegressionHead:
    head = RegressionHead(
        make_dense(rng, in_dim, hidden_dim, "tanh"),
        make_dense(rng, hidden_dim, 1, "identity"),
        out_scale,
    )
    return head


def _head_preactivation(head: RegressionHead, fused: np.ndarray) -> tuple[float, np.ndarray]:
    if fused.ndim != 1 or fused.shape[0] != head.hidden.in_dim:
        raise DimensionError(
            f"head expects input of length {head.hidden.in_dim}, got shape {fused.shape}"
        )
    h = dense_forward(head.hidden, fused)
    y = dense_forward(head.out, h)
    return head.out_scale * float(y[0]), h


def _head_backward(head: RegressionHead, fused: np.ndarray, h: np.ndarray, grad_y: float):
    g_h, g_w_out, g_b_out = dense_backward(head.out, h, np.array([grad_y * head.out_scale]))
    g_in, g_w_hid, g_b_hid = dense_backward(head.hidden, fused, g_h)
    return ((g_w_hid, g_b_hid), (g_w_out, g_b_out)), g_in


def volume_head(head: RegressionHead, fused: np.ndarray) -> float:
    """ReLU output clamped to at least V_FLOOR."""
    y, _ = _head_preactivation(head, fused)
    return max(max(y, 0.0), V_FLOOR)


def volume_head_with_cache(head: RegressionHead, fused: np.ndarray):
    y, h = _head_preactivation(head, fused)
    return max(max(y, 0.0), V_FLOOR), (y, h)


def volume_head_backward(head: RegressionHead, fused: np.ndarray, cache, grad_v: float):
    y, h = cache
    grad_y = grad_v if y > V_FLOOR else 0.0
    return _head_backward(head, fused, h, grad_y)


def density_head(head: RegressionHead, cfg: DensityActivationConfig, fused: np.ndarray) -> float:
    rho, _ = density_head_with_cache(head, cfg, fused)
    return rho


def density_head_with_cache(head: RegressionHead, cfg: DensityActivationConfig, fused: np.ndarray):
    """rho = exp(ln rho_min + sigmoid(y) * (ln rho_max - ln rho_min))."""
    y, h = _head_preactivation(head, fused)
    ln_lo, ln_hi = np.log(cfg.rho_min), np.log(cfg.rho_max)
    s = float(sigmoid(np.array([y]))[0])
    rho = float(np.exp(ln_lo + s * (ln_hi - ln_lo)))
    return rho, (y, h, s, rho)


def density_head_backward(head: RegressionHead, cfg: DensityActivationConfig,
                          fused: np.ndarray, cache, grad_rho: float):
    y, h, s, rho = cache
    span = np.log(cfg.rho_max) - np.log(cfg.rho_min)
    grad_y = grad_rho * rho * s * (1.0 - s) * span
    return _head_backward(head, fused, h, grad_y)


def compose_mass(volume_factor: float, density_factor: float,
                 cfg: DensityActivationConfig = DEFAULT_DENSITY_CFG,
                 gate_weights: np.ndarray | None = None) -> MassPrediction:
    """mass = volume_factor * density_factor, with range preconditions."""
    if not np.isfinite(volume_factor) or volume_factor < V_FLOOR:
        raise ContractError(f"volume factor {volume_factor} below floor {V_FLOOR}")
    if not np.isfinite(density_factor) or not (cfg.rho_min <= density_factor <= cfg.rho_max):
        raise ContractError(
            f"density factor {density_factor} outside [{cfg.rho_min}, {cfg.rho_max}]"
        )
    return MassPrediction(volume_factor, density_factor,
                          volume_factor * density_factor, gate_weights)


def alde_loss(m: float, m_hat: float) -> tuple[float, float]:
    """|ln m - ln m_hat| and its gradient wrt m_hat (subgradient 0 at equality)."""
    if not (np.isfinite(m) and np.isfinite(m_hat)) or m <= 0 or m_hat <= 0:
        raise DomainError(f"masses must be positive and finite, got m={m}, m_hat={m_hat}")
    diff = np.log(m_hat) - np.log(m)
    loss = abs(float(diff))
    grad = float(np.sign(diff)) / m_hat
    return loss, grad
