"""Training objectives: velocity and denoiser losses in their constant-free
quadratic-minus-cross-term form, species cross-entropy, antithetic latent
sampling, and the weighted total loss.

The velocity loss mean(|b|^2 - 2 v . b) equals the mean squared error
mean(|b - v|^2) up to the b-independent constant mean(|v|^2); dropping the
constant keeps reported losses finite when the target velocity diverges near
the endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .interpolants import InterpolantSpec, coefficients

PART_NAMES = ("x_b", "x_z", "l_b", "l_z", "a")


def _check_same_shape(pred, target, name: str) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"{name}: prediction shape {pred.shape} != target shape {target.shape}")
    return target


def velocity_loss(b_pred: Tensor, target_velocity) -> Tensor:
    """mean(|b|^2 - 2 target . b) over all elements."""
    target = _check_same_shape(b_pred, target_velocity, "velocity_loss")
    return ad.mean(ad.mul(b_pred, b_pred) - ad.mul(b_pred, 2.0 * target))


def denoiser_loss(z_pred: Tensor, z) -> Tensor:
    """mean(|z_pred|^2 - 2 z_pred . z) over all elements."""
    z = _check_same_shape(z_pred, z, "denoiser_loss")
    return ad.mean(ad.mul(z_pred, z_pred) - ad.mul(z_pred, 2.0 * z))


def species_loss(logits: Tensor, a1_columns) -> Tensor:
    """Mean negative log-softmax probability of the true token.

    ``a1_columns`` indexes columns of the (n_atoms, n_real_tokens) logits, so
    callers map token ids to the mask-free vocabulary beforehand.
    """
    idx = np.asarray(a1_columns, dtype=np.int64)
    if logits.data.ndim != 2 or idx.shape != (logits.shape[0],):
        raise ValueError(
            f"species_loss: logits {logits.shape} incompatible with targets {idx.shape}")
    log_probs = ad.log_softmax(logits, axis=-1)
    picked = ad.gather_elements(log_probs, idx)
    return ad.mean(ad.mul(picked, -1.0))


def antithetic_pair(spec: InterpolantSpec, x0, x1, z, t) -> tuple[np.ndarray, np.ndarray]:
    """Interpolated points at +gamma z and -gamma z with a shared latent."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    c = coefficients(spec, t)
    mean_path = c.alpha * x0 + c.beta * x1
    return mean_path + c.gamma * z, mean_path - c.gamma * z


def antithetic_average(loss_plus: Tensor, loss_minus: Tensor) -> Tensor:
    """Average the losses evaluated at the antithetic pair."""
    return ad.mul(loss_plus + loss_minus, 0.5)


@dataclass
class LossWeights:
    """Relative term weights; the lattice-velocity weight is the fixed
    reference (1.0) and active weights are normalized to sum to one."""

    x_b: float = 1.0
    x_z: float = 1.0
    l_b: float = 1.0
    l_z: float = 1.0
    a: float = 1.0

    def __post_init__(self) -> None:
        for name in PART_NAMES:
            if getattr(self, name) <= 0.0:
                raise ValueError(f"relative weight {name} must be positive")
        if self.l_b != 1.0:
            raise ValueError("the lattice-velocity weight is the fixed reference, 1.0")

    def normalized(self, active: tuple[str, ...]) -> dict[str, float]:
        """Normalized weights over the active loss terms, summing to one."""
        unknown = set(active) - set(PART_NAMES)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")
        total = sum(getattr(self, name) for name in active)
        return {name: getattr(self, name) / total for name in active}

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in PART_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**{k: float(v) for k, v in d.items()})


def total_loss(parts: dict[str, Tensor], weights: LossWeights) -> Tensor:
    """Weighted sum of the supplied loss terms with normalized weights."""
    if not parts:
        raise ValueError("total_loss requires at least one loss term")
    lam = weights.normalized(tuple(parts.keys()))
    out = None
    for name, part in parts.items():
        term = ad.mul(part, lam[name])
        out = term if out is None else out + term
    return out
