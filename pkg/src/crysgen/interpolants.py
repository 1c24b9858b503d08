"""Interpolant coefficient families alpha(t), beta(t), gamma(t) and the
interpolation map x_t = alpha(t) x0 + beta(t) x1 + gamma(t) z.

Five families are implemented:

* ``linear``   -- constant-velocity bridge, alpha = 1 - t, beta = t.
* ``trig``     -- quarter-period cosine/sine pair.
* ``enc_dec``  -- passes through an intermediate Gaussian of variance ``a``
  at ``t_switch`` before decoding toward the target; parameterized by an
  exponent ``p`` >= 1/2.
* ``vp_sbd``   -- variance-preserving diffusion bridge alpha = sqrt(1 - tau^2),
  beta = tau, with const / linear / cosine tau schedules.
* ``ve_sbd``   -- variance-exploding one-sided bridge
  alpha = sqrt(sigma^2(1 - t) - sigma^2(0)) with a geometric sigma schedule
  and beta identically 1. This family only pins the t = 1 endpoint; the
  wide-Gaussian alpha(0) x0 term plays the role of the latent variable.

Derivatives are analytic. Families whose derivatives diverge at the endpoints
are evaluated at times clamped to [T_CLAMP, 1 - T_CLAMP].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import NamedTuple

import numpy as np

from .structures import nearest_image_unwrap, wrap

FAMILIES = ("linear", "trig", "enc_dec", "vp_sbd", "ve_sbd")
GAMMA_KINDS = ("none", "latent_sqrt", "enc_dec_gamma")
VP_SCHEDULES = ("const", "linear", "cosine")

# training/evaluation-time clamp for families with endpoint-divergent derivatives
T_CLAMP = 1e-5


class Coefficients(NamedTuple):
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    d_alpha: np.ndarray
    d_beta: np.ndarray
    d_gamma: np.ndarray


@dataclass
class InterpolantSpec:
    """Family tag plus parameters defining alpha, beta, gamma and derivatives."""

    family: str = "linear"
    gamma_kind: str = "none"
    a: float = 1.0
    t_switch: float = 0.5
    p: float = 1.0
    sigma0: float = 1.0
    schedule: str = "const"
    beta_min: float = 0.1
    beta_max: float = 20.0
    d: float = 0.008
    sigma_min: float = 0.01
    sigma_max: float = 1.0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown interpolant family {self.family!r}")
        if self.gamma_kind not in GAMMA_KINDS:
            raise ValueError(f"unknown gamma kind {self.gamma_kind!r}")
        if self.schedule not in VP_SCHEDULES:
            raise ValueError(f"unknown vp schedule {self.schedule!r}")
        if self.family in ("vp_sbd", "ve_sbd") and self.gamma_kind != "none":
            raise ValueError("score-based-diffusion families do not take an explicit latent")
        if self.family == "enc_dec":
            if not 0.0 < self.t_switch < 1.0:
                raise ValueError(f"t_switch must lie in (0, 1), got {self.t_switch}")
            if self.p not in (0.5, 1.0):
                raise ValueError(f"enc-dec exponent p must be 0.5 or 1.0, got {self.p}")
            if self.gamma_kind == "latent_sqrt":
                raise ValueError("enc_dec family uses gamma_kind 'enc_dec_gamma' or 'none'")
        if self.gamma_kind == "enc_dec_gamma" and self.family != "enc_dec":
            raise ValueError("gamma_kind 'enc_dec_gamma' requires the enc_dec family")
        if self.a <= 0.0:
            raise ValueError(f"latent scale a must be positive, got {self.a}")
        if self.sigma0 <= 0.0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")
        if self.family == "ve_sbd" and not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError("ve_sbd requires 0 < sigma_min < sigma_max")

    @property
    def one_sided(self) -> bool:
        """True for families that only pin the t = 1 endpoint."""
        return self.family == "ve_sbd"

    def has_divergent_velocity(self) -> bool:
        """Whether any coefficient derivative diverges at an endpoint."""
        if self.gamma_kind == "latent_sqrt":
            return True
        if self.gamma_kind == "enc_dec_gamma" and self.p == 0.5:
            return True
        if self.family == "enc_dec" and self.p == 0.5:
            return True
        return self.family in ("vp_sbd", "ve_sbd")

    def uses_gamma(self) -> bool:
        return self.gamma_kind != "none"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "InterpolantSpec":
        return cls(**d)


def _check_t(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < -1e-12) or np.any(t > 1.0 + 1e-12):
        raise ValueError(f"time must lie in [0, 1], got {t}")
    return np.clip(t, 0.0, 1.0)


def vp_tau(schedule: str, t, beta_min: float = 0.1, beta_max: float = 20.0,
           d: float = 0.008) -> np.ndarray:
    """Variance-preserving schedule tau(t) in [0, 1]."""
    t = _check_t(t)
    if schedule == "const":
        return t
    if schedule == "linear":
        safe = np.maximum(t, 1e-300)
        log_t = np.log(safe)
        out = np.exp(0.5 * beta_min * log_t - 0.25 * (beta_max - beta_min) * log_t ** 2)
        return np.where(t > 0.0, out, 0.0)
    if schedule == "cosine":
        amp = math.pi / (2.0 + 2.0 * d)
        safe = np.maximum(t, math.exp(-1.0))
        out = np.sin(amp * (1.0 + np.log(safe))) / math.sin(amp)
        return np.where(t >= math.exp(-1.0), out, 0.0)
    raise ValueError(f"unknown vp schedule {schedule!r}")


def _vp_tau_dot(schedule: str, t, beta_min: float, beta_max: float, d: float) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if schedule == "const":
        return np.ones_like(t)
    if schedule == "linear":
        safe = np.maximum(t, 1e-300)
        log_t = np.log(safe)
        tau = vp_tau("linear", t, beta_min, beta_max, d)
        out = tau * (0.5 * beta_min - 0.5 * (beta_max - beta_min) * log_t) / safe
        return np.where(t > 0.0, out, 0.0)
    if schedule == "cosine":
        amp = math.pi / (2.0 + 2.0 * d)
        safe = np.maximum(t, math.exp(-1.0))
        out = np.cos(amp * (1.0 + np.log(safe))) * amp / (math.sin(amp) * safe)
        return np.where(t >= math.exp(-1.0), out, 0.0)
    raise ValueError(f"unknown vp schedule {schedule!r}")


def _latent_sqrt(a: float, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    prod = np.clip(t * (1.0 - t), 0.0, None)
    gamma = np.sqrt(a * prod)
    safe = np.where(gamma > 0.0, gamma, 1.0)
    d_gamma = np.where(gamma > 0.0, a * (1.0 - 2.0 * t) / (2.0 * safe), 0.0)
    return gamma, d_gamma


def _enc_dec_phase(t: np.ndarray, t_switch: float, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Phase u(t) in [0, pi] of the encoder-decoder family and its derivative."""
    g = np.power(np.clip(t * (1.0 - t_switch), 0.0, None), p)
    h = np.power(np.clip(t_switch * (1.0 - t), 0.0, None), p)
    denom = g + h
    u = math.pi * g / denom
    with np.errstate(divide="ignore", over="ignore"):
        dg = p * (1.0 - t_switch) ** p * np.power(np.maximum(t, 1e-300), p - 1.0)
        dh = -p * t_switch ** p * np.power(np.maximum(1.0 - t, 1e-300), p - 1.0)
    du = math.pi * (dg * h - g * dh) / denom ** 2
    return u, du


def coefficients(spec: InterpolantSpec, t) -> Coefficients:
    """Evaluate (alpha, beta, gamma) and their time derivatives at t in [0, 1]."""
    t = _check_t(t)
    one = np.ones_like(t)
    zero = np.zeros_like(t)

    if spec.family == "linear":
        alpha, beta = 1.0 - t, t.copy()
        d_alpha, d_beta = -one, one
    elif spec.family == "trig":
        half_pi = 0.5 * math.pi
        alpha, beta = np.cos(half_pi * t), np.sin(half_pi * t)
        d_alpha, d_beta = -half_pi * np.sin(half_pi * t), half_pi * np.cos(half_pi * t)
    elif spec.family == "enc_dec":
        u, du = _enc_dec_phase(t, spec.t_switch, spec.p)
        before = t < spec.t_switch
        after = t > spec.t_switch
        cos_sq = np.cos(u) ** 2
        slope = -np.sin(2.0 * u) * du
        alpha = np.where(before, cos_sq, 0.0)
        beta = np.where(after, cos_sq, 0.0)
        d_alpha = np.where(before, slope, 0.0)
        d_beta = np.where(after, slope, 0.0)
    elif spec.family == "vp_sbd":
        tau = vp_tau(spec.schedule, t, spec.beta_min, spec.beta_max, spec.d)
        tau_dot = _vp_tau_dot(spec.schedule, t, spec.beta_min, spec.beta_max, spec.d)
        alpha = np.sqrt(np.clip(1.0 - tau ** 2, 0.0, None))
        beta = tau
        safe = np.where(alpha > 0.0, alpha, 1.0)
        d_alpha = np.where(alpha > 0.0, -tau * tau_dot / safe, 0.0)
        d_beta = tau_dot
    elif spec.family == "ve_sbd":
        log_r = math.log(spec.sigma_max / spec.sigma_min)
        growth = np.exp(2.0 * (1.0 - t) * log_r)
        alpha = spec.sigma_min * np.sqrt(np.clip(growth - 1.0, 0.0, None))
        safe = np.where(alpha > 0.0, alpha, 1.0)
        d_alpha = np.where(alpha > 0.0, -spec.sigma_min ** 2 * log_r * growth / safe, 0.0)
        beta, d_beta = one, zero
    else:  # pragma: no cover - guarded by InterpolantSpec
        raise ValueError(f"unknown family {spec.family!r}")

    if spec.gamma_kind == "latent_sqrt":
        gamma, d_gamma = _latent_sqrt(spec.a, t)
    elif spec.gamma_kind == "enc_dec_gamma":
        u, du = _enc_dec_phase(t, spec.t_switch, spec.p)
        root_a = math.sqrt(spec.a)
        gamma = root_a * np.sin(u) ** 2
        d_gamma = root_a * np.sin(2.0 * u) * du
    else:
        gamma, d_gamma = zero, zero.copy()

    return Coefficients(alpha, beta, gamma, d_alpha, d_beta, d_gamma)


def clamp_time(spec: InterpolantSpec, t):
    """Clamp times into the open interval where derivatives stay finite."""
    if spec.has_divergent_velocity():
        return np.clip(np.asarray(t, dtype=np.float64), T_CLAMP, 1.0 - T_CLAMP)
    return np.asarray(t, dtype=np.float64)


def _broadcast_coeff(c, like: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 0 or c.shape == like.shape:
        return c
    # per-sample coefficients against batched state: append trailing axes
    return c.reshape(c.shape + (1,) * (like.ndim - c.ndim))


def interpolate(spec: InterpolantSpec, x0, x1, z, t) -> np.ndarray:
    """x_t = alpha(t) x0 + beta(t) x1 + gamma(t) z in Euclidean space."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError(f"interpolate: endpoint shapes differ, {x0.shape} vs {x1.shape}")
    c = coefficients(spec, t)
    out = _broadcast_coeff(c.alpha, x0) * x0 + _broadcast_coeff(c.beta, x0) * x1
    if spec.uses_gamma():
        if z is None:
            raise ValueError("interpolate: latent z required when gamma is active")
        z = np.asarray(z, dtype=np.float64)
        if z.shape != x0.shape:
            raise ValueError(f"interpolate: latent shape {z.shape} differs from {x0.shape}")
        out = out + _broadcast_coeff(c.gamma, x0) * z
    return out


def interpolant_velocity(spec: InterpolantSpec, x0, x1, z, t) -> np.ndarray:
    """Time derivative of the interpolation path, clamped near the endpoints
    for families whose derivatives diverge there."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError(f"velocity: endpoint shapes differ, {x0.shape} vs {x1.shape}")
    c = coefficients(spec, clamp_time(spec, t))
    out = _broadcast_coeff(c.d_alpha, x0) * x0 + _broadcast_coeff(c.d_beta, x0) * x1
    if spec.uses_gamma():
        if z is None:
            raise ValueError("velocity: latent z required when gamma is active")
        z = np.asarray(z, dtype=np.float64)
        if z.shape != x0.shape:
            raise ValueError(f"velocity: latent shape {z.shape} differs from {x0.shape}")
        out = out + _broadcast_coeff(c.d_gamma, x0) * z
    return out


def periodic_interpolate(spec: InterpolantSpec, x0, x1, z, t) -> np.ndarray:
    """Interpolate fractional coordinates along the shortest geodesic.

    x1 is first unwrapped to the periodic image nearest to x0, the Euclidean
    interpolant runs in unwrapped space, and the path is wrapped back to [0,1).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1u = nearest_image_unwrap(x0, x1)
    return wrap(interpolate(spec, x0, x1u, z, t))


def periodic_velocity(spec: InterpolantSpec, x0, x1, z, t) -> np.ndarray:
    """Path velocity in unwrapped space for the shortest-geodesic interpolant."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1u = nearest_image_unwrap(x0, x1)
    return interpolant_velocity(spec, x0, x1u, z, t)


def _endpoint_violations(alpha0, alpha1, beta0, beta1, gamma0, gamma1,
                         one_sided: bool, tol: float) -> list[str]:
    if one_sided:
        checks = [
            ("alpha(1)=0", abs(alpha1)),
            ("beta(0)=1", abs(beta0 - 1.0)),
            ("beta(1)=1", abs(beta1 - 1.0)),
            ("gamma(0)=0", abs(gamma0)),
            ("gamma(1)=0", abs(gamma1)),
        ]
    else:
        checks = [
            ("alpha(0)=1", abs(alpha0 - 1.0)),
            ("alpha(1)=0", abs(alpha1)),
            ("beta(0)=0", abs(beta0)),
            ("beta(1)=1", abs(beta1 - 1.0)),
            ("gamma(0)=0", abs(gamma0)),
            ("gamma(1)=0", abs(gamma1)),
        ]
    return [f"{name} violated by {err:.3e}" for name, err in checks if err > tol]


def validate_coefficient_functions(alpha_fn, beta_fn, gamma_fn, *,
                                   one_sided: bool = False,
                                   require_positive_gamma: bool = False,
                                   grid_points: int = 999,
                                   tol: float = 1e-10) -> list[str]:
    """Numerically check arbitrary coefficient functions against the endpoint
    constraints; returns violation messages (empty means valid)."""
    violations = _endpoint_violations(
        float(alpha_fn(0.0)), float(alpha_fn(1.0)),
        float(beta_fn(0.0)), float(beta_fn(1.0)),
        float(gamma_fn(0.0)), float(gamma_fn(1.0)),
        one_sided, tol,
    )
    if require_positive_gamma:
        grid = np.linspace(0.0, 1.0, grid_points + 2)[1:-1]
        gamma = np.array([float(gamma_fn(t)) for t in grid])
        if np.any(gamma <= 0.0):
            worst = grid[int(np.argmin(gamma))]
            violations.append(f"gamma(t)>0 violated on (0,1), e.g. gamma({worst:.4f})<=0")
    return violations


def validate(spec: InterpolantSpec, grid_points: int = 999, tol: float = 1e-10) -> list[str]:
    """Check the endpoint and positivity constraints; return violation messages.

    Two-sided families must satisfy alpha(0) = beta(1) = 1 and
    alpha(1) = beta(0) = gamma(0) = gamma(1) = 0. The one-sided ve_sbd family
    pins only the data endpoint: alpha(1) = 0 with beta identically 1. When a
    latent is configured, gamma must be positive on the open interval.
    """
    c0 = coefficients(spec, 0.0)
    c1 = coefficients(spec, 1.0)
    violations = _endpoint_violations(
        float(c0.alpha), float(c1.alpha), float(c0.beta), float(c1.beta),
        float(c0.gamma), float(c1.gamma), spec.one_sided, tol,
    )
    if spec.uses_gamma():
        grid = np.linspace(0.0, 1.0, grid_points + 2)[1:-1]
        gamma = coefficients(spec, grid).gamma
        if np.any(gamma <= 0.0):
            worst = grid[int(np.argmin(gamma))]
            violations.append(f"gamma(t)>0 violated on (0,1), e.g. gamma({worst:.4f})<=0")
    return violations
