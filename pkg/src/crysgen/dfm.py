"""Discrete flow matching for species tokens.

The conditional flow interpolates linearly from a fully masked state to the
target token; generation simulates the corresponding continuous-time Markov
chain with Euler jump steps, unmasking every token by t = 1. The generic
rate formula ReLU(dp_t(i) - dp_t(a_t)) / (Z * p_t(a_t)) is offered in two
normalizations:

* ``exact=True`` (default for generation): Z counts the states supported by
  the masking path (two: target and mask) and jumps are restricted to that
  support, so simulated chains reproduce the conditional flow's marginals.
* ``exact=False``: Z is the full token count S and jumps to any state are
  allowed, evaluating the formula verbatim.

Detailed-balance stochasticity is controlled by ``eta``; the default carries
eta both as the prefactor and inside the detailed-balance entries (giving
eta^2 terms), with ``single_eta=True`` selecting the single-factor variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# states with positive probability along the masking path for t in (0, 1)
_MASKING_SUPPORT = 2


@dataclass(frozen=True)
class TokenSpace:
    """Token vocabulary: ``n_tokens`` ids including the distinguished mask."""

    n_tokens: int = 101
    mask: int = 0

    def __post_init__(self) -> None:
        if self.n_tokens < 2:
            raise ValueError("token space needs at least one real token plus the mask")
        if not 0 <= self.mask < self.n_tokens:
            raise ValueError(f"mask id {self.mask} outside token range")

    @property
    def real_tokens(self) -> np.ndarray:
        return np.array([s for s in range(self.n_tokens) if s != self.mask])


def conditional_flow(a1: int, t: float, space: TokenSpace) -> np.ndarray:
    """p_{t|1}(. | a1): mass t on the target token, 1 - t on the mask."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time must lie in [0, 1], got {t}")
    if a1 == space.mask:
        raise ValueError("target token cannot be the mask")
    p = np.zeros(space.n_tokens)
    p[a1] += t
    p[space.mask] += 1.0 - t
    return p


def conditional_flow_dt(a1: int, space: TokenSpace) -> np.ndarray:
    """Time derivative of the masking conditional flow (constant in t)."""
    dp = np.zeros(space.n_tokens)
    dp[a1] += 1.0
    dp[space.mask] -= 1.0
    return dp


def conditional_rate(a_t: int, i: int, a1: int, t: float, eta: float,
                     space: TokenSpace, *, exact: bool = True,
                     single_eta: bool = False) -> float:
    """Jump rate from token a_t to token i at time t, conditioned on a1."""
    if i == a_t:
        raise ValueError("rates are defined for off-diagonal transitions only")
    if not 0.0 <= t < 1.0:
        raise ValueError(f"rates are defined for t in [0, 1), got {t}")
    p = conditional_flow(a1, t, space)
    dp = conditional_flow_dt(a1, space)
    if p[a_t] <= 0.0:
        base = 0.0  # unreachable state
    else:
        z = _MASKING_SUPPORT if exact else space.n_tokens
        base = max(dp[i] - dp[a_t], 0.0) / (z * p[a_t])
        if exact and p[i] == 0.0 and i != a1:
            base = 0.0
    w = eta if single_eta else eta * eta
    db = 0.0
    if a_t == a1 and i == space.mask:
        db = w
    elif a_t == space.mask and i == a1:
        db = w * t / max(1.0 - t, 1e-300)
    return base + db


def rate_rows(a_t: np.ndarray, a1: np.ndarray, t: float, eta: float,
              space: TokenSpace, *, exact: bool = True,
              single_eta: bool = False) -> np.ndarray:
    """Vectorized off-diagonal rate rows, shape tokens.shape + (n_tokens,)."""
    a_t = np.asarray(a_t, dtype=np.int64)
    a1 = np.asarray(a1, dtype=np.int64)
    if np.any(a1 == space.mask):
        raise ValueError("target tokens cannot be the mask")
    S = space.n_tokens
    at_is_target = a_t == a1
    at_is_mask = a_t == space.mask
    p_at = np.where(at_is_target, t, np.where(at_is_mask, 1.0 - t, 0.0))
    dp_at = np.where(at_is_target, 1.0, np.where(at_is_mask, -1.0, 0.0))

    dp = np.zeros(a_t.shape + (S,))
    dp[..., space.mask] = -1.0
    np.put_along_axis(dp, a1[..., None], 1.0, -1)

    numer = np.maximum(dp - dp_at[..., None], 0.0)
    z = _MASKING_SUPPORT if exact else S
    safe_p = np.where(p_at > 0.0, p_at, 1.0)
    rates = np.where((p_at > 0.0)[..., None], numer / (z * safe_p[..., None]), 0.0)
    if exact:
        support = np.zeros(a_t.shape + (S,), dtype=bool)
        support[..., space.mask] = True
        np.put_along_axis(support, a1[..., None], True, -1)
        rates = np.where(support, rates, 0.0)

    w = eta if single_eta else eta * eta
    if w > 0.0:
        rates[..., space.mask] += w * at_is_target
        db_unmask = w * t / max(1.0 - t, 1e-300) * at_is_mask
        np.put_along_axis(rates, a1[..., None],
                          np.take_along_axis(rates, a1[..., None], -1) + db_unmask[..., None], -1)

    np.put_along_axis(rates, a_t[..., None], 0.0, -1)
    return rates


def _sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = 1.0
    u = rng.random(probs.shape[:-1] + (1,))
    return (u > cdf).sum(axis=-1)


def dfm_euler_step(a_t: np.ndarray, a1: np.ndarray, t: float, dt: float,
                   eta: float, space: TokenSpace, rng: np.random.Generator,
                   *, exact: bool = True, single_eta: bool = False) -> np.ndarray:
    """One Euler jump update of the species chain.

    Jump probabilities are off-diagonal rates times dt with the remaining
    mass on the diagonal; a negative diagonal residue (rates diverge as
    t -> 1) is clamped and the row renormalized. Reaching t + dt = 1 forces
    any residual masks to the sampled target tokens.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t + dt > 1.0 + 1e-9:
        raise ValueError(f"step beyond t = 1: t={t}, dt={dt}")
    a_t = np.asarray(a_t, dtype=np.int64)
    a1 = np.asarray(a1, dtype=np.int64)
    probs = rate_rows(a_t, a1, t, eta, space, exact=exact, single_eta=single_eta) * dt
    residual = np.clip(1.0 - probs.sum(axis=-1), 0.0, None)
    np.put_along_axis(probs, a_t[..., None], residual[..., None], -1)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    out = _sample_categorical(probs, rng)
    if t + dt >= 1.0 - 1e-9:
        out = np.where(out == space.mask, a1, out)
    return out


def sample_denoiser(logits: np.ndarray, space: TokenSpace,
                    rng: np.random.Generator) -> np.ndarray:
    """Draw target tokens from per-atom logits over the real vocabulary.

    Logits have trailing dimension n_tokens - 1 and never cover the mask;
    the sampled column index is mapped back to a real token id.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] != space.n_tokens - 1:
        raise ValueError(
            f"logits last dim {logits.shape[-1]} != {space.n_tokens - 1} real tokens")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits contain non-finite values")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=-1, keepdims=True)
    cols = _sample_categorical(probs, rng)
    return np.where(cols >= space.mask, cols + 1, cols)


def sample_denoiser_and_rate(logits: np.ndarray, a_t: np.ndarray, t: float,
                             dt: float, eta: float, space: TokenSpace,
                             rng: np.random.Generator, *, exact: bool = True,
                             single_eta: bool = False) -> np.ndarray:
    """Draw a1 from the learned denoiser and take one Euler jump step."""
    a1 = sample_denoiser(logits, space, rng)
    return dfm_euler_step(a_t, a1, t, dt, eta, space, rng,
                          exact=exact, single_eta=single_eta)
