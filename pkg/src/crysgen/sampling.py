"""Generation-time integration: forward-Euler ODE and Euler-Maruyama SDE
steppers for coordinates and lattices, velocity annealing, the vanishing
diffusion coefficient, and the joint generation loops.

The SDE drift convention is b - (eps(t) / gamma(t)) * z_theta with diffusion
sqrt(2 eps(t)); the first and last integration steps always use the ODE form
so 1/gamma is never evaluated where gamma vanishes. Annealing rescales only
the learned velocity, never the denoiser term.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, asdict

import numpy as np

from .coupling import BaseDistributionSpec, sample_base
from .dfm import TokenSpace, sample_denoiser_and_rate
from .interpolants import InterpolantSpec, coefficients
from .network import ModelConfig, ModelParams, forward
from .structures import MASK_TOKEN, Structure, wrap

SCHEMES = ("ode", "sde")


class GenerationError(RuntimeError):
    pass


@dataclass
class GroupGenConfig:
    """Per-variable-group sampling scheme and its knobs."""

    scheme: str = "ode"
    eps_c: float = 0.0
    eps_mu: float = 0.2
    eps_sigma: float = 0.02
    anneal_s: float = 0.0
    diffusion_prefactor: float = 2.0

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown sampling scheme {self.scheme!r}")
        if self.eps_c < 0.0:
            raise ValueError("eps_c must be nonnegative")
        if self.eps_mu <= 0.0 or self.eps_sigma <= 0.0:
            raise ValueError("eps_mu and eps_sigma must be positive")
        if self.anneal_s < 0.0:
            raise ValueError("anneal_s must be nonnegative")


@dataclass
class GenerationConfig:
    coords: GroupGenConfig = field(default_factory=GroupGenConfig)
    lattice: GroupGenConfig = field(default_factory=GroupGenConfig)
    steps: int = 100
    species_eta: float = 0.0
    species_single_eta: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.coords, dict):
            self.coords = GroupGenConfig(**self.coords)
        if isinstance(self.lattice, dict):
            self.lattice = GroupGenConfig(**self.lattice)
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.species_eta < 0.0:
            raise ValueError("species_eta must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationConfig":
        return cls(**d)


def validate_generation(gen: GenerationConfig, x_spec: InterpolantSpec,
                        l_spec: InterpolantSpec, model: ModelConfig) -> None:
    """Reject configurations whose SDE scheme lacks a positive gamma or a
    denoiser head."""
    for name, group, spec in (("coords", gen.coords, x_spec), ("lattice", gen.lattice, l_spec)):
        if group.scheme == "sde" and group.eps_c > 0.0:
            if not spec.uses_gamma():
                raise ValueError(
                    f"{name}: SDE sampling requires gamma(t) > 0 on (0,1); "
                    f"interpolant {spec.family!r} with gamma_kind "
                    f"{spec.gamma_kind!r} provides none")
            if not model.predict_denoiser:
                raise ValueError(f"{name}: SDE sampling requires a model with denoiser heads")


def epsilon_vanish(c: float, mu: float, sigma: float, t) -> np.ndarray:
    """Diffusion coefficient gated to vanish at both endpoints."""
    t = np.asarray(t, dtype=np.float64)
    gate0 = 1.0 + np.exp(-(t - mu) / sigma)
    gate1 = 1.0 + np.exp(-(1.0 - mu - t) / sigma)
    out = c / (gate0 * gate1)
    return out if out.ndim else float(out)


def anneal(b, s: float, t):
    """Velocity annealing b -> (1 + s t) b."""
    if s < 0.0:
        raise ValueError("annealing coefficient must be nonnegative")
    return (1.0 + s * np.asarray(t, dtype=np.float64)) * b


def ode_step(x, b_pred, dt: float, *, periodic: bool = False):
    """Forward-Euler update; fractional coordinates are wrapped afterward."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    out = np.asarray(x, dtype=np.float64) + np.asarray(b_pred, dtype=np.float64) * dt
    return wrap(out) if periodic else out


def sde_step(x, b_pred, z_pred, gamma_t: float, eps_t: float, dt: float,
             rng: np.random.Generator, *, periodic: bool = False,
             diffusion_prefactor: float = 2.0):
    """Euler-Maruyama update with drift b - (eps/gamma) z and noise
    sqrt(prefactor * eps * dt)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b_pred, dtype=np.float64)
    if eps_t == 0.0:
        return ode_step(x, b, dt, periodic=periodic)
    if gamma_t <= 0.0:
        raise ValueError("SDE step with positive eps requires gamma(t) > 0")
    drift = b - (eps_t / gamma_t) * np.asarray(z_pred, dtype=np.float64)
    noise = math.sqrt(diffusion_prefactor * eps_t * dt) * rng.standard_normal(x.shape)
    out = x + drift * dt + noise
    return wrap(out) if periodic else out


def _check_finite(arr: np.ndarray, step: int, group: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise GenerationError(f"non-finite {group} state at integration step {step}")


def _integrate_batch(params: ModelParams, model: ModelConfig,
                     x_spec: InterpolantSpec, l_spec: InterpolantSpec,
                     gen: GenerationConfig, species: np.ndarray,
                     coords: np.ndarray, lattices: np.ndarray,
                     rng: np.random.Generator, task: str,
                     token_space: TokenSpace | None,
                     trajectory: list | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integrate one batch of equal-size structures over the full time grid."""
    batch = species.shape[0]
    steps = gen.steps
    dt = 1.0 / steps
    for k in range(steps):
        t = k * dt
        out = forward(params, model, species, coords, lattices, np.full(batch, t))
        endpoint = k == 0 or k == steps - 1

        b_x = anneal(out.b_x.data, gen.coords.anneal_s, t)
        _check_finite(b_x, k, "coords")
        eps_x = epsilon_vanish(gen.coords.eps_c, gen.coords.eps_mu, gen.coords.eps_sigma, t)
        if gen.coords.scheme == "sde" and not endpoint and eps_x > 0.0:
            gamma_x = float(coefficients(x_spec, t).gamma)
            _check_finite(out.z_x.data, k, "coords")
            coords = sde_step(coords, b_x, out.z_x.data, gamma_x, eps_x, dt, rng,
                              periodic=True,
                              diffusion_prefactor=gen.coords.diffusion_prefactor)
        else:
            coords = ode_step(coords, b_x, dt, periodic=True)

        b_l = anneal(out.b_l.data, gen.lattice.anneal_s, t)
        eps_l = epsilon_vanish(gen.lattice.eps_c, gen.lattice.eps_mu, gen.lattice.eps_sigma, t)
        if gen.lattice.scheme == "sde" and not endpoint and eps_l > 0.0:
            gamma_l = float(coefficients(l_spec, t).gamma)
            lattices = sde_step(lattices, b_l, out.z_l.data, gamma_l, eps_l, dt, rng,
                                diffusion_prefactor=gen.lattice.diffusion_prefactor)
        else:
            lattices = ode_step(lattices, b_l, dt)
        _check_finite(lattices, k, "lattice")

        if task == "dng":
            if out.logits is None:
                raise GenerationError("de novo generation requires a species head")
            species = sample_denoiser_and_rate(
                out.logits.data, species, t, dt, gen.species_eta, token_space, rng,
                single_eta=gen.species_single_eta)

        if trajectory is not None:
            trajectory.append({
                "t": (k + 1) * dt,
                "structures": [
                    {"species": species[b].tolist(), "coords": coords[b].tolist(),
                     "lattice": lattices[b].tolist()} for b in range(batch)
                ],
            })
    return species, coords, lattices


def generate(params: ModelParams, model: ModelConfig, x_spec: InterpolantSpec,
             l_spec: InterpolantSpec, base_spec: BaseDistributionSpec,
             gen: GenerationConfig, task: str, *,
             compositions: list[np.ndarray] | None = None,
             n_structures: int | None = None,
             atom_count_dist: dict[int, float] | None = None,
             token_space: TokenSpace | None = None,
             rng: np.random.Generator | None = None,
             trajectory: list | None = None) -> list[Structure]:
    """Generate structures by joint integration of coordinates and lattice.

    For ``task="csp"`` the species are fixed to the provided compositions; for
    ``task="dng"`` atom counts are drawn from ``atom_count_dist`` and species
    start fully masked, evolving by discrete jumps alongside the integration.
    """
    task = task.lower()
    if task not in ("csp", "dng"):
        raise ValueError(f"unknown generation task {task!r}")
    validate_generation(gen, x_spec, l_spec, model)
    rng = rng if rng is not None else np.random.default_rng(gen.seed)

    if task == "csp":
        if compositions is None:
            raise ValueError("CSP generation requires compositions")
        comps = [np.asarray(c, dtype=np.int64) for c in compositions]
    else:
        if n_structures is None or atom_count_dist is None or token_space is None:
            raise ValueError(
                "DNG generation requires n_structures, atom_count_dist and token_space")
        sizes = np.array(sorted(atom_count_dist.keys()))
        weights = np.array([atom_count_dist[int(n)] for n in sizes], dtype=np.float64)
        weights /= weights.sum()
        draws = rng.choice(sizes, size=n_structures, p=weights)
        comps = [np.full(int(n), MASK_TOKEN, dtype=np.int64) for n in draws]

    by_size: dict[int, list[int]] = defaultdict(list)
    for idx, comp in enumerate(comps):
        by_size[len(comp)].append(idx)

    results: list[Structure | None] = [None] * len(comps)
    for n_atoms in sorted(by_size):
        indices = by_size[n_atoms]
        bases = [
            sample_base(base_spec, n_atoms, rng,
                        composition=comps[i] if task == "csp" else None)
            for i in indices
        ]
        species = np.stack([b.species for b in bases])
        coords = np.stack([b.coords for b in bases])
        lattices = np.stack([b.lattice for b in bases])
        species, coords, lattices = _integrate_batch(
            params, model, x_spec, l_spec, gen, species, coords, lattices,
            rng, task, token_space, trajectory)
        for row, i in enumerate(indices):
            results[i] = Structure(species[row], wrap(coords[row]), lattices[row])
    return [r for r in results if r is not None]
