"""Base-distribution sampling for (species, coordinates, lattice) and the
pairing of base/target samples.

The informative lattice base combines a per-axis log-normal fit of the
lattice-vector lengths with uniform angles over the observed range. The
optional data-dependent coupling permutes base atoms to minimize the total
torus distance to the paired target atoms.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.optimize import linear_sum_assignment

from .structures import (
    MASK_TOKEN,
    Structure,
    lattice_angles,
    lattice_from_parameters,
    lattice_lengths,
    torus_distance_matrix,
    wrap,
)

COORD_KINDS = ("uniform", "wrapped_normal")
LATTICE_KINDS = ("lognormal_angles", "gaussian")
SPECIES_KINDS = ("all_masked", "fixed_composition")


@dataclass
class BaseDistributionSpec:
    """Parameters of the base distribution rho_0 over (A, X, L)."""

    coord_kind: str = "uniform"
    lattice_kind: str = "lognormal_angles"
    length_mu_log: np.ndarray = field(default_factory=lambda: np.zeros(3))
    length_sigma_log: np.ndarray = field(default_factory=lambda: np.full(3, 0.1))
    angle_range: tuple[float, float] = (np.pi / 2.0, np.pi / 2.0)
    species_kind: str = "all_masked"
    sbd_sigma0: float = 1.0

    def __post_init__(self) -> None:
        self.length_mu_log = np.asarray(self.length_mu_log, dtype=np.float64)
        self.length_sigma_log = np.asarray(self.length_sigma_log, dtype=np.float64)
        if self.coord_kind not in COORD_KINDS:
            raise ValueError(f"unknown coord_kind {self.coord_kind!r}")
        if self.lattice_kind not in LATTICE_KINDS:
            raise ValueError(f"unknown lattice_kind {self.lattice_kind!r}")
        if self.species_kind not in SPECIES_KINDS:
            raise ValueError(f"unknown species_kind {self.species_kind!r}")
        if np.any(self.length_sigma_log < 0.0):
            raise ValueError("length_sigma_log must be nonnegative")
        lo, hi = self.angle_range
        if not (0.0 < lo <= hi < np.pi):
            raise ValueError(f"angle_range must satisfy 0 < lo <= hi < pi, got {self.angle_range}")
        if self.sbd_sigma0 <= 0.0:
            raise ValueError("sbd_sigma0 must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["length_mu_log"] = [float(v) for v in self.length_mu_log]
        d["length_sigma_log"] = [float(v) for v in self.length_sigma_log]
        d["angle_range"] = [float(self.angle_range[0]), float(self.angle_range[1])]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BaseDistributionSpec":
        d = dict(d)
        d["angle_range"] = tuple(d.get("angle_range", (np.pi / 2, np.pi / 2)))
        return cls(**d)


def fit_lattice_base(dataset: list[Structure], **overrides) -> BaseDistributionSpec:
    """Fit the log-normal length / uniform angle base to a dataset's lattices."""
    if not dataset:
        raise ValueError("cannot fit a base distribution to an empty dataset")
    logs = np.log([lattice_lengths(s.lattice) for s in dataset])
    angles = np.concatenate([lattice_angles(s.lattice) for s in dataset])
    lo, hi = float(angles.min()), float(angles.max())
    return BaseDistributionSpec(
        length_mu_log=logs.mean(axis=0),
        length_sigma_log=logs.std(axis=0),
        angle_range=(lo, hi),
        **overrides,
    )


def sample_base(
    spec: BaseDistributionSpec,
    n_atoms: int,
    rng: np.random.Generator,
    composition: np.ndarray | None = None,
) -> Structure:
    """Draw one structure from the base distribution.

    For fixed-composition (CSP) sampling, ``composition`` provides the species
    verbatim; otherwise every atom starts masked.
    """
    if n_atoms < 1:
        raise ValueError(f"n_atoms must be >= 1, got {n_atoms}")
    if spec.coord_kind == "uniform":
        coords = rng.random((n_atoms, 3))
    else:
        coords = wrap(rng.normal(scale=spec.sbd_sigma0, size=(n_atoms, 3)))

    if spec.lattice_kind == "gaussian":
        lattice = rng.normal(scale=spec.sbd_sigma0, size=(3, 3))
    else:
        lengths = np.exp(spec.length_mu_log + spec.length_sigma_log * rng.normal(size=3))
        lo, hi = spec.angle_range
        for _ in range(64):
            angles = rng.uniform(lo, hi, size=3) if hi > lo else np.full(3, lo)
            try:
                lattice = lattice_from_parameters(lengths, angles)
                break
            except ValueError:
                continue  # inconsistent angle triple, redraw
        else:
            raise RuntimeError("could not draw a consistent angle triple from the base range")

    if composition is not None:
        species = np.asarray(composition, dtype=np.int64)
        if len(species) != n_atoms:
            raise ValueError(f"composition has {len(species)} atoms, expected {n_atoms}")
    elif spec.species_kind == "fixed_composition":
        raise ValueError("fixed_composition sampling requires a composition")
    else:
        species = np.full(n_atoms, MASK_TOKEN, dtype=np.int64)
    return Structure(species, coords, lattice)


def min_permutation_coupling(x0: Structure, x1: Structure) -> Structure:
    """Reorder the atoms of x0 to minimize the summed torus distance to x1.

    The assignment is solved exactly on the pairwise torus-distance cost
    matrix. When x0 carries real (unmasked) species, atoms are only permuted
    within same-species groups so fixed compositions stay aligned.
    """
    if x0.n_atoms != x1.n_atoms:
        raise ValueError(f"coupling requires equal atom counts, got {x0.n_atoms} and {x1.n_atoms}")
    perm = min_permutation(x0, x1)
    return Structure(x0.species[perm], x0.coords[perm], x0.lattice.copy())


def min_permutation(x0: Structure, x1: Structure) -> np.ndarray:
    """Permutation p with p[i] = index of the x0 atom assigned to target slot i."""
    n = x0.n_atoms
    perm = np.arange(n)
    all_masked = bool(np.all(x0.species == MASK_TOKEN))
    if all_masked:
        groups = [(np.arange(n), np.arange(n))]
    else:
        if sorted(x0.species.tolist()) != sorted(x1.species.tolist()):
            raise ValueError("species-respecting coupling requires matching compositions")
        groups = []
        for s in np.unique(x1.species):
            groups.append((np.nonzero(x0.species == s)[0], np.nonzero(x1.species == s)[0]))
    for src, dst in groups:
        cost = torus_distance_matrix(x0.coords[src], x1.coords[dst])
        rows, cols = linear_sum_assignment(cost)
        perm[dst[cols]] = src[rows]
    return perm


def coupling_cost(x0: Structure, x1: Structure, perm: np.ndarray) -> float:
    """Summed torus distance between permuted x0 atoms and x1 atoms."""
    deltas = torus_distance_matrix(x0.coords[perm], x1.coords)
    return float(np.trace(deltas))


def brute_force_min_permutation(x0: Structure, x1: Structure) -> tuple[np.ndarray, float]:
    """Exhaustive search over all permutations; test oracle for small N."""
    n = x0.n_atoms
    cost = torus_distance_matrix(x0.coords, x1.coords)
    best_cost = np.inf
    best_perm = np.arange(n)
    all_masked = bool(np.all(x0.species == MASK_TOKEN))
    for perm in itertools.permutations(range(n)):
        p = np.array(perm)
        if not all_masked and np.any(x0.species[p] != x1.species):
            continue
        c = cost[p, np.arange(n)].sum()
        if c < best_cost:
            best_cost = c
            best_perm = p
    return best_perm, float(best_cost)
