"""Crystal configuration types and flat-torus geometry.

Fractional coordinates live on the unit torus [0, 1)^3; interpolation paths
between two configurations follow the shortest geodesic, realized by
unwrapping the endpoint into its nearest periodic image and wrapping the
traversed path back into the box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MASK_TOKEN = 0


@dataclass
class Structure:
    """Unit cell: species tokens, fractional coordinates, lattice matrix.

    species: (N,) integer tokens; MASK_TOKEN marks a masked atom.
    coords: (N, 3) fractional coordinates, each component in [0, 1).
    lattice: (3, 3) rows are lattice vectors in length units; det > 0.
    """

    species: np.ndarray
    coords: np.ndarray
    lattice: np.ndarray

    def __post_init__(self) -> None:
        self.species = np.asarray(self.species, dtype=np.int64)
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.lattice = np.asarray(self.lattice, dtype=np.float64)
        if self.species.ndim != 1:
            raise ValueError(f"species must be 1-D, got shape {self.species.shape}")
        if self.coords.shape != (len(self.species), 3):
            raise ValueError(
                f"coords shape {self.coords.shape} does not match {len(self.species)} atoms"
            )
        if self.lattice.shape != (3, 3):
            raise ValueError(f"lattice must be 3x3, got {self.lattice.shape}")

    @property
    def n_atoms(self) -> int:
        return len(self.species)

    @property
    def volume(self) -> float:
        return float(np.linalg.det(self.lattice))

    def validate(self, n_species: int | None = None) -> None:
        """Raise ValueError on any violated structural invariant."""
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coords contain non-finite values")
        if np.any(self.coords < 0.0) or np.any(self.coords >= 1.0):
            raise ValueError("coords must lie in [0, 1)")
        if not np.all(np.isfinite(self.lattice)):
            raise ValueError("lattice contains non-finite values")
        if self.volume <= 0.0:
            raise ValueError(f"lattice determinant must be positive, got {self.volume}")
        if np.any(self.species < 0):
            raise ValueError("species tokens must be nonnegative")
        if n_species is not None and np.any(self.species >= n_species):
            raise ValueError(f"species token outside vocabulary of size {n_species}")

    def copy(self) -> "Structure":
        return Structure(self.species.copy(), self.coords.copy(), self.lattice.copy())

    def to_record(self) -> dict:
        return {
            "species": [int(s) for s in self.species],
            "coords": [[float(c) for c in row] for row in self.coords],
            "lattice": [[float(c) for c in row] for row in self.lattice],
        }

    @classmethod
    def from_record(cls, record: dict) -> "Structure":
        try:
            s = cls(record["species"], record["coords"], record["lattice"])
        except KeyError as err:
            raise ValueError(f"structure record missing field {err}") from None
        s.validate()
        return s


def wrap(x):
    """Map values onto [0, 1) by subtracting the floor."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("wrap: non-finite input")
    out = x - np.floor(x)
    # floor rounding can land exactly on 1.0 for tiny negative inputs
    out = np.where(out >= 1.0, out - 1.0, out)
    return out if out.ndim else float(out)


def _nearest_image_shift(x0, x1) -> np.ndarray:
    """Integer k in {-1, 0, 1} minimizing |x1 + k - x0| per component;
    an exact half-box tie keeps the in-box image (k = 0)."""
    delta = np.asarray(x1, dtype=np.float64) - np.asarray(x0, dtype=np.float64)
    return np.where(delta > 0.5, -1.0, np.where(delta < -0.5, 1.0, 0.0))


def nearest_image_delta(x0, x1):
    """Componentwise displacement from x0 to the nearest periodic image of x1.

    Result lies in [-0.5, 0.5]; an exact half-box tie keeps the in-box image.
    """
    delta = np.asarray(x1, dtype=np.float64) - np.asarray(x0, dtype=np.float64)
    return delta + _nearest_image_shift(x0, x1)


def nearest_image_unwrap(x0, x1):
    """Unwrap x1 to the periodic image x1 + k closest to x0 (ties keep x1)."""
    x1 = np.asarray(x1, dtype=np.float64)
    out = x1 + _nearest_image_shift(x0, x1)
    return out if out.ndim else float(out)


def torus_distance(x0, x1) -> float:
    """Euclidean norm of the componentwise nearest-image displacement."""
    return float(np.linalg.norm(nearest_image_delta(x0, x1)))


def torus_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise torus distances between coordinate sets a (N,3) and b (M,3)."""
    delta = nearest_image_delta(a[:, None, :], b[None, :, :])
    return np.sqrt((delta ** 2).sum(axis=-1))


def lattice_lengths(lattice: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(lattice, dtype=np.float64), axis=1)


def lattice_angles(lattice: np.ndarray) -> np.ndarray:
    """Angles (radians) between lattice vector pairs (b,c), (a,c), (a,b)."""
    lat = np.asarray(lattice, dtype=np.float64)
    lengths = lattice_lengths(lat)
    pairs = [(1, 2), (0, 2), (0, 1)]
    cosines = [lat[i] @ lat[j] / (lengths[i] * lengths[j]) for i, j in pairs]
    return np.arccos(np.clip(cosines, -1.0, 1.0))


def lattice_from_parameters(lengths, angles) -> np.ndarray:
    """Assemble a 3x3 lattice (rows are vectors) from lengths and angles.

    Convention: a along x, b in the xy-plane, c completing a right-handed cell.
    """
    a, b, c = np.asarray(lengths, dtype=np.float64)
    alpha, beta, gamma = np.asarray(angles, dtype=np.float64)
    cx = np.cos(beta)
    cy = (np.cos(alpha) - np.cos(beta) * np.cos(gamma)) / np.sin(gamma)
    cz_sq = 1.0 - cx * cx - cy * cy
    if cz_sq <= 0.0:
        raise ValueError(f"incompatible lattice angles {np.degrees([alpha, beta, gamma])}")
    return np.array([
        [a, 0.0, 0.0],
        [b * np.cos(gamma), b * np.sin(gamma), 0.0],
        [c * cx, c * cy, c * np.sqrt(cz_sq)],
    ])


@dataclass
class TorusDisplacement:
    """Nearest-image displacement; each component lies in [-0.5, 0.5]."""

    delta: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.delta = np.asarray(self.delta, dtype=np.float64)
        if np.any(np.abs(self.delta) > 0.5 + 1e-12):
            raise ValueError("torus displacement component exceeds half a box length")
