"""Toy dataset generators with known structure, dataset statistics, and
structure-file I/O.

The toys stand in for large crystal databases at desk scale:

* ``perovskite_like`` -- five atoms on the ideal perovskite motif with small
  positional jitter; cubic cells whose side length is a deterministic
  function of the two cation species plus noise, so composition (almost)
  determines the structure and structure prediction is learnable.
* ``torus_gaussian_mixture`` -- single-species atoms at modes of a Gaussian
  mixture on the torus; each structure places its atoms on antipodal modes so
  the joint distribution keeps atoms far apart.
* ``two_species_chain`` -- alternating species along one axis of an
  orthorhombic cell.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .structures import Structure, lattice_lengths, wrap

TOY_KINDS = ("perovskite_like", "torus_gaussian_mixture", "two_species_chain")

# perovskite_like site palette: two cation slots with three choices each
PEROV_A_SITE = (11, 19, 37)
PEROV_B_SITE = (13, 21, 31)
PEROV_O = 8
PEROV_MOTIF = np.array([
    [0.0, 0.0, 0.0],
    [0.5, 0.5, 0.5],
    [0.5, 0.5, 0.0],
    [0.5, 0.0, 0.5],
    [0.0, 0.5, 0.5],
])

# torus mixture: eight modes on the corners of an inner cube; each structure
# uses a mode and its antipode so atom pairs stay half a box apart
MIXTURE_MODES = np.array([
    [x, y, z] for x in (0.2, 0.7) for y in (0.2, 0.7) for z in (0.2, 0.7)
])


@dataclass
class ToyDatasetSpec:
    kind: str = "perovskite_like"
    n_structures: int = 2000
    n_atoms: int = 5
    coord_jitter: float = 0.01
    length_jitter: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in TOY_KINDS:
            raise ValueError(f"unknown toy dataset kind {self.kind!r}")
        if self.n_structures < 1:
            raise ValueError("n_structures must be >= 1")
        if self.coord_jitter < 0.0 or self.length_jitter < 0.0:
            raise ValueError("jitter scales must be nonnegative")
        if self.kind == "perovskite_like" and self.n_atoms != 5:
            raise ValueError("perovskite_like uses exactly 5 atoms per cell")
        if self.kind == "torus_gaussian_mixture" and self.n_atoms != 2:
            raise ValueError("torus_gaussian_mixture uses 2 atoms per cell")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ToyDatasetSpec":
        return cls(**d)


def perovskite_side(a_token: int, b_token: int) -> float:
    """Deterministic cubic side length of the ideal perovskite toy cell."""
    return 4.0 + 0.25 * PEROV_A_SITE.index(a_token) + 0.15 * PEROV_B_SITE.index(b_token)


def _perovskite_structure(rng: np.random.Generator, spec: ToyDatasetSpec) -> Structure:
    a_tok = int(rng.choice(PEROV_A_SITE))
    b_tok = int(rng.choice(PEROV_B_SITE))
    species = np.array([a_tok, b_tok, PEROV_O, PEROV_O, PEROV_O])
    coords = wrap(PEROV_MOTIF + rng.normal(scale=spec.coord_jitter, size=(5, 3)))
    side = perovskite_side(a_tok, b_tok) * np.exp(rng.normal(scale=spec.length_jitter))
    return Structure(species, coords, np.eye(3) * side)


def _mixture_structure(rng: np.random.Generator, spec: ToyDatasetSpec) -> Structure:
    mode = MIXTURE_MODES[rng.integers(len(MIXTURE_MODES))]
    antipode = wrap(mode + 0.5)
    coords = wrap(np.stack([mode, antipode])
                  + rng.normal(scale=spec.coord_jitter, size=(2, 3)))
    side = 4.0 * np.exp(rng.normal(scale=spec.length_jitter))
    return Structure(np.array([1, 1]), coords, np.eye(3) * side)


def _chain_structure(rng: np.random.Generator, spec: ToyDatasetSpec) -> Structure:
    n = spec.n_atoms
    species = np.array([1 if i % 2 == 0 else 2 for i in range(n)])
    z = (np.arange(n) + 0.5) / n
    coords = np.column_stack([np.full(n, 0.5), np.full(n, 0.5), z])
    coords = wrap(coords + rng.normal(scale=spec.coord_jitter, size=(n, 3)))
    lengths = np.array([3.0, 3.0, 2.0 * n]) * np.exp(rng.normal(scale=spec.length_jitter, size=3))
    return Structure(species, coords, np.diag(lengths))


def generate_toy_dataset(spec: ToyDatasetSpec) -> dict:
    """Deterministic toy dataset with a 60-20-20 train/validation/test split."""
    rng = np.random.default_rng(spec.seed)
    maker = {
        "perovskite_like": _perovskite_structure,
        "torus_gaussian_mixture": _mixture_structure,
        "two_species_chain": _chain_structure,
    }[spec.kind]
    structures = [maker(rng, spec) for _ in range(spec.n_structures)]
    order = rng.permutation(spec.n_structures)
    n_train = int(round(0.6 * spec.n_structures))
    n_val = int(round(0.2 * spec.n_structures))
    split = {
        "train": sorted(int(i) for i in order[:n_train]),
        "val": sorted(int(i) for i in order[n_train:n_train + n_val]),
        "test": sorted(int(i) for i in order[n_train + n_val:]),
    }
    return {"structures": structures, "split": split, "spec": spec}


def subset(dataset: dict, part: str) -> list[Structure]:
    return [dataset["structures"][i] for i in dataset["split"][part]]


# -- structure file I/O ---------------------------------------------------------


def save_structures(path, structures: list[Structure]) -> None:
    """Write structures as a JSON array of records (floats round-trip exactly)."""
    records = [s.to_record() for s in structures]
    Path(path).write_text(json.dumps(records))


def load_structures(path) -> list[Structure]:
    """Read a structure file, validating every record."""
    text = Path(path).read_text()
    try:
        records = json.loads(text)
    except json.JSONDecodeError as err:
        raise ValueError(f"malformed structure file at byte offset {err.pos}: {err.msg}") from None
    if not isinstance(records, list):
        raise ValueError("structure file must contain a JSON array of records")
    structures = []
    for idx, record in enumerate(records):
        try:
            structures.append(Structure.from_record(record))
        except (ValueError, TypeError) as err:
            raise ValueError(f"record {idx}: {err}") from None
    return structures


def save_dataset(path, dataset: dict) -> None:
    """Write structures plus the split manifest and generating spec."""
    payload = {
        "spec": dataset["spec"].to_dict(),
        "split": dataset["split"],
        "structures": [s.to_record() for s in dataset["structures"]],
    }
    Path(path).write_text(json.dumps(payload))


def load_dataset(path) -> dict:
    payload = json.loads(Path(path).read_text())
    return {
        "spec": ToyDatasetSpec.from_dict(payload["spec"]),
        "split": {k: list(v) for k, v in payload["split"].items()},
        "structures": [Structure.from_record(r) for r in payload["structures"]],
    }


# -- statistics ------------------------------------------------------------------


def dataset_stats(structures: list[Structure]) -> dict:
    """Atom-count histogram, per-axis lattice log-normal fit, species frequency."""
    if not structures:
        raise ValueError("dataset_stats requires a nonempty dataset")
    counts: dict[int, int] = {}
    species_counts: dict[int, int] = {}
    logs = []
    for s in structures:
        counts[s.n_atoms] = counts.get(s.n_atoms, 0) + 1
        logs.append(np.log(lattice_lengths(s.lattice)))
        for tok in s.species:
            species_counts[int(tok)] = species_counts.get(int(tok), 0) + 1
    logs = np.array(logs)
    total = sum(species_counts.values())
    return {
        "atom_count_hist": counts,
        "length_mu_log": logs.mean(axis=0),
        "length_sigma_log": logs.std(axis=0),
        "species_freq": {tok: c / total for tok, c in sorted(species_counts.items())},
    }
