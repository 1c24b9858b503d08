"""Evaluation metrics: periodic structure matching with match rate and
normalized RMSE, structural validity from interatomic distances, empirical
1-D Wasserstein distances, and per-structure property descriptors.

The matcher is an in-repo approximation of the usual structure-matching
toolkit: compositions must agree as multisets, lattice lengths and angles
must agree within tolerances, and a species-respecting minimum-cost site
assignment (searched over a grid of global fractional translations with one
local refinement) must place every site within the normalized tolerance.
Coordination numbers use a fixed cutoff radius ("cutoff-CN"), not a
chemistry-aware neighbor algorithm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .structures import Structure, lattice_angles, lattice_lengths

_MAX_IMAGE_RANGE = 12


@dataclass
class MatchTolerances:
    stol: float = 0.5        # site tolerance, units of (V/N)^(1/3)
    ltol: float = 0.3        # relative length tolerance
    angle_tol: float = 10.0  # degrees

    def __post_init__(self) -> None:
        if min(self.stol, self.ltol, self.angle_tol) <= 0.0:
            raise ValueError("all matching tolerances must be positive")


def _species_groups(species: np.ndarray) -> list[np.ndarray]:
    return [np.nonzero(species == s)[0] for s in np.unique(species)]


def _assignment_displacements(gen_coords, ref_coords, groups_gen, groups_ref,
                              shift, lattice) -> np.ndarray:
    """Cartesian displacement vectors of the optimal species-respecting
    assignment for one global fractional shift."""
    disp = np.zeros((len(ref_coords), 3))
    for g_idx, r_idx in zip(groups_gen, groups_ref):
        delta = (gen_coords[g_idx][None, :, :] + shift) - ref_coords[r_idx][:, None, :]
        delta -= np.round(delta)
        cart = delta @ lattice
        cost = np.linalg.norm(cart, axis=-1)
        rows, cols = linear_sum_assignment(cost)
        disp[r_idx[rows]] = cart[rows, cols]
    return disp


def match_pair(gen: Structure, ref: Structure,
               tol: MatchTolerances | None = None,
               translation_grid: int = 16) -> tuple[bool, float | None]:
    """Attempt to match a generated structure to a reference.

    Returns (matched, rmse) with the RMSE normalized by (V/N)^(1/3) of the
    reference; rmse is None when unmatched.
    """
    tol = tol or MatchTolerances()
    if sorted(gen.species.tolist()) != sorted(ref.species.tolist()):
        return False, None

    len_gen = np.sort(lattice_lengths(gen.lattice))
    len_ref = np.sort(lattice_lengths(ref.lattice))
    if np.any(np.abs(len_gen - len_ref) > tol.ltol * len_ref):
        return False, None
    ang_gen = np.sort(np.degrees(lattice_angles(gen.lattice)))
    ang_ref = np.sort(np.degrees(lattice_angles(ref.lattice)))
    if np.any(np.abs(ang_gen - ang_ref) > tol.angle_tol):
        return False, None

    n = ref.n_atoms
    scale = (abs(ref.volume) / n) ** (1.0 / 3.0)
    groups_ref = _species_groups(ref.species)
    groups_gen = [np.nonzero(gen.species == s)[0] for s in np.unique(ref.species)]

    # cheap lower bound over the translation grid, exact assignment at the best few
    axis = np.arange(translation_grid) / translation_grid
    shifts = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    bound = np.zeros(len(shifts))
    for g_idx, r_idx in zip(groups_gen, groups_ref):
        delta = (gen.coords[g_idx][None, None, :, :] + shifts[:, None, None, :]
                 - ref.coords[r_idx][None, :, None, :])
        delta -= np.round(delta)
        cart = delta @ ref.lattice
        dists = np.linalg.norm(cart, axis=-1)  # (n_shifts, n_ref, n_gen)
        bound += dists.min(axis=-1).sum(axis=-1)
    candidates = np.argsort(bound)[:4]

    best_disp = None
    best_cost = np.inf
    for c in candidates:
        disp = _assignment_displacements(gen.coords, ref.coords, groups_gen,
                                         groups_ref, shifts[c], ref.lattice)
        cost = float((disp ** 2).sum())
        if cost < best_cost:
            best_cost, best_disp, best_shift = cost, disp, shifts[c]
    # one local refinement: recenter by the mean fractional displacement
    mean_frac = best_disp.mean(axis=0) @ np.linalg.inv(ref.lattice)
    refined_shift = best_shift - mean_frac
    disp = _assignment_displacements(gen.coords, ref.coords, groups_gen,
                                     groups_ref, refined_shift, ref.lattice)
    if float((disp ** 2).sum()) < best_cost:
        best_disp = disp

    site_dists = np.linalg.norm(best_disp, axis=-1)
    if site_dists.max() > tol.stol * scale:
        return False, None
    rmse = float(np.sqrt((site_dists ** 2).mean()) / scale)
    return True, rmse


def match_rate(gen_set: list[Structure], ref_set: list[Structure],
               tol: MatchTolerances | None = None) -> tuple[float, float | None]:
    """Fraction of aligned pairs that match, and mean RMSE over the matches."""
    if len(gen_set) != len(ref_set):
        raise ValueError(f"aligned lists required, got {len(gen_set)} vs {len(ref_set)}")
    if not gen_set:
        raise ValueError("cannot evaluate an empty set")
    rmses = []
    n_matched = 0
    for g, r in zip(gen_set, ref_set):
        matched, rmse = match_pair(g, r, tol)
        if matched:
            n_matched += 1
            rmses.append(rmse)
    rate = n_matched / len(gen_set)
    return rate, (float(np.mean(rmses)) if rmses else None)


def _image_offsets(lattice: np.ndarray, cutoff: float) -> np.ndarray:
    """Integer image offsets guaranteed to cover every vector of length <= cutoff."""
    vol = abs(float(np.linalg.det(lattice)))
    ranges = []
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        height = vol / np.linalg.norm(np.cross(lattice[i], lattice[j]))
        ranges.append(min(int(math.ceil(cutoff / height)), _MAX_IMAGE_RANGE))
    grids = [np.arange(-r, r + 1) for r in ranges]
    return np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, 3)


def min_interatomic_distance(structure: Structure) -> float:
    """Smallest interatomic distance including periodic self-images."""
    lat = structure.lattice
    offsets = _image_offsets(lat, float(np.max(lattice_lengths(lat))) + 1e-9)
    cart_offsets = offsets @ lat
    self_dists = np.linalg.norm(cart_offsets, axis=-1)
    best = float(self_dists[self_dists > 0.0].min()) if np.any(self_dists > 0.0) else np.inf
    coords = structure.coords
    n = structure.n_atoms
    if n > 1:
        delta = coords[None, :, :] - coords[:, None, :]
        iu = np.triu_indices(n, k=1)
        cart = delta[iu][:, None, :] @ lat + cart_offsets[None, :, :]
        best = min(best, float(np.linalg.norm(cart, axis=-1).min()))
    return best


def structural_validity(structure: Structure, min_dist: float = 0.5) -> bool:
    """Valid iff every interatomic distance (nearest images, including an
    atom's own periodic copies) exceeds min_dist and the cell is proper."""
    if min_dist <= 0.0:
        raise ValueError("min_dist must be positive")
    if not np.all(np.isfinite(structure.lattice)) or structure.volume <= 0.0:
        return False
    lat = structure.lattice
    offsets = _image_offsets(lat, min_dist)
    cart_offsets = offsets @ lat
    self_dists = np.linalg.norm(cart_offsets, axis=-1)
    if np.any((self_dists > 0.0) & (self_dists <= min_dist)):
        return False
    n = structure.n_atoms
    if n > 1:
        delta = structure.coords[None, :, :] - structure.coords[:, None, :]
        iu = np.triu_indices(n, k=1)
        frac = delta[iu]
        frac -= np.round(frac)
        cart = frac[:, None, :] @ lat + cart_offsets[None, :, :]
        if np.any(np.linalg.norm(cart, axis=-1) <= min_dist):
            return False
    return True


def wasserstein1(samples_a, samples_b) -> float:
    """W1 between two empirical distributions via merged-CDF integration."""
    a = np.sort(np.asarray(samples_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(samples_b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein1 requires nonempty samples")
    merged = np.sort(np.concatenate([a, b]))
    widths = np.diff(merged)
    cdf_a = np.searchsorted(a, merged[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, merged[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


def mean_coordination(structure: Structure, cutoff: float) -> float:
    """Mean over atoms of the neighbor count within the cutoff radius,
    counting periodic images (including an atom's own copies)."""
    if cutoff <= 0.0:
        raise ValueError("cutoff must be positive")
    lat = structure.lattice
    offsets = _image_offsets(lat, cutoff)
    cart_offsets = offsets @ lat
    n = structure.n_atoms
    delta = structure.coords[None, :, :] - structure.coords[:, None, :]
    cart = delta[:, :, None, :] @ lat + cart_offsets[None, None, :, :]
    dists = np.linalg.norm(cart, axis=-1)  # (n, n, n_offsets)
    within = dists <= cutoff
    self_zero = (dists <= 1e-12)
    counts = (within & ~self_zero).sum(axis=(1, 2))
    return float(counts.mean())


def properties(structure: Structure, mass_table: dict[int, float] | None = None,
               cn_cutoff: float = 3.0) -> dict[str, float]:
    """Per-structure descriptors: mass density, species arity, cutoff-CN."""
    if mass_table is None:
        masses = structure.species.astype(np.float64)  # token id stands in for mass
    else:
        masses = np.array([mass_table[int(s)] for s in structure.species], dtype=np.float64)
    vol = structure.volume
    if vol <= 0.0:
        raise ValueError("properties require a proper lattice with positive volume")
    return {
        "rho": float(masses.sum() / vol),
        "n_ary": float(len(np.unique(structure.species))),
        "mean_cn": mean_coordination(structure, cn_cutoff),
    }


def _evaluate_one(args) -> dict:
    idx, g, r, tol, min_dist, cn_cutoff, mass_table = args
    matched, rmse = match_pair(g, r, tol)
    props = properties(g, mass_table, cn_cutoff)
    return {
        "id": idx,
        "matched": bool(matched),
        "rmse": rmse,
        "valid": bool(structural_validity(g, min_dist)),
        "rho": props["rho"],
        "n_ary": props["n_ary"],
        "mean_cn": props["mean_cn"],
    }


def evaluate_sets(gen_set: list[Structure], ref_set: list[Structure],
                  tol: MatchTolerances | None = None, min_dist: float = 0.5,
                  cn_cutoff: float = 3.0,
                  mass_table: dict[int, float] | None = None,
                  n_threads: int = 1) -> dict:
    """Full evaluation: per-structure rows plus a summary with match rate,
    validity rate, and Wasserstein distances of property distributions.

    Pairs are independent; ``n_threads`` > 1 maps them across a thread pool.
    """
    if len(gen_set) != len(ref_set):
        raise ValueError(f"aligned lists required, got {len(gen_set)} vs {len(ref_set)}")
    jobs = [(i, g, r, tol, min_dist, cn_cutoff, mass_table)
            for i, (g, r) in enumerate(zip(gen_set, ref_set))]
    if n_threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            rows = list(pool.map(_evaluate_one, jobs))
    else:
        rows = [_evaluate_one(j) for j in jobs]
    ref_props = [properties(r, mass_table, cn_cutoff) for r in ref_set]
    gen_props = [{"rho": row["rho"], "n_ary": row["n_ary"], "mean_cn": row["mean_cn"]}
                 for row in rows]
    rmses = [row["rmse"] for row in rows if row["matched"]]
    n_matched = sum(row["matched"] for row in rows)
    n_valid = sum(row["valid"] for row in rows)
    n = len(gen_set)
    summary = {
        "n_structures": n,
        "match_rate": n_matched / n if n else 0.0,
        "mean_rmse": float(np.mean(rmses)) if rmses else None,
        "validity_rate": n_valid / n if n else 0.0,
    }
    for key in ("rho", "n_ary", "mean_cn"):
        summary[f"w1_{key}"] = wasserstein1([p[key] for p in gen_props],
                                            [p[key] for p in ref_props])
    return {"rows": rows, "summary": summary,
            "gen_properties": gen_props, "ref_properties": ref_props}
