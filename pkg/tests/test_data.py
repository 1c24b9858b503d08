import json

import numpy as np
import pytest

from crysgen.data import (
    MIXTURE_MODES,
    ToyDatasetSpec,
    dataset_stats,
    generate_toy_dataset,
    load_dataset,
    load_structures,
    perovskite_side,
    save_dataset,
    save_structures,
    subset,
)
from crysgen.metrics import min_interatomic_distance, structural_validity
from crysgen.structures import Structure


def test_zero_jitter_shares_fractional_coordinates():
    spec = ToyDatasetSpec(kind="perovskite_like", n_structures=10,
                          coord_jitter=0.0, length_jitter=0.0, seed=1)
    ds = generate_toy_dataset(spec)
    base = ds["structures"][0].coords
    for s in ds["structures"][1:]:
        np.testing.assert_array_equal(s.coords, base)


def test_fixed_seed_reproducible_bytes(tmp_path):
    spec = ToyDatasetSpec(kind="perovskite_like", n_structures=25, seed=7)
    a, b = generate_toy_dataset(spec), generate_toy_dataset(spec)
    pa, pb = tmp_path / "a.json", tmp_path / "b.json"
    save_dataset(pa, a)
    save_dataset(pb, b)
    assert pa.read_bytes() == pb.read_bytes()


def test_perovskite_nearest_neighbor_validity():
    """Ideal motif nearest-neighbor distance is side/2; jittered structures
    stay valid below that bound."""
    spec = ToyDatasetSpec(kind="perovskite_like", n_structures=50, seed=3)
    ds = generate_toy_dataset(spec)
    ideal_min = 4.0 / 2.0  # smallest cell, B-O separation
    for s in ds["structures"]:
        assert structural_validity(s, min_dist=0.5 * ideal_min)
        assert min_interatomic_distance(s) > 0.5 * ideal_min


def test_perovskite_side_deterministic():
    assert perovskite_side(11, 13) == pytest.approx(4.0)
    assert perovskite_side(37, 31) == pytest.approx(4.0 + 0.5 + 0.3)


def test_splits_disjoint_and_cover():
    spec = ToyDatasetSpec(kind="two_species_chain", n_atoms=4, n_structures=43, seed=5)
    ds = generate_toy_dataset(spec)
    train, val, test = (set(ds["split"][p]) for p in ("train", "val", "test"))
    assert train.isdisjoint(val) and train.isdisjoint(test) and val.isdisjoint(test)
    assert train | val | test == set(range(43))
    assert len(subset(ds, "train")) == len(train)


def test_mixture_atoms_on_antipodal_modes():
    spec = ToyDatasetSpec(kind="torus_gaussian_mixture", n_atoms=2,
                          coord_jitter=0.0, seed=9, n_structures=40)
    ds = generate_toy_dataset(spec)
    mode_set = {tuple(np.round(m, 6)) for m in MIXTURE_MODES}
    for s in ds["structures"]:
        assert tuple(np.round(s.coords[0], 6)) in mode_set
        delta = np.abs(s.coords[1] - s.coords[0])
        np.testing.assert_allclose(np.minimum(delta, 1 - delta), 0.5, atol=1e-12)


def test_structure_file_roundtrip(tmp_path):
    spec = ToyDatasetSpec(kind="perovskite_like", n_structures=5, seed=2)
    structures = generate_toy_dataset(spec)["structures"]
    path = tmp_path / "structures.json"
    save_structures(path, structures)
    loaded = load_structures(path)
    for a, b in zip(structures, loaded):
        np.testing.assert_array_equal(a.species, b.species)
        np.testing.assert_array_equal(a.coords, b.coords)
        np.testing.assert_array_equal(a.lattice, b.lattice)


def test_truncated_file_names_byte_offset(tmp_path):
    path = tmp_path / "broken.json"
    save_structures(path, generate_toy_dataset(
        ToyDatasetSpec(kind="perovskite_like", n_structures=2))["structures"])
    text = path.read_text()
    path.write_text(text[:len(text) // 2])
    with pytest.raises(ValueError, match="byte offset"):
        load_structures(path)


def test_out_of_range_coordinates_rejected(tmp_path):
    path = tmp_path / "bad.json"
    record = Structure([1], [[0.5, 0.5, 0.5]], np.eye(3)).to_record()
    record["coords"][0][0] = 1.5
    path.write_text(json.dumps([record]))
    with pytest.raises(ValueError, match="record 0"):
        load_structures(path)


def test_dataset_roundtrip(tmp_path):
    spec = ToyDatasetSpec(kind="torus_gaussian_mixture", n_atoms=2, n_structures=12, seed=4)
    ds = generate_toy_dataset(spec)
    path = tmp_path / "dataset.json"
    save_dataset(path, ds)
    loaded = load_dataset(path)
    assert loaded["spec"] == spec
    assert loaded["split"] == ds["split"]
    np.testing.assert_array_equal(loaded["structures"][3].coords, ds["structures"][3].coords)


def test_dataset_stats():
    structures = [Structure([1, 1, 2, 2, 2], np.full((5, 3), 0.25), np.eye(3) * 2.0)
                  for _ in range(6)]
    stats = dataset_stats(structures)
    assert stats["atom_count_hist"] == {5: 6}
    np.testing.assert_allclose(stats["length_mu_log"], np.log(2.0), atol=1e-12)
    np.testing.assert_allclose(stats["length_sigma_log"], 0.0, atol=1e-12)
    assert sum(stats["species_freq"].values()) == pytest.approx(1.0)
    assert stats["species_freq"][2] == pytest.approx(0.6)


def test_dataset_stats_rejects_empty():
    with pytest.raises(ValueError):
        dataset_stats([])


def test_bad_spec_rejected():
    with pytest.raises(ValueError):
        ToyDatasetSpec(kind="nope")
    with pytest.raises(ValueError):
        ToyDatasetSpec(kind="perovskite_like", n_atoms=7)
