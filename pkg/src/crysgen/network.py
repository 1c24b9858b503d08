"""Permutation-equivariant message-passing encoder over periodic structures.

Node states start from a species embedding concatenated with a Fourier
embedding of time and are refined by rounds of summed pair messages with
residual updates. Pair features are Fourier embeddings of the raw fractional
coordinate difference, which makes them periodic by construction; the
flattened lattice matrix enters the messages directly. Heads read out a
per-atom coordinate velocity, a pooled lattice velocity, optional denoisers,
and optional per-atom species logits.

Structures in one forward call share the atom count so all dense algebra
runs as flat matrix products.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    n_tokens: int = 101
    d_emb: int = 16
    d_hidden: int = 64
    n_layers: int = 2
    n_freq: int = 8
    n_time_freq: int = 4
    predict_denoiser: bool = False
    predict_species: bool = False
    include_geometry: bool = True

    def __post_init__(self) -> None:
        if self.n_layers < 1:
            raise ValueError("need at least one message-passing layer")
        if min(self.n_tokens, self.d_emb, self.d_hidden, self.n_freq, self.n_time_freq) < 1:
            raise ValueError("model dimensions must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class ModelParams:
    """Named map of trainable tensors."""

    def __init__(self, tensors: dict[str, Tensor]) -> None:
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy_data(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def load_data(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in self.tensors.items():
            v.data = np.asarray(arrays[k], dtype=np.float64).reshape(v.shape)


def _linear_init(rng: np.random.Generator, fan_in: int, fan_out: int):
    scale = 1.0 / math.sqrt(fan_in)
    w = ad.parameter(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
    b = ad.parameter(rng.uniform(-scale, scale, size=fan_out))
    return w, b


def _mlp_init(tensors, rng, prefix: str, d_in: int, d_hidden: int, d_out: int) -> None:
    dims = [d_in, d_hidden, d_hidden, d_out]
    for k in range(3):
        w, b = _linear_init(rng, dims[k], dims[k + 1])
        tensors[f"{prefix}_w{k}"] = w
        tensors[f"{prefix}_b{k}"] = b


def _mlp_apply(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    for k in range(3):
        x = ad.matmul(x, params[f"{prefix}_w{k}"]) + params[f"{prefix}_b{k}"]
        if k < 2:
            x = ad.tanh(x)
    return x


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    tensors: dict[str, Tensor] = {}
    d_emb, d_h = config.d_emb, config.d_hidden
    scale = 1.0 / math.sqrt(d_emb)
    tensors["embed"] = ad.parameter(rng.uniform(-scale, scale, size=(config.n_tokens, d_emb)))
    d_node = d_emb + 2 * config.n_time_freq
    tensors["in_w"], tensors["in_b"] = _linear_init(rng, d_node, d_h)
    d_msg = 2 * d_h + (9 + 6 * config.n_freq if config.include_geometry else 0)
    for s in range(config.n_layers):
        _mlp_init(tensors, rng, f"msg{s}", d_msg, d_h, d_h)
        _mlp_init(tensors, rng, f"upd{s}", 2 * d_h, d_h, d_h)
    tensors["head_x_w"], tensors["head_x_b"] = _linear_init(rng, d_h, 3)
    tensors["head_l_w"], tensors["head_l_b"] = _linear_init(rng, d_h, 9)
    if config.predict_denoiser:
        tensors["head_zx_w"], tensors["head_zx_b"] = _linear_init(rng, d_h, 3)
        tensors["head_zl_w"], tensors["head_zl_b"] = _linear_init(rng, d_h, 9)
    if config.predict_species:
        tensors["head_a_w"], tensors["head_a_b"] = _linear_init(rng, d_h, config.n_tokens - 1)
    return ModelParams(tensors)


_PAIR_INDEX_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _pair_indices(batch: int, n_atoms: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat sender/receiver indices for all ordered pairs j != i, grouped by
    receiver so message aggregation is a reshape-and-sum."""
    key = (batch, n_atoms)
    cached = _PAIR_INDEX_CACHE.get(key)
    if cached is not None:
        return cached
    i_local = np.repeat(np.arange(n_atoms), n_atoms - 1)
    j_local = np.concatenate([
        np.concatenate((np.arange(i), np.arange(i + 1, n_atoms))) for i in range(n_atoms)
    ]) if n_atoms > 1 else np.zeros(0, dtype=np.int64)
    offsets = (np.arange(batch) * n_atoms)[:, None]
    idx_i = (offsets + i_local[None, :]).ravel()
    idx_j = (offsets + j_local[None, :]).ravel()
    if len(_PAIR_INDEX_CACHE) > 64:
        _PAIR_INDEX_CACHE.clear()
    _PAIR_INDEX_CACHE[key] = (idx_i, idx_j)
    return idx_i, idx_j


class Features(NamedTuple):
    time_feats: np.ndarray   # (batch * n_atoms, 2 * n_time_freq)
    pair_feats: np.ndarray   # (n_pairs, 6 * n_freq)
    lattice_feats: np.ndarray  # (n_pairs, 9)
    idx_i: np.ndarray
    idx_j: np.ndarray


def time_embedding(t: np.ndarray, n_time_freq: int) -> np.ndarray:
    """Fourier features of time, injective on [0, 1] via the k=1 cosine."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    k = np.arange(1, n_time_freq + 1)
    phase = math.pi * t[:, None] * k[None, :]
    return np.concatenate([np.cos(phase), np.sin(phase)], axis=1)


def pair_embedding(delta: np.ndarray, n_freq: int) -> np.ndarray:
    """Period-1 Fourier features of raw fractional coordinate differences."""
    k = np.arange(1, n_freq + 1)
    phase = 2.0 * math.pi * delta[..., None] * k
    flat = phase.reshape(delta.shape[0], 3 * n_freq)
    return np.concatenate([np.sin(flat), np.cos(flat)], axis=1)


def featurize(species: np.ndarray, coords: np.ndarray, lattices: np.ndarray,
              t: np.ndarray, config: ModelConfig) -> Features:
    """Non-learned input features for a batch of equal-size structures."""
    species = np.asarray(species, dtype=np.int64)
    coords = np.asarray(coords, dtype=np.float64)
    lattices = np.asarray(lattices, dtype=np.float64)
    if species.ndim != 2 or coords.shape != species.shape + (3,):
        raise ValueError(
            f"featurize expects batched species (B,N) and coords (B,N,3); "
            f"got {species.shape} and {coords.shape}")
    batch, n_atoms = species.shape
    t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (batch,))
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("time must lie in [0, 1]")
    time_feats = np.repeat(time_embedding(t, config.n_time_freq), n_atoms, axis=0)
    idx_i, idx_j = _pair_indices(batch, n_atoms)
    flat_coords = coords.reshape(batch * n_atoms, 3)
    delta = flat_coords[idx_j] - flat_coords[idx_i]
    pair_feats = pair_embedding(delta, config.n_freq)
    pairs_per = n_atoms * (n_atoms - 1)
    lattice_feats = np.repeat(lattices.reshape(batch, 9), pairs_per, axis=0)
    return Features(time_feats, pair_feats, lattice_feats, idx_i, idx_j)


class NetworkOutput(NamedTuple):
    b_x: Tensor                # (batch, n_atoms, 3)
    b_l: Tensor                # (batch, 3, 3)
    z_x: Tensor | None
    z_l: Tensor | None
    logits: Tensor | None      # (batch, n_atoms, n_tokens - 1)


def forward(params: ModelParams, config: ModelConfig, species: np.ndarray,
            coords: np.ndarray, lattices: np.ndarray, t) -> NetworkOutput:
    """Run the encoder on a batch of equal-size structures."""
    species = np.asarray(species, dtype=np.int64)
    batch, n_atoms = species.shape
    if np.any(species < 0) or np.any(species >= config.n_tokens):
        raise ValueError("species token outside the model vocabulary")
    feats = featurize(species, coords, lattices, t, config)

    emb = ad.gather_rows(params["embed"], species.ravel())
    node_in = ad.concat([emb, Tensor(feats.time_feats)], axis=1)
    h = ad.tanh(ad.matmul(node_in, params["in_w"]) + params["in_b"])

    has_pairs = n_atoms > 1
    if has_pairs and config.include_geometry:
        static_pair = Tensor(np.concatenate([feats.lattice_feats, feats.pair_feats], axis=1))
    for s in range(config.n_layers):
        if has_pairs:
            h_i = ad.gather_rows(h, feats.idx_i)
            h_j = ad.gather_rows(h, feats.idx_j)
            if config.include_geometry:
                msg_in = ad.concat([h_i, h_j, static_pair], axis=1)
            else:
                msg_in = ad.concat([h_i, h_j], axis=1)
            messages = _mlp_apply(params, f"msg{s}", msg_in)
            agg = ad.sum_(ad.reshape(messages, (batch * n_atoms, n_atoms - 1,
                                                config.d_hidden)), axis=1)
        else:
            agg = Tensor(np.zeros((batch * n_atoms, config.d_hidden)))
        h = h + _mlp_apply(params, f"upd{s}", ad.concat([h, agg], axis=1))

    b_x = ad.reshape(ad.matmul(h, params["head_x_w"]) + params["head_x_b"],
                     (batch, n_atoms, 3))
    pooled = ad.mean(ad.reshape(h, (batch, n_atoms, config.d_hidden)), axis=1)
    b_l = ad.reshape(ad.matmul(pooled, params["head_l_w"]) + params["head_l_b"],
                     (batch, 3, 3))
    z_x = z_l = logits = None
    if config.predict_denoiser:
        z_x = ad.reshape(ad.matmul(h, params["head_zx_w"]) + params["head_zx_b"],
                         (batch, n_atoms, 3))
        z_l = ad.reshape(ad.matmul(pooled, params["head_zl_w"]) + params["head_zl_b"],
                         (batch, 3, 3))
    if config.predict_species:
        logits = ad.reshape(ad.matmul(h, params["head_a_w"]) + params["head_a_b"],
                            (batch, n_atoms, config.n_tokens - 1))
    return NetworkOutput(b_x, b_l, z_x, z_l, logits)


def remove_com(target_velocities: np.ndarray) -> np.ndarray:
    """Subtract the per-structure mean velocity from every atom's velocity."""
    v = np.asarray(target_velocities, dtype=np.float64)
    if v.shape[-1] != 3 or v.ndim < 2:
        raise ValueError(f"expected (..., n_atoms, 3) velocities, got {v.shape}")
    return v - v.mean(axis=-2, keepdims=True)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, params: ModelParams, config: ModelConfig,
                    extra: dict | None = None) -> None:
    """Write all weights plus a shape manifest as JSON (exact round-trip)."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "shapes": {k: list(v.shape) for k, v in params.items()},
        "arrays": {k: v.data.ravel().tolist() for k, v in params.items()},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(payload))


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig, dict]:
    """Load a checkpoint, verifying version and the shape manifest."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('format_version')}")
    config = ModelConfig.from_dict(payload["config"])
    params = init_params(config, np.random.default_rng(0))
    shapes = {k: tuple(v) for k, v in payload["shapes"].items()}
    expected = {k: v.shape for k, v in params.items()}
    if shapes != expected:
        raise CheckpointError("checkpoint shape manifest does not match the model config")
    arrays = {}
    for name, flat in payload["arrays"].items():
        arr = np.asarray(flat, dtype=np.float64)
        if arr.size != int(np.prod(shapes[name])):
            raise CheckpointError(f"array {name} has {arr.size} values, expected shape {shapes[name]}")
        arrays[name] = arr.reshape(shapes[name])
    params.load_data(arrays)
    return params, config, payload.get("extra", {})
