"""Training loop: pair base and target structures, interpolate, evaluate the
network, combine the losses, and update parameters with adaptive moments and
decoupled weight decay.

Coordinates interpolate along the shortest periodic geodesic and the
center-of-mass motion is removed from their target velocity; lattices use the
plain Euclidean interpolant; species follow the masking conditional flow for
de novo and composition-only tasks. Antithetic latent sampling (evaluating
the loss at +gamma z and -gamma z with a shared z and averaging) is applied
whenever a group's interpolant carries a latent.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .coupling import BaseDistributionSpec, min_permutation_coupling, sample_base
from .dfm import TokenSpace
from .interpolants import InterpolantSpec, clamp_time, coefficients, interpolate
from .losses import LossWeights, denoiser_loss, species_loss, total_loss, velocity_loss
from .network import ModelConfig, ModelParams, forward, remove_com
from .structures import MASK_TOKEN, Structure, nearest_image_unwrap, wrap

TASKS = ("csp", "dng", "cfp")


@dataclass
class TrainConfig:
    task: str = "csp"
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    use_coupling: bool = False
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    x_spec: InterpolantSpec = field(default_factory=InterpolantSpec)
    l_spec: InterpolantSpec = field(default_factory=InterpolantSpec)

    def __post_init__(self) -> None:
        if isinstance(self.weights, dict):
            self.weights = LossWeights.from_dict(self.weights)
        if isinstance(self.x_spec, dict):
            self.x_spec = InterpolantSpec.from_dict(self.x_spec)
        if isinstance(self.l_spec, dict):
            self.l_spec = InterpolantSpec.from_dict(self.l_spec)
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.learning_rate <= 0.0 and self.learning_rate != 0.0:
            raise ValueError("learning rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["weights"] = self.weights.to_dict()
        out["x_spec"] = self.x_spec.to_dict()
        out["l_spec"] = self.l_spec.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


class AdamW:
    """Adaptive moment estimation with decoupled weight decay."""

    def __init__(self, params: ModelParams, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for name, t in self.params.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + self.eps)
            t.data = t.data - self.lr * update - self.lr * self.weight_decay * t.data


def active_parts(config: TrainConfig, model: ModelConfig) -> tuple[str, ...]:
    if config.task == "cfp":
        return ("a",)
    parts = ["x_b", "l_b"]
    if model.predict_denoiser and config.x_spec.uses_gamma():
        parts.append("x_z")
    if model.predict_denoiser and config.l_spec.uses_gamma():
        parts.append("l_z")
    if config.task == "dng":
        parts.append("a")
    return tuple(parts)


def _validate_setup(config: TrainConfig, model: ModelConfig,
                    token_space: TokenSpace | None) -> None:
    if config.task in ("dng", "cfp"):
        if not model.predict_species:
            raise ValueError(f"{config.task} training requires a species head")
        if token_space is None:
            raise ValueError(f"{config.task} training requires a token space")
        if token_space.n_tokens != model.n_tokens:
            raise ValueError("token space size must match the model vocabulary")
    if config.task == "cfp" and model.include_geometry:
        raise ValueError("composition-only training requires include_geometry=False")


def _interpolate_species(a1: np.ndarray, t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample a_t from the masking conditional flow: the target with
    probability t, otherwise the mask."""
    keep = rng.random(a1.shape) < t[:, None]
    return np.where(keep, a1, MASK_TOKEN)


def _species_columns(tokens: np.ndarray, space: TokenSpace) -> np.ndarray:
    """Map real token ids to logit columns of the mask-free vocabulary."""
    return np.where(tokens > space.mask, tokens - 1, tokens)


class BatchLoss:
    """Loss terms for one assembled batch, evaluated at one latent sign."""

    def __init__(self, config: TrainConfig, model: ModelConfig,
                 token_space: TokenSpace | None):
        self.config = config
        self.model = model
        self.token_space = token_space

    def __call__(self, params: ModelParams, batch: dict, sign: float):
        cfg = self.config
        cx = batch["coeff_x"]
        cl = batch["coeff_l"]
        gx = sign * batch["z_x"] if cfg.x_spec.uses_gamma() else 0.0
        gl = sign * batch["z_l"] if cfg.l_spec.uses_gamma() else 0.0
        expand = lambda c: c[:, None, None]
        x_t = wrap(expand(cx.alpha) * batch["x0"] + expand(cx.beta) * batch["x1u"]
                   + expand(cx.gamma) * gx)
        l_t = (expand(cl.alpha) * batch["l0"] + expand(cl.beta) * batch["l1"]
               + expand(cl.gamma) * gl)
        v_x = remove_com(expand(cx.d_alpha) * batch["x0"] + expand(cx.d_beta) * batch["x1u"]
                         + expand(cx.d_gamma) * gx)
        v_l = (expand(cl.d_alpha) * batch["l0"] + expand(cl.d_beta) * batch["l1"]
               + expand(cl.d_gamma) * gl)
        out = forward(params, self.model, batch["a_t"], x_t, l_t, batch["t"])
        parts: dict[str, ad.Tensor] = {}
        names = active_parts(cfg, self.model)
        if "x_b" in names:
            parts["x_b"] = velocity_loss(out.b_x, v_x)
        if "l_b" in names:
            parts["l_b"] = velocity_loss(out.b_l, v_l)
        if "x_z" in names:
            parts["x_z"] = denoiser_loss(out.z_x, sign * batch["z_x"])
        if "l_z" in names:
            parts["l_z"] = denoiser_loss(out.z_l, sign * batch["z_l"])
        if "a" in names:
            cols = _species_columns(batch["a1"], self.token_space).ravel()
            flat = ad.reshape(out.logits, (-1, self.model.n_tokens - 1))
            parts["a"] = species_loss(flat, cols)
        return total_loss(parts, cfg.weights), parts


def assemble_batch(structures: list[Structure], config: TrainConfig,
                   base_spec: BaseDistributionSpec, rng: np.random.Generator) -> dict:
    """Pair each target with a base draw and precompute interpolation inputs."""
    n_atoms = structures[0].n_atoms
    batch = len(structures)
    x1 = np.stack([s.coords for s in structures])
    l1 = np.stack([s.lattice for s in structures])
    a1 = np.stack([s.species for s in structures])
    bases = []
    for s in structures:
        comp = s.species if config.task == "csp" else None
        x0 = sample_base(base_spec, n_atoms, rng, composition=comp)
        if config.use_coupling:
            x0 = min_permutation_coupling(x0, s)
        bases.append(x0)
    x0 = np.stack([b.coords for b in bases])
    l0 = np.stack([b.lattice for b in bases])
    t = rng.random(batch)
    a_t = a1
    if config.task in ("dng", "cfp"):
        a_t = _interpolate_species(a1, t, rng)
    return {
        "x0": x0,
        "x1u": nearest_image_unwrap(x0, x1),
        "l0": l0,
        "l1": l1,
        "a1": a1,
        "a_t": a_t,
        "t": t,
        "z_x": rng.standard_normal(x0.shape),
        "z_l": rng.standard_normal(l0.shape),
        "coeff_x": coefficients(config.x_spec, clamp_time(config.x_spec, t)),
        "coeff_l": coefficients(config.l_spec, clamp_time(config.l_spec, t)),
    }


def train_epoch(params: ModelParams, structures: list[Structure],
                config: TrainConfig, model: ModelConfig,
                base_spec: BaseDistributionSpec, optimizer: AdamW,
                rng: np.random.Generator,
                token_space: TokenSpace | None = None) -> dict[str, float]:
    """One pass over the training structures; returns mean loss terms."""
    _validate_setup(config, model, token_space)
    loss_fn = BatchLoss(config, model, token_space)
    by_size: dict[int, list[Structure]] = defaultdict(list)
    for s in structures:
        by_size[s.n_atoms].append(s)
    order = []
    for n, group in sorted(by_size.items()):
        perm = rng.permutation(len(group))
        for lo in range(0, len(group), config.batch_size):
            order.append([group[i] for i in perm[lo:lo + config.batch_size]])
    rng.shuffle(order)

    sums: dict[str, float] = defaultdict(float)
    n_batches = 0
    antithetic = config.x_spec.uses_gamma() or config.l_spec.uses_gamma()
    for batch_idx, group in enumerate(order):
        batch = assemble_batch(group, config, base_spec, rng)
        optimizer.zero_grad()
        loss_plus, parts = loss_fn(params, batch, +1.0)
        if antithetic:
            loss_minus, _ = loss_fn(params, batch, -1.0)
            loss = ad.mul(loss_plus + loss_minus, 0.5)
        else:
            loss = loss_plus
        value = loss.item()
        if not math.isfinite(value):
            breakdown = {k: v.item() for k, v in parts.items()}
            raise RuntimeError(
                f"non-finite loss at batch {batch_idx}: {breakdown}")
        loss.backward()
        optimizer.step()
        sums["loss"] += value
        for k, v in parts.items():
            sums[k] += v.item()
        n_batches += 1
    return {k: v / max(n_batches, 1) for k, v in sums.items()}


def evaluation_loss(params: ModelParams, structures: list[Structure],
                    config: TrainConfig, model: ModelConfig,
                    base_spec: BaseDistributionSpec,
                    rng: np.random.Generator,
                    token_space: TokenSpace | None = None) -> float:
    """Mean loss over a structure set without updating parameters."""
    loss_fn = BatchLoss(config, model, token_space)
    by_size: dict[int, list[Structure]] = defaultdict(list)
    for s in structures:
        by_size[s.n_atoms].append(s)
    total = 0.0
    n = 0
    for _, group in sorted(by_size.items()):
        for lo in range(0, len(group), config.batch_size):
            batch = assemble_batch(group[lo:lo + config.batch_size], config, base_spec, rng)
            loss, _ = loss_fn(params, batch, +1.0)
            total += loss.item()
            n += 1
    return total / max(n, 1)


def train(params: ModelParams, train_set: list[Structure],
          val_set: list[Structure], config: TrainConfig, model: ModelConfig,
          base_spec: BaseDistributionSpec,
          token_space: TokenSpace | None = None,
          log_fn=None) -> list[dict]:
    """Fixed-epoch training with best-checkpoint selection on validation loss."""
    _validate_setup(config, model, token_space)
    rng = np.random.default_rng(config.seed)
    optimizer = AdamW(params, config.learning_rate, config.beta1, config.beta2,
                      config.adam_eps, config.weight_decay)
    history: list[dict] = []
    best_val = math.inf
    best_state = params.copy_data()
    for epoch in range(config.epochs):
        record = train_epoch(params, train_set, config, model, base_spec,
                             optimizer, rng, token_space)
        record["epoch"] = epoch
        if val_set:
            record["val_loss"] = evaluation_loss(params, val_set, config, model,
                                                 base_spec, rng, token_space)
            if record["val_loss"] < best_val:
                best_val = record["val_loss"]
                best_state = params.copy_data()
        history.append(record)
        if log_fn is not None:
            log_fn(record)
    if val_set and config.epochs > 0:
        params.load_data(best_state)
    return history


def closed_form_sanity(n_samples: int = 10 ** 5, seed: int = 0,
                       target_mean: float = 2.0, target_sigma: float = 1.0) -> list[dict]:
    """Moment check of interpolated 1-D Gaussians against closed forms.

    With rho_0 = N(0,1), rho_1 = N(m, sigma^2) and the linear interpolant,
    x_t has mean beta(t) m and variance alpha^2 + beta^2 sigma^2 + gamma^2.
    """
    rng = np.random.default_rng(seed)
    cases = []
    for spec, label in (
        (InterpolantSpec(family="linear"), "linear"),
        (InterpolantSpec(family="linear", gamma_kind="latent_sqrt", a=0.07),
         "linear+latent_sqrt(0.07)"),
    ):
        for t in (0.0, 0.5, 1.0):
            x0 = rng.standard_normal(n_samples)
            x1 = target_mean + target_sigma * rng.standard_normal(n_samples)
            z = rng.standard_normal(n_samples)
            x_t = interpolate(spec, x0, x1, z, t)
            c = coefficients(spec, t)
            exp_mean = float(c.beta) * target_mean
            exp_var = float(c.alpha) ** 2 + float(c.beta) ** 2 * target_sigma ** 2 \
                + float(c.gamma) ** 2
            se_mean = math.sqrt(exp_var / n_samples)
            se_var = exp_var * math.sqrt(2.0 / (n_samples - 1))
            obs_mean = float(x_t.mean())
            obs_var = float(x_t.var())
            cases.append({
                "interpolant": label,
                "t": t,
                "expected_mean": exp_mean,
                "observed_mean": obs_mean,
                "se_mean": se_mean,
                "expected_var": exp_var,
                "observed_var": obs_var,
                "se_var": se_var,
                "ok": (abs(obs_mean - exp_mean) < 3 * se_mean
                       and abs(obs_var - exp_var) < 3 * se_var),
            })
    return cases
