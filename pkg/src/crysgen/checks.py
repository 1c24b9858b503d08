"""Release-gate invariant suite: closed-form identities, independent oracles
(brute-force enumeration, finite differences, exhaustive search, linear
programming), and Monte Carlo moment checks, each reported as a named
pass/fail result.

Every check here is self-contained and seeded, so the suite is deterministic
and runs in minutes on a laptop CPU.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import autodiff as ad
from .coupling import brute_force_min_permutation, coupling_cost, min_permutation
from .dfm import TokenSpace, dfm_euler_step
from .interpolants import (
    FAMILIES,
    InterpolantSpec,
    coefficients,
    interpolant_velocity,
    interpolate,
    validate,
    validate_coefficient_functions,
    vp_tau,
)
from .losses import LossWeights, denoiser_loss, species_loss, total_loss, velocity_loss
from .metrics import match_rate, wasserstein1
from .network import ModelConfig, forward, init_params
from .sampling import anneal, ode_step, sde_step
from .structures import MASK_TOKEN, Structure, nearest_image_unwrap, torus_distance
from .train import closed_form_sanity


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def _result(name: str, started: float, ok: bool, detail: str) -> CheckResult:
    return CheckResult(name, ok, detail, time.perf_counter() - started)


def _random_spec(family: str, rng: np.random.Generator) -> InterpolantSpec:
    a = float(np.exp(rng.uniform(np.log(0.01), np.log(10.0))))
    if family in ("linear", "trig"):
        return InterpolantSpec(family=family,
                               gamma_kind=str(rng.choice(["none", "latent_sqrt"])), a=a)
    if family == "enc_dec":
        return InterpolantSpec(family="enc_dec", gamma_kind="enc_dec_gamma", a=a,
                               t_switch=float(rng.uniform(0.1, 0.9)),
                               p=float(rng.choice([0.5, 1.0])))
    if family == "vp_sbd":
        return InterpolantSpec(family="vp_sbd",
                               schedule=str(rng.choice(["const", "linear", "cosine"])),
                               beta_min=float(rng.uniform(0.05, 0.5)),
                               beta_max=float(rng.uniform(5.0, 25.0)),
                               d=float(rng.uniform(0.002, 0.05)))
    return InterpolantSpec(family="ve_sbd", sigma_min=float(rng.uniform(0.001, 0.01)),
                           sigma_max=float(rng.uniform(0.1, 1.0)))


def check_interpolant_boundaries(seed: int = 42) -> CheckResult:
    """Boundary identities for all families plus rejection of violators."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for family in FAMILIES:
        for _ in range(100):
            spec = _random_spec(family, rng)
            violations = validate(spec, tol=1e-10)
            if violations:
                return _result("interpolant_boundary_identities", started, False,
                               f"{family}: {violations[0]}")
            c0 = coefficients(spec, 0.0)
            c1 = coefficients(spec, 1.0)
            errs = [abs(float(c1.alpha)), abs(float(c0.gamma)), abs(float(c1.gamma)),
                    abs(float(c1.beta) - 1.0)]
            if not spec.one_sided:
                errs += [abs(float(c0.alpha) - 1.0), abs(float(c0.beta))]
            worst = max(worst, max(errs))
    violators = [
        (lambda t: 1.0 - t, lambda t: t, lambda t: t),            # gamma(1) != 0
        (lambda t: 1.0, lambda t: t, lambda t: 0.0),              # alpha(1) != 0
        (lambda t: 1.0 - t, lambda t: t ** 2 + 0.5, lambda t: 0.0),  # beta(0) != 0
        (lambda t: 0.5 - t, lambda t: t, lambda t: 0.0),          # alpha(0) != 1
        (lambda t: 1.0 - t, lambda t: 0.5 * t, lambda t: 0.0),    # beta(1) != 1
    ]
    rejected = sum(bool(validate_coefficient_functions(*fns)) for fns in violators)
    ok = worst < 1e-10 and rejected == len(violators)
    return _result("interpolant_boundary_identities", started, ok,
                   f"max boundary error {worst:.2e}; rejected {rejected}/5 violators")


def check_enc_dec_generalization() -> CheckResult:
    """Generalized encoder-decoder reduces to the plain form at a=1, p=1,
    t_switch=1/2."""
    started = time.perf_counter()
    spec = InterpolantSpec(family="enc_dec", gamma_kind="enc_dec_gamma",
                           a=1.0, p=1.0, t_switch=0.5)
    t = np.linspace(0.0, 1.0, 1000)
    c = coefficients(spec, t)
    err = max(
        float(np.max(np.abs(c.alpha - np.where(t < 0.5, np.cos(math.pi * t) ** 2, 0.0)))),
        float(np.max(np.abs(c.beta - np.where(t > 0.5, np.cos(math.pi * t) ** 2, 0.0)))),
        float(np.max(np.abs(c.gamma - np.sin(math.pi * t) ** 2))),
    )
    return _result("enc_dec_generalization", started, err < 1e-10,
                   f"max deviation from the reference row {err:.2e} at 1000 grid points")


def check_vp_schedules(tau_fn=None) -> CheckResult:
    """Variance-preserving identity and schedule endpoint values."""
    started = time.perf_counter()
    tau = tau_fn if tau_fn is not None else vp_tau
    t = np.linspace(0.0, 1.0, 1001)
    tau_const = tau("const", t)
    vp_err = float(np.max(np.abs((1.0 - tau_const ** 2) + tau_const ** 2 - 1.0)))
    cos_err = abs(float(tau("cosine", math.exp(-1.0))))
    lin_err = abs(float(tau("linear", 1.0)) - 1.0)
    worst = max(vp_err, cos_err, lin_err)
    return _result("vp_schedule_identities", started, worst < 1e-12,
                   f"alpha^2+beta^2 error {vp_err:.2e}, tau_cos(1/e) {cos_err:.2e}, "
                   f"tau_lin(1)-1 {lin_err:.2e}")


def brute_force_unwrap(x0: float, x1: float) -> float:
    best_k, best_d = 0, abs(x1 - x0)
    for k in (-1, 1):
        d = abs((x1 - x0) + k)
        if d < best_d:
            best_k, best_d = k, d
    return x1 + best_k


def brute_force_torus_distance(a: np.ndarray, b: np.ndarray) -> float:
    delta = b - a
    best = np.inf
    for off in itertools.product((-1.0, 0.0, 1.0), repeat=3):
        best = min(best, float(np.linalg.norm(delta + np.array(off))))
    return best


def check_torus_geodesics(seed: int = 7, n_pairs: int = 10 ** 4) -> CheckResult:
    """Unwrap and torus distance equal brute-force image enumeration."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    for _ in range(n_pairs):
        a = rng.random(3)
        b = rng.random(3)
        if torus_distance(a, b) != brute_force_torus_distance(a, b):
            return _result("torus_geodesic_bruteforce", started, False,
                           f"distance mismatch at {a} vs {b}")
        for x0, x1 in zip(a, b):
            if nearest_image_unwrap(float(x0), float(x1)) != brute_force_unwrap(
                    float(x0), float(x1)):
                return _result("torus_geodesic_bruteforce", started, False,
                               f"unwrap mismatch at ({x0}, {x1})")
    return _result("torus_geodesic_bruteforce", started, True,
                   f"{n_pairs} random pairs, exact agreement")


def check_velocity_finite_differences(seed: int = 11) -> CheckResult:
    """Analytic path velocity against the central-difference oracle."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    h = 1e-6
    worst = 0.0
    for family in FAMILIES:
        spec = _random_spec(family, rng)
        x0, x1, z = rng.normal(size=(3, 5))
        times = rng.uniform(0.05, 0.95, size=100)
        if spec.family == "enc_dec":
            times = times[np.abs(times - spec.t_switch) > 10 * h]
        if spec.family == "vp_sbd" and spec.schedule == "cosine":
            times = times[np.abs(times - math.exp(-1.0)) > 10 * h]
        for t in times:
            fd = (interpolate(spec, x0, x1, z, float(t) + h)
                  - interpolate(spec, x0, x1, z, float(t) - h)) / (2.0 * h)
            an = interpolant_velocity(spec, x0, x1, z, float(t))
            rel = float(np.max(np.abs(fd - an) / np.maximum(np.abs(an), 1.0)))
            worst = max(worst, rel)
    return _result("interpolant_velocity_fd", started, worst < 1e-6,
                   f"max relative error {worst:.2e} (h=1e-6, 100 interior times/family)")


def check_network_gradients(seed: int = 7) -> CheckResult:
    """Total-loss gradients on a 3-atom structure vs central differences."""
    started = time.perf_counter()
    config = ModelConfig(n_tokens=4, d_emb=3, d_hidden=5, n_layers=2, n_freq=2,
                         n_time_freq=2, predict_denoiser=True, predict_species=True)
    rng = np.random.default_rng(seed)
    params = init_params(config, rng)
    species = np.array([[1, 2, 3]])
    coords = rng.random((1, 3, 3))
    lattices = np.eye(3)[None] * 2.5
    t = np.array([0.4])
    targets = {
        "v_x": rng.normal(size=(1, 3, 3)),
        "v_l": rng.normal(size=(1, 3, 3)),
        "z_x": rng.normal(size=(1, 3, 3)),
        "z_l": rng.normal(size=(1, 3, 3)),
        "cols": rng.integers(0, config.n_tokens - 1, size=3),
    }

    def loss_fn():
        out = forward(params, config, species, coords, lattices, t)
        parts = {
            "x_b": velocity_loss(out.b_x, targets["v_x"]),
            "l_b": velocity_loss(out.b_l, targets["v_l"]),
            "x_z": denoiser_loss(out.z_x, targets["z_x"]),
            "l_z": denoiser_loss(out.z_l, targets["z_l"]),
            "a": species_loss(ad.reshape(out.logits, (-1, config.n_tokens - 1)),
                              targets["cols"]),
        }
        return total_loss(parts, LossWeights())

    loss_fn().backward()
    h = 1e-6
    worst = 0.0
    for _, tensor in params.items():
        flat = tensor.data.ravel()
        grads = tensor.grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            dn = loss_fn().item()
            flat[i] = orig
            fd = (up - dn) / (2.0 * h)
            rel = abs(fd - grads[i]) / max(abs(fd), abs(grads[i]), 1e-6)
            worst = max(worst, rel)
    return _result("network_gradient_fd", started, worst < 1e-4,
                   f"max relative error {worst:.2e} over all parameters")


def check_gaussian_marginals() -> CheckResult:
    """Interpolated 1-D Gaussian moments match closed forms within 3 SE."""
    started = time.perf_counter()
    cases = closed_form_sanity(n_samples=10 ** 5, seed=0)
    bad = [c for c in cases if not c["ok"]]
    has_latent_case = any(abs(c["expected_var"] - 0.5175) < 1e-12 for c in cases)
    detail = f"{len(cases)} moment cases, includes variance 0.5175 case: {has_latent_case}"
    if bad:
        c = bad[0]
        detail = (f"{c['interpolant']} t={c['t']}: mean {c['observed_mean']:.4f} "
                  f"vs {c['expected_mean']:.4f}, var {c['observed_var']:.4f} "
                  f"vs {c['expected_var']:.4f}")
    return _result("gaussian_closed_form_marginals", started,
                   not bad and has_latent_case, detail)


def check_coupling_bruteforce(seed: int = 21, n_trials: int = 1000) -> CheckResult:
    """Assignment coupling equals exhaustive permutation search for N <= 6."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_trials):
        n = int(rng.integers(2, 7))
        x0 = Structure(np.full(n, MASK_TOKEN), rng.random((n, 3)), np.eye(3))
        x1 = Structure(np.full(n, MASK_TOKEN), rng.random((n, 3)), np.eye(3))
        cost = coupling_cost(x0, x1, min_permutation(x0, x1))
        _, brute = brute_force_min_permutation(x0, x1)
        worst = max(worst, abs(cost - brute))
    return _result("coupling_bruteforce", started, worst < 1e-12,
                   f"{n_trials} instances, max cost deviation {worst:.2e}")


def check_dfm_oracle(seed: int = 4, n_chains: int = 10 ** 4) -> CheckResult:
    """Masking CTMC with the exact posterior hits the target marginals."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    space = TokenSpace(n_tokens=3, mask=0)
    target_p = np.array([0.7, 0.3])
    steps = 100
    dt = 1.0 / steps
    tokens = np.full(n_chains, space.mask, dtype=np.int64)
    mask_counts = []
    for k in range(steps):
        u = rng.random(tokens.shape)
        draws = 1 + np.searchsorted(np.cumsum(target_p), u)
        a1 = np.where(tokens == space.mask, draws, tokens)
        tokens = dfm_euler_step(tokens, a1, k * dt, dt, 0.0, space, rng)
        mask_counts.append(int((tokens == space.mask).sum()))
    freq = np.array([(tokens == 1).mean(), (tokens == 2).mean()])
    tv = 0.5 * float(np.abs(freq - target_p).sum())
    residual = int((tokens == space.mask).sum())
    monotone = all(b <= a for a, b in zip(mask_counts, mask_counts[1:]))
    ok = tv < 0.02 and residual == 0 and monotone
    return _result("dfm_exact_posterior", started, ok,
                   f"terminal TV {tv:.4f}, residual masks {residual}, "
                   f"monotone unmasking {monotone}")


def check_antithetic(seed: int = 5) -> CheckResult:
    """Antithetic midpoint identity and variance reduction at small t."""
    started = time.perf_counter()
    from .losses import antithetic_pair

    spec = InterpolantSpec(family="linear", gamma_kind="latent_sqrt", a=1.0)
    rng = np.random.default_rng(seed)
    x0, x1, z = rng.normal(size=(3, 128))
    plus, minus = antithetic_pair(spec, x0, x1, z, 0.3)
    c = coefficients(spec, 0.3)
    identity_err = float(np.max(np.abs((plus + minus) / 2.0
                                       - (c.alpha * x0 + c.beta * x1))))
    t = 0.05
    n = 10 ** 4
    x0, x1, z = rng.normal(size=(3, n))
    b = 0.7

    def loss_at(zz):
        v = interpolant_velocity(spec, x0, x1, zz, t)
        return b * b - 2.0 * v * b

    var_single = float(loss_at(z).var())
    var_avg = float((0.5 * (loss_at(z) + loss_at(-z))).var())
    # exact algebraic identity, verified to floating round-off
    ok = identity_err < 1e-13 and var_avg <= var_single
    return _result("antithetic_sampling", started, ok,
                   f"midpoint identity error {identity_err:.1e}; variance "
                   f"{var_single:.3f} -> {var_avg:.3f} at t=0.05")


def check_euler_identities(seed: int = 0) -> CheckResult:
    """Euler order-1 convergence; zero-noise SDE and zero annealing are
    bitwise identities."""
    started = time.perf_counter()

    def decay(steps):
        x = np.array([1.0])
        dt = 1.0 / steps
        for _ in range(steps):
            x = ode_step(x, -x, dt)
        return float(x[0])

    target = math.exp(-1.0)
    errs = {n: abs(decay(n) - target) for n in (500, 1000, 2000)}
    r1 = errs[500] / errs[1000]
    r2 = errs[1000] / errs[2000]
    order_ok = 1.8 <= r1 <= 2.2 and 1.8 <= r2 <= 2.2

    rng = np.random.default_rng(seed)
    x = rng.random(64)
    b = rng.normal(size=64)
    sde_bitwise = sde_step(x, b, np.zeros(64), 0.0, 0.0, 0.01,
                           np.random.default_rng(1)).tobytes() \
        == ode_step(x, b, 0.01).tobytes()
    anneal_bitwise = anneal(b, 0.0, 0.37).tobytes() == b.tobytes()
    ok = order_ok and sde_bitwise and anneal_bitwise
    return _result("euler_identities", started, ok,
                   f"error ratios {r1:.2f}, {r2:.2f}; eps=0 SDE bitwise {sde_bitwise}; "
                   f"s=0 annealing bitwise {anneal_bitwise}")


def check_sde_ou_moments(seed: int = 4, n_paths: int = 10 ** 5) -> CheckResult:
    """Euler-Maruyama terminal variance matches the OU closed form."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    steps = 1000
    dt = 1.0 / steps
    eps = 0.5
    x = np.ones(n_paths)
    for _ in range(steps):
        x = sde_step(x, -x, 2.0 * x, 1.0, eps, dt, rng)
    theta, sigma_sq = 2.0, 2.0 * eps
    var_exact = sigma_sq / (2 * theta) * (1.0 - math.exp(-2 * theta))
    se = var_exact * math.sqrt(2.0 / n_paths)
    dev = abs(float(x.var()) - var_exact)
    return _result("sde_ou_moments", started, dev < 3 * se,
                   f"terminal variance deviation {dev:.2e} vs 3 SE {3 * se:.2e} "
                   f"({n_paths} paths)")


def _w1_lp(a: np.ndarray, b: np.ndarray) -> float:
    n, m = a.size, b.size
    cost = np.abs(a[:, None] - b[None, :]).ravel()
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, method="highs")
    if not res.success:
        raise RuntimeError("transport LP failed to solve")
    return float(res.fun)


def check_metrics_self_consistency(seed: int = 6) -> CheckResult:
    """Self-matching gives a perfect score; W1 agrees with the transport LP."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    motif = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [0.5, 0.5, 0.0],
                      [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]])
    refs = [
        Structure([11, 21, 8, 8, 8],
                  (motif + rng.normal(scale=0.01, size=(5, 3))) % 1.0,
                  np.eye(3) * rng.uniform(3.5, 4.5))
        for _ in range(15)
    ]
    rate, rmse = match_rate([s.copy() for s in refs], refs)
    samples = rng.normal(size=40)
    w_self = wasserstein1(samples, samples)
    lp_dev = 0.0
    for _ in range(20):
        n, m = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        a, b = rng.normal(size=n), rng.normal(size=m)
        lp_dev = max(lp_dev, abs(wasserstein1(a, b) - _w1_lp(a, b)))
    ok = rate == 1.0 and rmse == 0.0 and w_self == 0.0 and lp_dev < 1e-9
    return _result("metrics_self_consistency", started, ok,
                   f"self match rate {rate:.2f}, rmse {rmse}, W1(a,a) {w_self}, "
                   f"LP oracle deviation {lp_dev:.2e}")


ALL_CHECKS = (
    check_interpolant_boundaries,
    check_enc_dec_generalization,
    check_vp_schedules,
    check_torus_geodesics,
    check_velocity_finite_differences,
    check_network_gradients,
    check_gaussian_marginals,
    check_coupling_bruteforce,
    check_dfm_oracle,
    check_antithetic,
    check_euler_identities,
    check_sde_ou_moments,
    check_metrics_self_consistency,
)


def run_all_checks() -> list[CheckResult]:
    return [fn() for fn in ALL_CHECKS]
