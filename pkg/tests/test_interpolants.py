import math

import numpy as np
import pytest

from crysgen.interpolants import (
    FAMILIES,
    InterpolantSpec,
    coefficients,
    interpolant_velocity,
    interpolate,
    periodic_interpolate,
    periodic_velocity,
    validate,
    validate_coefficient_functions,
    vp_tau,
)


def random_spec(family: str, rng: np.random.Generator) -> InterpolantSpec:
    """Random admissible parameters for one family."""
    a = float(np.exp(rng.uniform(np.log(0.01), np.log(10.0))))
    if family in ("linear", "trig"):
        kind = rng.choice(["none", "latent_sqrt"])
        return InterpolantSpec(family=family, gamma_kind=str(kind), a=a)
    if family == "enc_dec":
        return InterpolantSpec(
            family="enc_dec", gamma_kind="enc_dec_gamma", a=a,
            t_switch=float(rng.uniform(0.1, 0.9)), p=float(rng.choice([0.5, 1.0])),
        )
    if family == "vp_sbd":
        return InterpolantSpec(
            family="vp_sbd", schedule=str(rng.choice(["const", "linear", "cosine"])),
            beta_min=float(rng.uniform(0.05, 0.5)), beta_max=float(rng.uniform(5.0, 25.0)),
            d=float(rng.uniform(0.002, 0.05)), sigma0=float(rng.uniform(0.1, 2.0)),
        )
    if family == "ve_sbd":
        return InterpolantSpec(
            family="ve_sbd", sigma_min=float(rng.uniform(0.001, 0.01)),
            sigma_max=float(rng.uniform(0.1, 1.0)),
        )
    raise AssertionError(family)


def test_boundary_identities_random_draws():
    rng = np.random.default_rng(42)
    for family in FAMILIES:
        for _ in range(100):
            spec = random_spec(family, rng)
            assert validate(spec) == []


def test_vp_const_table_values():
    spec = InterpolantSpec(family="vp_sbd", schedule="const")
    c = coefficients(spec, 0.6)
    assert float(c.alpha) == pytest.approx(0.8, abs=1e-12)
    assert float(c.beta) == pytest.approx(0.6, abs=1e-15)


def test_trig_boundary():
    c = coefficients(InterpolantSpec(family="trig"), 0.0)
    assert (float(c.alpha), float(c.beta), float(c.gamma)) == (1.0, 0.0, 0.0)


def test_linear_gamma_value():
    spec = InterpolantSpec(family="linear", gamma_kind="latent_sqrt", a=0.07)
    c = coefficients(spec, 0.5)
    assert float(c.gamma) == pytest.approx(math.sqrt(0.0175), abs=1e-12)


def test_vp_tau_values():
    assert float(vp_tau("const", 0.3)) == pytest.approx(0.3, abs=1e-15)
    assert float(vp_tau("linear", 1.0)) == pytest.approx(1.0, abs=1e-15)
    assert float(vp_tau("cosine", math.exp(-1.0))) == pytest.approx(0.0, abs=1e-15)
    assert float(vp_tau("cosine", 1.0)) == pytest.approx(1.0, abs=1e-15)


def test_vp_variance_preserving_identity():
    spec = InterpolantSpec(family="vp_sbd", schedule="const")
    t = np.linspace(0.0, 1.0, 1001)
    c = coefficients(spec, t)
    np.testing.assert_allclose(c.alpha ** 2 + c.beta ** 2, 1.0, atol=1e-12)


def test_ve_alpha_ends_at_zero_exactly():
    spec = InterpolantSpec(family="ve_sbd", sigma_min=0.005, sigma_max=0.5)
    assert float(coefficients(spec, 1.0).alpha) == 0.0


def test_interpolate_endpoints_random_draws():
    rng = np.random.default_rng(7)
    for family in FAMILIES:
        for _ in range(100):
            spec = random_spec(family, rng)
            x0 = rng.normal(size=4)
            x1 = rng.normal(size=4)
            z = rng.normal(size=4)
            if not spec.one_sided:
                np.testing.assert_allclose(interpolate(spec, x0, x1, z, 0.0), x0, atol=1e-10)
            np.testing.assert_allclose(interpolate(spec, x0, x1, z, 1.0), x1, atol=1e-10)


def test_linear_quarter_point():
    spec = InterpolantSpec(family="linear")
    assert interpolate(spec, np.array(0.0), np.array(4.0), None, 0.25) == pytest.approx(1.0)


def test_enc_dec_generalization_matches_special_case():
    """Generalized enc-dec at a=1, p=1, t_switch=0.5 equals the plain form
    alpha=cos^2(pi t) 1[t<1/2], beta=cos^2(pi t) 1[t>1/2], gamma=sin^2(pi t)."""
    spec = InterpolantSpec(family="enc_dec", gamma_kind="enc_dec_gamma",
                           a=1.0, p=1.0, t_switch=0.5)
    t = np.linspace(0.0, 1.0, 1000)
    c = coefficients(spec, t)
    alpha_ref = np.where(t < 0.5, np.cos(math.pi * t) ** 2, 0.0)
    beta_ref = np.where(t > 0.5, np.cos(math.pi * t) ** 2, 0.0)
    gamma_ref = np.sin(math.pi * t) ** 2
    np.testing.assert_allclose(c.alpha, alpha_ref, atol=1e-10)
    np.testing.assert_allclose(c.beta, beta_ref, atol=1e-10)
    np.testing.assert_allclose(c.gamma, gamma_ref, atol=1e-10)
    assert validate(spec) == []


def test_velocity_constant_for_plain_linear():
    spec = InterpolantSpec(family="linear")
    x0, x1 = np.array([1.0, -2.0]), np.array([3.0, 2.0])
    for t in (0.0, 0.31, 1.0):
        np.testing.assert_allclose(interpolant_velocity(spec, x0, x1, None, t), x1 - x0)


def test_trig_velocity_at_zero():
    spec = InterpolantSpec(family="trig")
    v = interpolant_velocity(spec, np.array(0.0), np.array(1.0), None, 0.0)
    assert float(v) == pytest.approx(math.pi / 2.0, abs=1e-12)


def _fd_velocity(spec, x0, x1, z, t, h=1e-6):
    up = interpolate(spec, x0, x1, z, t + h)
    dn = interpolate(spec, x0, x1, z, t - h)
    return (up - dn) / (2.0 * h)


def test_velocity_matches_finite_differences():
    """Central-difference oracle at 100 interior times per family."""
    rng = np.random.default_rng(11)
    h = 1e-6
    for family in FAMILIES:
        spec = random_spec(family, rng)
        x0, x1, z = rng.normal(size=(3, 5))
        times = rng.uniform(0.05, 0.95, size=100)
        if spec.family == "enc_dec":
            times = times[np.abs(times - spec.t_switch) > 10 * h]
        if spec.family == "vp_sbd" and spec.schedule == "cosine":
            times = times[np.abs(times - math.exp(-1.0)) > 10 * h]
        for t in times:
            fd = _fd_velocity(spec, x0, x1, z, float(t), h)
            an = interpolant_velocity(spec, x0, x1, z, float(t))
            assert np.max(np.abs(fd - an)) < 1e-6
            rel = np.abs(fd - an) / np.maximum(np.abs(an), 1.0)
            assert np.max(rel) < 1e-6


def test_periodic_midpoint_wraps():
    spec = InterpolantSpec(family="linear")
    x = periodic_interpolate(spec, np.array(0.9), np.array(0.1), None, 0.5)
    assert float(x) == pytest.approx(0.0, abs=1e-12)


def test_periodic_endpoint_recovers_target():
    rng = np.random.default_rng(3)
    for family in FAMILIES:
        spec = random_spec(family, rng)
        x0, x1 = rng.random(3), rng.random(3)
        z = rng.normal(size=3)
        out = periodic_interpolate(spec, x0, x1, z, 1.0)
        delta = np.abs(out - x1)
        delta = np.minimum(delta, 1.0 - delta)
        assert np.max(delta) < 1e-9


def test_periodic_mean_path_recovers_deterministic():
    """Averaging the latent over many draws collapses onto the gamma=0 path."""
    spec = InterpolantSpec(family="linear", gamma_kind="latent_sqrt", a=0.07)
    det = InterpolantSpec(family="linear")
    rng = np.random.default_rng(19)
    x0, x1 = np.array(0.9), np.array(0.1)
    n = 10 ** 5
    for t in (0.25, 0.5, 0.75):
        z = rng.normal(size=n)
        gamma_t = float(coefficients(spec, t).gamma)
        # average in unwrapped space, compare on the torus
        unwrapped = interpolate(spec, np.full(n, 0.9), np.full(n, 1.1), z, t)
        mean_path = float(np.mean(unwrapped)) % 1.0
        target = float(periodic_interpolate(det, x0, x1, None, t))
        se = gamma_t / math.sqrt(n)
        delta = abs(mean_path - target)
        delta = min(delta, 1.0 - delta)
        assert delta < 3.0 * se + 1e-12


def test_periodic_velocity_uses_unwrapped_target():
    spec = InterpolantSpec(family="linear")
    v = periodic_velocity(spec, np.array(0.9), np.array(0.1), None, 0.5)
    assert float(v) == pytest.approx(0.2, abs=1e-12)


def test_validate_rejects_constructed_violators():
    ok = validate_coefficient_functions(
        lambda t: 1.0 - t, lambda t: t, lambda t: math.sqrt(0.07 * t * (1.0 - t)),
        require_positive_gamma=True)
    assert ok == []
    bad_gamma = validate_coefficient_functions(lambda t: 1.0 - t, lambda t: t, lambda t: t)
    assert any("gamma(1)=0" in v for v in bad_gamma)
    bad_alpha = validate_coefficient_functions(lambda t: 1.0, lambda t: t, lambda t: 0.0)
    assert any("alpha(1)=0" in v for v in bad_alpha)


def test_spec_rejects_bad_parameters():
    with pytest.raises(ValueError):
        InterpolantSpec(family="enc_dec", t_switch=1.5)
    with pytest.raises(ValueError):
        InterpolantSpec(family="vp_sbd", gamma_kind="latent_sqrt")
    with pytest.raises(ValueError):
        InterpolantSpec(family="nope")
    with pytest.raises(ValueError):
        InterpolantSpec(family="ve_sbd", sigma_min=2.0, sigma_max=1.0)


def test_time_outside_unit_interval_rejected():
    with pytest.raises(ValueError):
        coefficients(InterpolantSpec(), 1.5)
    with pytest.raises(ValueError):
        coefficients(InterpolantSpec(), -0.2)


def test_spec_dict_roundtrip():
    spec = InterpolantSpec(family="enc_dec", gamma_kind="enc_dec_gamma",
                           a=2.5, t_switch=0.3, p=0.5)
    assert InterpolantSpec.from_dict(spec.to_dict()) == spec
