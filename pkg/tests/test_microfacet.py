# File: tests/test_microfacet.py

import math

import numpy as np
import pytest
from scipy.integrate import dblquad, quad

from microgeometry.microfacet import (
    CorrelationFn,
    Ndf,
    corr_eval,
    masking_shadowing,
    ndf_eval,
    smith_g1,
    smith_g1_from_cos,
    smith_lambda,
    smith_lambda_direct,
    smith_lambda_monte_carlo,
)
from optics.geometry import Direction, halfway
from utils.errors import GeometryError, MicrofacetError

HALF_PI = 0.5 * math.pi
Z = Direction(0.0, 0.0, 1.0)


def _cos_weighted_mass(ndf):
    value, _ = quad(lambda t: ndf.scalar(t) * math.cos(t) * math.sin(t), 0.0, HALF_PI,
                    points=[p for p in (0.5 * ndf.alpha, 2.0 * ndf.alpha) if p < HALF_PI], limit=500, epsabs=1e-14)
    return 2.0 * math.pi * value


@pytest.mark.parametrize("alpha", np.linspace(0.05, 1.2, 6))
@pytest.mark.parametrize("beta", np.linspace(0.6, 4.0, 6))
def test_slope_area_normalization(alpha, beta):
    assert _cos_weighted_mass(Ndf(float(alpha), float(beta))) == pytest.approx(1.0, abs=1e-6)


def test_ndf_shape():
    ndf = Ndf(0.3, 2.0)
    theta = np.linspace(0.0, 1.5, 50)
    values = ndf.eval(theta)
    assert values[0] == pytest.approx(ndf.norm_c, rel=1e-15)
    assert np.allclose(values / ndf.norm_c, np.exp(-(theta / 0.3) ** 2), rtol=1e-12)
    assert np.all(np.diff(values) < 0.0)
    assert ndf_eval(ndf, HALF_PI) == 0.0
    assert ndf_eval(ndf, 0.1) == pytest.approx(ndf.scalar(0.1), rel=1e-14)


def test_norm_c_matches_independent_integral():
    ndf = Ndf(0.3, 2.0)
    value, _ = quad(lambda t: math.exp(-((t / 0.3) ** 2)) * math.cos(t) * math.sin(t), 0.0, HALF_PI, epsabs=1e-14)
    assert ndf.norm_c == pytest.approx(1.0 / (2.0 * math.pi * value), rel=1e-7)


def test_invalid_ndf_parameters():
    with pytest.raises(MicrofacetError):
        Ndf(1e-5, 2.0)
    with pytest.raises(MicrofacetError):
        Ndf(0.3, 0.0)


def test_smith_lambda_basics():
    ndf = Ndf(0.4, 2.0)
    assert smith_lambda(ndf, 0.0) == pytest.approx(0.0, abs=1e-12)
    theta = np.linspace(0.0, 1.5, 40)
    values = smith_lambda(ndf, theta)
    assert np.all(values >= 0.0)
    assert np.all(np.diff(values) >= -1e-12)
    with pytest.raises(MicrofacetError, match="grazing masking undefined"):
        smith_lambda(ndf, HALF_PI)


def test_smith_lambda_vanishes_for_smooth_surfaces():
    ndf = Ndf(1e-3, 2.0, smith_nodes=8)
    for theta in (0.2, 1.0, 1.5):
        assert smith_lambda_direct(ndf, theta) < 1e-12


def test_smith_lambda_matches_monte_carlo():
    ndf = Ndf(0.4, 2.0)
    theta = math.radians(70.0)
    mc, _ = smith_lambda_monte_carlo(ndf, theta, n_samples=1_000_000, seed=7)
    assert smith_lambda(ndf, theta) == pytest.approx(mc, rel=0.02)
    assert smith_lambda_direct(ndf, theta) == pytest.approx(mc, rel=0.02)


def test_table_interpolation_matches_direct():
    ndf = Ndf(0.3, 1.5)
    for theta in (0.3, 0.9, 1.3):
        assert smith_lambda(ndf, theta) == pytest.approx(smith_lambda_direct(ndf, theta), rel=1e-3, abs=1e-9)


def test_smith_table_uses_cache(tmp_path):
    first = Ndf(0.35, 2.5, smith_nodes=16, cache_dir=str(tmp_path))
    first.smith_table.build()
    assert any(p.name.startswith("smith_") for p in tmp_path.iterdir())
    second = Ndf(0.35, 2.5, smith_nodes=16, cache_dir=str(tmp_path))
    second.smith_table.build()
    assert np.array_equal(first.smith_table.values, second.smith_table.values)


def test_smith_g1():
    ndf = Ndf(0.3, 2.0)
    assert smith_g1(ndf, Z, Z, Z) == pytest.approx(1.0, abs=1e-12)
    v = Direction.from_angles(1.0, 0.0)
    facet = Direction.from_angles(1.2, math.pi)
    assert v.dot(facet) < 0.0
    assert smith_g1(ndf, v, Z, facet) == 0.0
    with pytest.raises(GeometryError, match="below-horizon direction"):
        smith_g1(ndf, Direction(1.0, 0.0, 0.0), Z, Z)
    g = smith_g1_from_cos(ndf, np.cos(np.linspace(0.0, 1.5, 30)))
    assert np.all((g >= 0.0) & (g <= 1.0))
    assert np.all(np.diff(g) <= 1e-12)


def test_masking_shadowing_bounded_by_factors():
    ndf = Ndf(0.5, 2.0)
    L = Direction.from_angles(1.1, 0.0)
    V = Direction.from_angles(0.6, 2.5)
    H = halfway(L, V)
    g = masking_shadowing(ndf, L, V, Z, H)
    assert g <= min(smith_g1(ndf, L, Z, H), smith_g1(ndf, V, Z, H)) + 1e-15
    assert g > 0.0


def test_correlation_constant_for_zero_kappa():
    ndf = Ndf(0.3, 2.0)
    f = CorrelationFn(0.0, ndf, nodes=8)
    expected = 1.0 / ndf.hemisphere_integral
    for n, ni in ((Z, Z), (Direction.from_angles(0.5, 1.0), Direction.from_angles(1.0, -2.0))):
        assert corr_eval(f, n, ni, ndf) == pytest.approx(expected, rel=1e-12)


def test_correlation_kernel_symmetry():
    ndf = Ndf(0.3, 2.0)
    f = CorrelationFn(5.0, ndf, nodes=64)
    a = Direction.from_angles(0.4, 0.2)
    b = Direction.from_angles(0.7, 1.9)
    ratio_ab = corr_eval(f, a, b, ndf) * math.exp(f.log_normalization(0.7))
    ratio_ba = corr_eval(f, b, a, ndf) * math.exp(f.log_normalization(0.4))
    assert ratio_ab == pytest.approx(ratio_ba, rel=1e-12)


def test_correlation_rejects_other_ndf():
    f = CorrelationFn(1.0, Ndf(0.3, 2.0), nodes=8)
    with pytest.raises(MicrofacetError):
        corr_eval(f, Z, Z, Ndf(0.4, 2.0))
    with pytest.raises(MicrofacetError):
        CorrelationFn(-1.0, Ndf(0.3, 2.0))


@pytest.mark.parametrize("kappa", [0.0, 1.0, 10.0, 50.0])
def test_correlation_normalization(kappa):
    ndf = Ndf(0.3, 2.0)
    f = CorrelationFn(kappa, ndf, nodes=9)
    for theta_ni in f.theta_nodes[[0, 3, 6, 7]]:
        sin_i, cos_i = math.sin(theta_ni), math.cos(theta_ni)

        def integrand(phi, theta):
            cos_between = math.sin(theta) * math.cos(phi) * sin_i + math.cos(theta) * cos_i
            kernel = math.exp(float(f.log_kernel(cos_between, theta_ni)))
            return kernel * ndf.scalar(theta) * math.sin(theta)

        # phi integrated over [-pi, pi] so the kernel peak sits at the interior point 0
        total, _ = dblquad(integrand, 0.0, HALF_PI, -math.pi, math.pi, epsabs=1e-10, epsrel=1e-9)
        assert total == pytest.approx(1.0, abs=1e-5)


def test_concentrated_correlation_mass():
    ndf = Ndf(0.2, 2.0)
    f = CorrelationFn(50.0, ndf, nodes=16)
    log_z = float(f.log_normalization(0.0))

    def density(t):
        return 2.0 * math.pi * math.exp(50.0 * (math.cos(t) - 1.0) - log_z) * ndf.scalar(t) * math.sin(t)

    near, _ = quad(density, 0.0, math.radians(15.0), epsabs=1e-12)
    assert near > 0.95
