# File: tests/test_polarization.py

import math

import numpy as np
import pytest

from optics.fresnel import fresnel_rs_rp, transmittances
from optics.polarization import (
    StokesVector,
    aolp,
    clamp_realizable,
    depolarizer,
    dolp,
    filter_images,
    filter_intensity,
    reflection_mueller,
    rotate_stokes_array,
    rotator,
    stokes_from_four,
    stokes_from_four_array,
    transmission_mueller,
)
from utils.errors import PolarizationError

FILTERS = (0.0, 0.25 * math.pi, 0.5 * math.pi, 0.75 * math.pi)


def realizable_samples(rng, n):
    s0 = rng.uniform(0.01, 2.0, n)
    rho = rng.uniform(0.0, 1.0, n)
    angle = rng.uniform(-math.pi, math.pi, n)
    return np.stack([s0, s0 * rho * np.cos(angle), s0 * rho * np.sin(angle), np.zeros(n)], axis=-1)


def test_filter_intensity_examples():
    assert filter_intensity(StokesVector(2.0, 0.0, 0.0), 0.7) == pytest.approx(1.0)
    assert filter_intensity(StokesVector(1.0, 1.0, 0.0), 0.0) == pytest.approx(1.0)
    assert filter_intensity(StokesVector(1.0, 1.0, 0.0), math.pi / 2) == pytest.approx(0.0, abs=1e-15)
    assert filter_intensity(StokesVector(2.0, 1.0, 0.0), math.pi / 4) == pytest.approx(1.0)


def test_stokes_from_four_examples():
    assert stokes_from_four(1.0, 1.0, 1.0, 1.0) == StokesVector(2.0, 0.0, 0.0, 0.0)
    assert stokes_from_four(1.0, 0.5, 0.0, 0.5) == StokesVector(1.0, 1.0, 0.0, 0.0)


def test_stokes_from_four_rejects_inconsistent():
    with pytest.raises(PolarizationError, match="inconsistent filter intensities"):
        stokes_from_four(1.0, 2.0, 0.0, 0.0)
    with pytest.raises(PolarizationError, match="inconsistent filter intensities"):
        stokes_from_four(1.0, 0.5, -0.1, 0.5)
    clamped = stokes_from_four(1.0, 2.0, 0.0, 0.0, strict=False)
    assert clamped.is_realizable()
    assert math.hypot(clamped.s1, clamped.s2) == pytest.approx(clamped.s0)


def test_filter_round_trip(rng):
    for s in realizable_samples(rng, 100):
        sv = StokesVector.from_array(s)
        readings = [filter_intensity(sv, a) for a in FILTERS]
        back = stokes_from_four(*readings)
        assert np.allclose(back.as_array(), s, atol=1e-12)


def test_array_filter_round_trip(rng):
    s = realizable_samples(rng, 64).reshape(8, 8, 4)
    readings = filter_images(s)
    back = stokes_from_four_array(*np.moveaxis(readings, -1, 0))
    assert np.allclose(back, s, atol=1e-12)


def test_dolp_aolp_examples():
    assert dolp(StokesVector(2.0, 1.0, 0.0)) == pytest.approx(0.5)
    assert aolp(StokesVector(2.0, 1.0, 0.0)) == 0.0
    assert dolp(StokesVector(1.0, 0.0, 0.0)) == 0.0
    assert aolp(StokesVector(1.0, 0.0, 0.0)) == 0.0
    assert dolp(StokesVector(1.0, 0.0, 1.0)) == pytest.approx(1.0)
    assert aolp(StokesVector(1.0, 0.0, 1.0)) == pytest.approx(math.pi / 4)
    # (-pi/2, pi/2]: vertical polarization maps to +pi/2
    assert aolp(StokesVector(1.0, -1.0, 0.0)) == pytest.approx(math.pi / 2)
    with pytest.raises(PolarizationError, match="zero-radiance Stokes"):
        dolp(StokesVector(0.0, 0.0, 0.0))
    with pytest.raises(PolarizationError, match="zero-radiance Stokes"):
        aolp(StokesVector(-1.0, 0.0, 0.0))


def test_rotator(rng):
    assert np.array_equal(rotator(0.0).m, np.eye(4))
    out = rotator(math.pi / 2) @ StokesVector(1.0, 1.0, 0.0)
    assert out.as_array() == pytest.approx([1.0, -1.0, 0.0, 0.0], abs=1e-15)
    for a, b in rng.uniform(-math.pi, math.pi, size=(50, 2)):
        assert np.allclose((rotator(a) @ rotator(b)).m, rotator(a + b).m, atol=1e-12)


def test_rotate_stokes_array_matches_rotator(rng):
    s = realizable_samples(rng, 20)
    phi = rng.uniform(-math.pi, math.pi, 20)
    rotated = rotate_stokes_array(s, phi)
    for k in range(20):
        assert np.allclose(rotated[k], rotator(phi[k]).m @ s[k], atol=1e-14)


def test_reflection_mueller():
    m = reflection_mueller(1.5, 0.0).m
    assert m[0, 0] == pytest.approx(0.04, abs=1e-12)
    assert m[0, 1] == pytest.approx(0.0, abs=1e-15)
    brewster = reflection_mueller(1.5, math.atan(1.5)) @ StokesVector(1.0, 0.0, 0.0)
    assert dolp(brewster) == pytest.approx(1.0, abs=1e-9)
    assert reflection_mueller(1.5, 0.5).m[3, 3] < 0.0
    assert reflection_mueller(1.5, 1.2).m[3, 3] > 0.0


def test_transmission_mueller():
    for theta in (0.0, 0.4, 1.3):
        assert np.allclose(transmission_mueller(1.0, theta).m, np.eye(4), atol=1e-15)
    m = transmission_mueller(1.5, 0.0).m
    assert m[0, 0] == pytest.approx(0.96, abs=1e-12)
    assert m[0, 1] == pytest.approx(0.0, abs=1e-15)


def test_unpolarized_input_gives_scalar_fresnel():
    for theta in np.linspace(0.0, 1.5, 16):
        rs, rp = fresnel_rs_rp(1.5, float(theta))
        _, _, t_unpol = transmittances(1.5, float(theta))
        reflected = reflection_mueller(1.5, float(theta)) @ StokesVector(1.0, 0.0, 0.0)
        transmitted = transmission_mueller(1.5, float(theta)) @ StokesVector(1.0, 0.0, 0.0)
        assert abs(reflected.s0 - 0.5 * (rs + rp)) <= 1e-15
        assert abs(transmitted.s0 - t_unpol) <= 1e-15


def test_depolarizer():
    assert (depolarizer(1.0) @ StokesVector(1.0, 1.0, 1.0)).as_array() == pytest.approx([1.0, 0.0, 0.0, 0.0])
    assert np.array_equal((depolarizer(0.0) @ StokesVector(1.0, 0.5, 0.0)).as_array(), np.zeros(4))
    with pytest.raises(PolarizationError):
        depolarizer(-0.1)


@pytest.mark.parametrize("family", ["reflection", "transmission", "rotator", "depolarizer"])
def test_matrices_preserve_realizability(rng, family):
    s = realizable_samples(rng, 10_000)
    for theta in (0.1, 0.7, math.atan(1.5), 1.4):
        matrix = {
            "reflection": lambda: reflection_mueller(1.5, theta),
            "transmission": lambda: transmission_mueller(1.5, theta),
            "rotator": lambda: rotator(theta),
            "depolarizer": lambda: depolarizer(theta),
        }[family]().m
        out = s @ matrix.T
        assert np.all(out[:, 0] >= -1e-12)
        assert np.all(np.hypot(out[:, 1], out[:, 2]) <= out[:, 0] * (1 + 1e-9) + 1e-12)


def test_clamp_realizable():
    s = clamp_realizable(np.array([[1.0, 3.0, 4.0, 0.0], [-1.0, 0.1, 0.0, 0.0]]))
    assert s[0] == pytest.approx([1.0, 0.6, 0.8, 0.0])
    assert s[1] == pytest.approx([0.0, 0.0, 0.0, 0.0])
