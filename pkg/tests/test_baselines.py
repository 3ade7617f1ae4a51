# File: tests/test_baselines.py

import math

import numpy as np
import pytest

from models.baselines import (
    BaselineParams,
    baseline_stokes_batch,
    lambertian,
    oren_nayar,
    pbrdf_flat,
    single_facet_body,
    torrance_sparrow,
)
from models.brdf import FmbrdfParams, flat_diffuse_stokes, surface_radiance
from optics.fresnel import transmittances
from optics.geometry import Direction, ShadingGeometry
from optics.polarization import dolp_array
from services.scene_service import planar_sweep
from utils.errors import ParameterError

Z = Direction(0.0, 0.0, 1.0)
UNPOLARIZED = np.array([1.0, 0.0, 0.0, 0.0])


def test_baseline_params_validation():
    with pytest.raises(ParameterError):
        BaselineParams("phong")
    with pytest.raises(ParameterError):
        BaselineParams("lambertian", albedo=-0.1)
    with pytest.raises(ParameterError):
        BaselineParams("torrance_sparrow", sigma=0.0)
    with pytest.raises(ParameterError):
        BaselineParams("pbrdf_flat", mu=0.5)
    assert BaselineParams("oren_nayar", sigma=0.0).sigma == 0.0


def test_lambertian(rng):
    assert lambertian(0.6, Z, Z, 2.0) == pytest.approx(0.6 * 2.0 / math.pi)
    assert lambertian(0.6, Z, Direction(1.0, 0.0, 0.0), 1.0) == 0.0
    L = Direction.from_angles(0.7, 0.2)
    params = BaselineParams("lambertian", albedo=0.6)
    V = rng.normal(size=(100, 3))
    V[:, 2] = np.abs(V[:, 2]) + 0.05
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    out = baseline_stokes_batch(params, Z.as_array(), L.as_array(), V, UNPOLARIZED)
    assert np.allclose(out[:, 0], lambertian(0.6, Z, L, 1.0), rtol=1e-14)
    assert np.all(out[:, 1:] == 0.0)


def test_oren_nayar():
    L = Direction.from_angles(math.radians(45.0), 0.0)
    V = Direction.from_angles(math.radians(30.0), 1.0)
    assert oren_nayar(0.5, 0.0, Z, L, V, 1.0) == pytest.approx(lambertian(0.5, Z, L, 1.0), rel=1e-14)
    s2 = 0.25
    a = 1.0 - 0.5 * s2 / (s2 + 0.33)
    assert oren_nayar(0.5, 0.5, Z, Z, Z, 1.0) == pytest.approx(a * 0.5 / math.pi, rel=1e-14)
    mirrored = Direction.from_angles(math.radians(45.0), math.pi)
    assert oren_nayar(0.5, 0.5, Z, L, L, 1.0) > oren_nayar(0.5, 0.5, Z, L, mirrored, 1.0)
    assert oren_nayar(0.5, 0.5, Z, Direction(1.0, 0.0, 0.0), V, 1.0) == 0.0


def test_torrance_sparrow_shares_surface_term():
    L = Direction.from_angles(0.6, 0.0)
    V = Direction.from_angles(0.4, 2.8)
    geom = ShadingGeometry.from_directions(Z, L, V)
    fm = FmbrdfParams(mu=1.4, ks=0.2, rk=1.0, alpha=0.25, beta=2.0, kappa=0.0)
    assert torrance_sparrow(0.2, 0.25, 1.4, geom, 1.0) == pytest.approx(surface_radiance(fm, geom, 1.0), rel=1e-12)
    swapped = ShadingGeometry.from_directions(Z, V, L)
    forward = torrance_sparrow(0.2, 0.25, 1.4, geom, 1.0) / geom.cos_nl
    backward = torrance_sparrow(0.2, 0.25, 1.4, swapped, 1.0) / swapped.cos_nl
    assert forward == pytest.approx(backward, rel=1e-9)


def test_pbrdf_flat_intensity_chain():
    params = BaselineParams("pbrdf_flat", albedo=0.4, sigma=0.3, ks=0.2, mu=1.5)
    L = Direction.from_angles(0.5, 0.0)
    V = Direction.from_angles(0.9, 2.0)
    geom = ShadingGeometry.from_directions(Z, L, V)
    out = pbrdf_flat(params, geom)
    diffuse = transmittances(1.5, 0.9)[2] * 0.4 / math.pi * transmittances(1.5, 0.5)[2] * math.cos(0.5)
    assert out.s0 == pytest.approx(diffuse + torrance_sparrow(0.2, 0.3, 1.5, geom, 1.0), rel=1e-12)
    batch = baseline_stokes_batch(params, Z.as_array(), L.as_array(), V.as_array(), UNPOLARIZED)
    assert batch[0] == pytest.approx(out.as_array(), rel=1e-12)


def test_flat_diffuse_polarization_grows_with_view_angle():
    L = Direction.from_angles(0.4, 0.0).as_array()
    angles = np.radians(np.arange(0.0, 85.0, 5.0))
    V = np.stack([np.sin(angles), np.zeros_like(angles), np.cos(angles)], axis=-1)
    out = flat_diffuse_stokes(1.5, 0.5, Z.as_array(), L, V, UNPOLARIZED)
    rho = dolp_array(out)
    assert rho[0] == pytest.approx(0.0, abs=1e-15)
    assert np.all(np.diff(rho) > 0.0)


def test_lambertian_ts_adds_diffuse():
    params = BaselineParams("lambertian_ts", albedo=0.4, sigma=0.3, ks=0.2, mu=1.5)
    L = Direction.from_angles(0.5, 0.0)
    V = Direction.from_angles(0.9, 2.0)
    out = baseline_stokes_batch(params, Z.as_array(), L.as_array(), V.as_array(), UNPOLARIZED)[0]
    specular = baseline_stokes_batch(BaselineParams("torrance_sparrow", sigma=0.3, ks=0.2, mu=1.5),
                                     Z.as_array(), L.as_array(), V.as_array(), UNPOLARIZED)[0]
    assert out[0] == pytest.approx(specular[0] + lambertian(0.4, Z, L, 1.0), rel=1e-12)
    assert out[1:] == pytest.approx(specular[1:], rel=1e-12)


def test_planar_sweeps():
    angles, flat = planar_sweep(BaselineParams("lambertian", albedo=0.5), "lambertian", angles_deg=range(-60, 61, 20))
    assert np.allclose(flat, flat[0], rtol=1e-14)
    angles, rough = planar_sweep(BaselineParams("oren_nayar", albedo=0.5, sigma=0.4), "oren_nayar",
                                 angles_deg=(-45.0, 45.0), light_deg=45.0)
    # the light sits at +45 degrees, so the retro-reflective side is brighter
    assert rough[1] > rough[0]
    with pytest.raises(ParameterError):
        planar_sweep(BaselineParams("lambertian"), "lambertian", angles_deg=(90.0,))


def test_single_facet_body_properties():
    L = Direction.from_angles(0.5, 0.0)
    V = Direction.from_angles(0.6, 2.0)
    base = single_facet_body(1.2, 0.5, 0.3, 2.0, Z, L, V, 1.0)
    assert base > 0.0
    assert single_facet_body(1.2, 1.0, 0.3, 2.0, Z, L, V, 2.0) == pytest.approx(4.0 * base, rel=1e-12)


@pytest.mark.slow
def test_large_concentration_matches_single_facet_oracle():
    params = FmbrdfParams(mu=1.0, ks=0.5, rk=1.0, alpha=0.3, beta=2.0, kappa=200.0)
    angles, sweep = planar_sweep(params, "fmbrdf", angles_deg=range(-75, 76, 15), light_deg=30.0,
                                 rule=(32, 64), normalization="discrete")
    L = Direction.from_angles(math.radians(30.0), 0.0)
    oracle = []
    for angle in angles:
        t = math.radians(angle)
        V = Direction(math.sin(t), 0.0, math.cos(t))
        oracle.append(single_facet_body(1.0, params.kb, 0.3, 2.0, Z, L, V, 1.0))
    oracle = np.array(oracle)
    rms = math.sqrt(float(np.mean((sweep - oracle) ** 2)))
    assert rms <= 0.03 * float(np.max(oracle))
