# File: tests/test_brdf.py

import math

import numpy as np
import pytest
from scipy.integrate import quad

from microgeometry.microfacet import get_ndf
from microgeometry.quadrature import build_rule, local_basis
from models.brdf import (
    FmbrdfModel,
    FmbrdfParams,
    LightSource,
    body_albedo,
    body_radiance,
    body_stokes,
    eval_total,
    flat_diffuse_stokes,
    surface_radiance,
    surface_stokes,
)
from optics.fresnel import transmittance_from_cos, transmittances
from optics.geometry import Direction, ShadingGeometry, make_frames
from optics.polarization import StokesVector, dolp_array
from utils.errors import EvaluationError, GeometryError, ParameterError

Z = Direction(0.0, 0.0, 1.0)
UNPOLARIZED = np.array([1.0, 0.0, 0.0, 0.0])
PARAMS = FmbrdfParams(mu=1.5, ks=0.3, rk=2.0, alpha=0.3, beta=2.0, kappa=5.0)


def configurations(rng, count, min_cos=0.05):
    """(N, L, V) rows with both directions safely above the horizon of N."""
    rows = []
    while len(rows) < count:
        n, l, v = rng.normal(size=(3, 3))
        n, l, v = (a / np.linalg.norm(a) for a in (n, l, v))
        if n @ l > min_cos and n @ v > min_cos:
            rows.append((n, l, v))
    return tuple(np.array(a) for a in zip(*rows))


def reference_body_s0(p, N, L, V, rule):
    """Body radiance for unit unpolarized irradiance by explicit double sums over the rule."""
    ndf = get_ndf(p.alpha, p.beta)
    nodes = rule.oriented(local_basis(N, L, V))
    density = ndf.eval(np.arccos(np.clip(rule.cos_theta, -1.0, 1.0)))
    mass = density * rule.weights
    log_z = [math.log(sum(mass[k] * math.exp(p.kappa * (nodes[k] @ nodes[j] - 1.0)) for k in range(rule.size)))
             for j in range(rule.size)]
    total = 0.0
    for k in range(rule.size):
        cos_v = nodes[k] @ V
        if cos_v <= 0.0:
            continue
        t_out = transmittances(p.mu, math.acos(min(1.0, cos_v)))[2]
        for j in range(rule.size):
            cos_l = nodes[j] @ L
            if cos_l <= 0.0:
                continue
            t_in = transmittances(p.mu, math.acos(min(1.0, cos_l)))[2]
            f = math.exp(p.kappa * (nodes[k] @ nodes[j] - 1.0) - log_z[j])
            total += mass[k] * cos_v * t_out * f * mass[j] * cos_l * t_in
    g1 = lambda c: 1.0 / (1.0 + ndf.smith_table(math.acos(min(1.0, c))))
    return p.kb / math.pi * g1(N @ V) * g1(N @ L) * total / (N @ V)


def test_params_validation():
    assert PARAMS.kb == pytest.approx(0.6)
    assert FmbrdfParams.from_array(PARAMS.as_array()) == PARAMS
    assert PARAMS.with_values(kappa=0.0).kappa == 0.0
    assert set(PARAMS.as_dict()) == set(FmbrdfParams.NAMES)
    for bad in ({"mu": 0.9}, {"ks": -0.1}, {"alpha": 0.0}, {"kappa": -1.0}, {"beta": float("nan")}):
        with pytest.raises(ParameterError):
            PARAMS.with_values(**bad)


def test_light_source():
    light = LightSource(Z, E0=2.0)
    assert light.stokes_in == StokesVector(2.0, 0.0, 0.0, 0.0)
    assert light.is_unpolarized
    with pytest.raises(ParameterError):
        LightSource(Z, E0=-1.0)
    with pytest.raises(ParameterError):
        LightSource(Z, stokes_in=StokesVector(1.0, 1.0, 1.0))


def test_surface_at_normal_incidence():
    geom = ShadingGeometry.from_directions(Z, Z, Z)
    ndf = get_ndf(0.3, 2.0)
    expected = 0.3 * 0.04 * ndf.norm_c / 4.0 * 2.0
    assert surface_radiance(PARAMS, geom, 2.0) == pytest.approx(expected, rel=1e-9)
    assert surface_radiance(PARAMS.with_values(ks=0.0), geom, 2.0) == 0.0


def test_surface_s0_consistency_and_reciprocity(rng):
    N, L, V = configurations(rng, 200)
    model = FmbrdfModel(PARAMS, build_rule(8, 16))
    radiance = model.surface_radiance_batch(N, L, V, 1.0)
    stokes = model.surface_stokes_batch(N, L, V, UNPOLARIZED)
    assert np.max(np.abs(stokes[:, 0] - radiance)) <= 1e-12
    swapped = model.surface_radiance_batch(N, V, L, 1.0)
    cos_l = np.sum(N * L, axis=1)
    cos_v = np.sum(N * V, axis=1)
    assert np.allclose(radiance / cos_l, swapped / cos_v, rtol=1e-9, atol=0.0)


def test_surface_stokes_realizable(rng):
    N = np.tile([0.0, 0.0, 1.0], (10_000, 1))
    L = rng.normal(size=(10_000, 3))
    V = rng.normal(size=(10_000, 3))
    L[:, 2] = np.abs(L[:, 2]) + 0.1
    V[:, 2] = np.abs(V[:, 2]) + 0.1
    L /= np.linalg.norm(L, axis=1, keepdims=True)
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    s_in = StokesVector(1.0, 0.3, -0.5).as_array()
    out = FmbrdfModel(PARAMS, build_rule(8, 16)).surface_stokes_batch(N, L, V, s_in)
    assert np.all(out[:, 0] >= 0.0)
    assert np.all(np.hypot(out[:, 1], out[:, 2]) <= out[:, 0] * (1.0 + 1e-9) + 1e-15)


def test_brewster_surface_is_fully_polarized():
    b = math.atan(1.5)
    L = Direction(math.sin(b), 0.0, math.cos(b))
    V = Direction(-math.sin(b), 0.0, math.cos(b))
    out = surface_stokes(PARAMS, ShadingGeometry.from_directions(Z, L, V))
    assert dolp_array(out.as_array()) == pytest.approx(1.0, abs=1e-9)


def test_surface_stokes_checks_frames():
    L = Direction.from_angles(0.5, 0.0)
    V = Direction.from_angles(0.5, 2.0)
    geom = ShadingGeometry.from_directions(Z, L, V)
    surface_stokes(PARAMS, geom, frames=make_frames(Z, L, V))
    with pytest.raises(GeometryError):
        surface_stokes(PARAMS, geom, frames=make_frames(Z, V, L))
    with pytest.raises(GeometryError, match="below-horizon direction"):
        surface_radiance(PARAMS, ShadingGeometry.from_directions(Z, Direction(1.0, 0.0, 0.0), V), 1.0)


@pytest.mark.parametrize("kappa", [0.0, 3.0])
def test_body_matches_explicit_double_sum(kappa):
    p = PARAMS.with_values(kappa=kappa)
    rule = build_rule(4, 8)
    model = FmbrdfModel(p, rule, normalization="discrete")
    N = np.array([0.0, 0.0, 1.0])
    L = Direction.from_angles(0.6, 0.2).as_array()
    V = Direction.from_angles(0.9, 2.4).as_array()
    got = model.body_stokes_batch(N, L, V, UNPOLARIZED)[0, 0]
    assert got == pytest.approx(reference_body_s0(p, N, L, V, rule), rel=1e-10)


def test_body_s0_consistency(rng):
    N, L, V = configurations(rng, 20)
    rule = build_rule(8, 16)
    model = FmbrdfModel(PARAMS, rule)
    stokes = model.body_stokes_batch(N, L, V, UNPOLARIZED)
    for k in range(3):
        value = body_radiance(PARAMS, Direction.from_vector(N[k]), Direction.from_vector(L[k]),
                              Direction.from_vector(V[k]), 1.0, rule=rule)
        assert abs(value - stokes[k, 0]) <= 1e-12
    assert np.all(stokes[:, 0] > 0.0)
    assert np.all(np.hypot(stokes[:, 1], stokes[:, 2]) <= stokes[:, 0] * (1.0 + 1e-9))


def test_body_dolp_bounded_by_transmission(rng):
    N, L, V = configurations(rng, 10)
    rule = build_rule(8, 16)
    out = FmbrdfModel(PARAMS, rule).body_stokes_batch(N, L, V, UNPOLARIZED)
    for k in range(10):
        nodes = rule.oriented(local_basis(N[k], L[k], V[k]))
        cos_vn = nodes @ V[k]
        t_plus, t_minus = transmittance_from_cos(1.5, cos_vn[cos_vn > 0.0])
        bound = np.max(np.abs(t_minus) / t_plus)
        assert dolp_array(out[k]) <= bound + 1e-12


def test_body_reciprocity_without_correlation(rng):
    p = PARAMS.with_values(kappa=0.0)
    model = FmbrdfModel(p, build_rule(8, 16))
    N, L, V = configurations(rng, 50)
    forward = model.body_stokes_batch(N, L, V, UNPOLARIZED)[:, 0]
    backward = model.body_stokes_batch(N, V, L, UNPOLARIZED)[:, 0]
    cos_l = np.sum(N * L, axis=1)
    cos_v = np.sum(N * V, axis=1)
    assert np.allclose(forward / cos_l, backward / cos_v, rtol=1e-6, atol=0.0)


@pytest.mark.parametrize("normalization", ["table", "discrete"])
def test_body_reciprocity_gap_with_correlation(rng, normalization):
    # c(theta_ni) weights the two directions differently once kappa > 0
    model = FmbrdfModel(PARAMS, build_rule(16, 32), normalization=normalization)
    N, L, V = configurations(rng, 30, min_cos=0.2)
    forward = model.body_stokes_batch(N, L, V, UNPOLARIZED)[:, 0] / np.sum(N * L, axis=1)
    backward = model.body_stokes_batch(N, V, L, UNPOLARIZED)[:, 0] / np.sum(N * V, axis=1)
    gap = np.abs(forward - backward) / np.maximum(forward, backward)
    assert np.all(forward > 0.0)
    assert 1e-5 < gap.max() < 0.05


def test_separable_limit():
    p = FmbrdfParams(mu=1.0, ks=0.5, rk=0.8, alpha=0.3, beta=2.0, kappa=0.0)
    value = body_radiance(p, Z, Z, Z, 1.5, rule=build_rule(16, 32))
    ndf = get_ndf(0.3, 2.0)
    hemisphere, _ = quad(lambda t: ndf.scalar(t) * math.sin(t), 0.0, 0.5 * math.pi, epsabs=1e-14)
    expected = p.kb / math.pi * 1.5 / (2.0 * math.pi * hemisphere)
    assert value == pytest.approx(expected, rel=1e-4)


def test_zero_body_albedo_and_zero_light():
    model = FmbrdfModel(PARAMS.with_values(rk=0.0), build_rule(8, 16))
    N = np.array([0.0, 0.0, 1.0])
    L = Direction.from_angles(0.4, 0.0).as_array()
    V = Direction.from_angles(0.7, 1.0).as_array()
    assert np.array_equal(model.body_stokes_batch(N, L, V, UNPOLARIZED), np.zeros((1, 4)))
    light = LightSource(Direction.from_vector(L), E0=0.0)
    radiance, stokes = eval_total(PARAMS, Z, Direction.from_vector(V), light, rule=build_rule(8, 16))
    assert radiance == 0.0
    assert stokes.as_array() == pytest.approx(np.zeros(4), abs=0.0)


def test_eval_total_sums_parts():
    rule = build_rule(8, 16)
    L = Direction.from_angles(0.5, 0.3)
    V = Direction.from_angles(0.8, 2.0)
    radiance, stokes = eval_total(PARAMS, Z, V, LightSource(L, E0=2.0), rule=rule)
    geom = ShadingGeometry.from_directions(Z, L, V)
    surface = surface_stokes(PARAMS, geom, rule=rule).scaled(2.0)
    body = body_stokes(PARAMS, Z, L, V, rule=rule).scaled(2.0)
    assert stokes.as_array() == pytest.approx((surface + body).as_array(), rel=1e-12)
    assert radiance == stokes.s0
    with pytest.raises(EvaluationError):
        eval_total(PARAMS, Z, V, LightSource(L), mode="surrogate")
    with pytest.raises(EvaluationError):
        eval_total(PARAMS, Z, V, LightSource(L), mode="nearest")


def test_body_albedo_energy_bound():
    for p in (PARAMS, PARAMS.with_values(alpha=0.8, beta=1.0, kappa=0.0), PARAMS.with_values(mu=2.5, kappa=20.0)):
        for theta in (0.0, 0.6, 1.2):
            albedo = body_albedo(p, Z, Direction.from_angles(theta, 0.4), rule=build_rule(8, 16))
            assert 0.0 < albedo <= p.kb
    with pytest.raises(GeometryError):
        body_albedo(PARAMS, Z, Direction(1.0, 0.0, 0.0))


def test_mirror_limit_uses_flat_interface():
    p = PARAMS.with_values(alpha=1e-5)
    model = FmbrdfModel(p, build_rule(8, 16))
    N = np.array([0.0, 0.0, 1.0])
    L = Direction.from_angles(0.5, 0.0).as_array()
    V = Direction.from_angles(0.7, 2.0).as_array()
    assert np.array_equal(model.body_stokes_batch(N, L, V, UNPOLARIZED), flat_diffuse_stokes(1.5, p.kb, N, L, V, UNPOLARIZED))
    assert np.all(model.surface_stokes_batch(N, L, V, UNPOLARIZED) == 0.0)


def test_highlight_dolp_decreases_with_body_albedo():
    L = Direction.from_angles(math.radians(60.0), 0.0).as_array()
    V = Direction.from_angles(math.radians(60.0), math.pi).as_array()
    N = np.array([0.0, 0.0, 1.0])
    rule = build_rule(16, 32)
    values = []
    for rk in (0.25, 0.5, 1.0, 2.0):
        out = FmbrdfModel(PARAMS.with_values(rk=rk), rule).total_stokes_batch(N, L, V, UNPOLARIZED)
        values.append(float(dolp_array(out[0])))
    assert all(a > b for a, b in zip(values, values[1:]))


def test_body_dolp_grows_with_concentration():
    N = np.array([0.0, 0.0, 1.0])
    V = Direction.from_angles(math.radians(60.0), 0.0).as_array()
    rule = build_rule(16, 32)
    values = []
    for kappa in (0.0, 10.0, 100.0):
        p = PARAMS.with_values(alpha=0.4, kappa=kappa)
        out = FmbrdfModel(p, rule, normalization="discrete").body_stokes_batch(N, N, V, UNPOLARIZED)
        values.append(float(dolp_array(out[0])))
    assert values[0] < values[1] < values[2]


def test_unknown_model_options():
    with pytest.raises(ParameterError):
        FmbrdfModel(PARAMS, build_rule(8, 16), normalization="exact")
    with pytest.raises(ParameterError):
        FmbrdfModel(PARAMS, build_rule(8, 16), smith="closed_form")


def test_direct_smith_mode_agrees_with_table():
    rule = build_rule(8, 16)
    N = np.array([0.0, 0.0, 1.0])
    L = Direction.from_angles(0.5, 0.0).as_array()
    V = Direction.from_angles(1.1, 2.0).as_array()
    table = FmbrdfModel(PARAMS, rule).surface_stokes_batch(N, L, V, UNPOLARIZED)
    direct = FmbrdfModel(PARAMS, rule, smith="direct").surface_stokes_batch(N, L, V, UNPOLARIZED)
    assert np.allclose(table, direct, rtol=1e-3)


def test_threaded_chunks_match_serial(rng):
    N, L, V = configurations(rng, 40)
    rule = build_rule(8, 16)
    serial = FmbrdfModel(PARAMS, rule).body_stokes_batch(N, L, V, UNPOLARIZED)
    threaded = FmbrdfModel(PARAMS, rule, threads=4, chunk_size=7).body_stokes_batch(N, L, V, UNPOLARIZED)
    assert np.allclose(serial, threaded, rtol=1e-12, atol=1e-15)
