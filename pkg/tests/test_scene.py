# File: tests/test_scene.py

import json
import math
import os

import numpy as np
import pytest

from microgeometry.quadrature import build_rule
from models.baselines import BaselineParams
from models.brdf import FmbrdfParams, LightSource, eval_total
from optics.geometry import Direction
from optics.polarization import dolp, dolp_array
from services.scene_service import (
    Curve,
    PolarimetricImage,
    SceneService,
    SceneSpec,
    bin_samples,
    camera_basis,
    curve_rmse,
    dolp_curve,
    intensity_curve,
    read_image,
    render,
    scene_normals,
    write_image,
    write_manifest,
)
from utils.errors import ConfigError, EvaluationError, ParameterError
from utils.pfm import write_pfm

PARAMS = FmbrdfParams(mu=1.5, ks=0.3, rk=2.0, alpha=0.3, beta=2.0, kappa=5.0)
LIGHT = LightSource(Direction.from_angles(math.radians(40.0), 0.5))


def small_spec(**changes):
    base = dict(width=12, height=12, light=LIGHT, params=PARAMS, rule=(8, 16))
    base.update(changes)
    return SceneSpec(**base)


def test_spec_validation():
    with pytest.raises(ParameterError):
        small_spec(width=4)
    with pytest.raises(ParameterError):
        small_spec(shape="cube")
    with pytest.raises(ParameterError):
        small_spec(model="lambertian")
    with pytest.raises(ParameterError):
        small_spec(noise_sigma=-1.0)
    spec = small_spec(model="lambertian", baseline=BaselineParams("lambertian"))
    assert spec.describe()["baseline"]["variant"] == "lambertian"


def test_camera_basis_orthonormal():
    for V in (Direction(0.0, 0.0, 1.0), Direction.from_angles(0.7, 1.0), Direction(0.0, 1.0, 0.0)):
        right, up, w = camera_basis(V)
        m = np.stack([right, up, w])
        assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
        assert np.allclose(np.cross(right, up), w, atol=1e-12)


def test_sphere_normals_face_the_camera():
    spec = small_spec(V=Direction.from_angles(0.3, 0.2))
    normals, inside = scene_normals(spec)
    assert inside.sum() > 0 and not inside[0, 0]
    n = normals[inside]
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)
    assert np.all(n @ spec.V.as_array() > 0.0)
    # the top row of the image looks at the upper half of the sphere
    right, up, _ = camera_basis(spec.V)
    assert normals[1][inside[1]].mean(axis=0) @ up > 0.5


def test_render_masks_and_zeroes():
    img = render(small_spec())
    V = img.V
    valid = img.normals[img.mask]
    assert img.mask.any()
    assert np.all(valid @ V >= 0.1)
    assert np.all(valid @ img.L > 0.0)
    assert np.all(img.stokes[~img.mask] == 0.0)
    s = img.stokes[img.mask]
    assert np.all(s[:, 0] >= 0.0) and s[:, 0].sum() > 0.0
    assert np.all(np.hypot(s[:, 1], s[:, 2]) <= s[:, 0] * (1.0 + 1e-9))
    assert "scene_hash" in img.metadata


def test_zero_albedo_renders_black():
    img = render(small_spec(params=PARAMS.with_values(ks=0.0)))
    assert np.all(img.stokes == 0.0)


def test_render_is_deterministic():
    first = render(small_spec())
    second = render(small_spec())
    assert np.array_equal(first.stokes, second.stokes)
    assert first.metadata == second.metadata
    noisy = render(small_spec(noise_sigma=0.01, seed=3))
    again = render(small_spec(noise_sigma=0.01, seed=3))
    other = render(small_spec(noise_sigma=0.01, seed=4))
    assert np.array_equal(noisy.stokes, again.stokes)
    assert not np.array_equal(noisy.stokes, other.stokes)
    assert noisy.metadata["scene_hash"] != first.metadata["scene_hash"]


def test_noisy_render_stays_realizable():
    img = render(small_spec(noise_sigma=0.05, seed=1))
    s = img.stokes[img.mask]
    assert np.all(s[:, 0] >= 0.0)
    assert np.all(np.hypot(s[:, 1], s[:, 2]) <= s[:, 0] * (1.0 + 1e-9) + 1e-15)


def test_center_pixel_matches_point_evaluation():
    img = render(small_spec(width=9, height=9))
    assert np.allclose(img.normals[4, 4], img.V)
    _, stokes = eval_total(PARAMS, Direction(0.0, 0.0, 1.0), Direction(0.0, 0.0, 1.0), LIGHT, rule=build_rule(8, 16))
    assert img.stokes[4, 4, 0] == pytest.approx(stokes.s0, rel=1e-9)
    assert dolp_array(img.stokes[4, 4]) == pytest.approx(dolp(stokes), rel=1e-9, abs=1e-12)


def test_plane_curve_bins_reproduce_point_evaluation():
    V = Direction.from_angles(math.radians(30.0), math.pi)
    img = render(small_spec(shape="plane", V=V, width=8, height=8))
    assert img.mask.all()
    curve = dolp_curve(img)
    rows = curve.rows()
    assert len(rows) == 1
    _, stokes = eval_total(PARAMS, Direction(0.0, 0.0, 1.0), V, LIGHT, rule=build_rule(8, 16))
    angle, value, count = rows[0]
    assert count == 64
    assert abs(angle - 30.0) <= 90.0 / 64
    assert value == pytest.approx(dolp(stokes), rel=1e-9)


def test_curves_of_a_sphere():
    img = render(small_spec())
    d = dolp_curve(img)
    i = intensity_curve(img)
    assert d.bin_counts.sum() == img.mask.sum() == i.bin_counts.sum()
    # limb pixels below the N.V threshold never reach the last bins
    assert np.all(d.angles_deg <= math.degrees(math.acos(0.1)) + 1e-9)
    assert curve_rmse(d, d) == 0.0


def test_constant_dolp_gives_flat_curve(rng):
    n = rng.normal(size=(10, 10, 3))
    n[..., 2] = np.abs(n[..., 2]) + 0.5
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    stokes = np.zeros((10, 10, 4))
    stokes[..., 0] = rng.uniform(0.5, 2.0, size=(10, 10))
    stokes[..., 1] = 0.3 * stokes[..., 0]
    img = PolarimetricImage(stokes=stokes, normals=n, mask=np.ones((10, 10), bool),
                            L=np.array([0.0, 0.0, 1.0]), V=np.array([0.0, 0.0, 1.0]))
    curve = dolp_curve(img)
    assert np.allclose(curve.bin_values[curve.bin_counts > 0], 0.3, rtol=1e-12)


def test_empty_mask_has_no_curves():
    img = PolarimetricImage(stokes=np.zeros((8, 8, 4)), normals=np.zeros((8, 8, 3)), mask=np.zeros((8, 8), bool),
                            L=np.array([0.0, 0.0, 1.0]), V=np.array([0.0, 0.0, 1.0]))
    with pytest.raises(EvaluationError, match="no valid pixels"):
        dolp_curve(img)
    with pytest.raises(EvaluationError, match="no valid pixels"):
        intensity_curve(img)
    with pytest.raises(ConfigError):
        PolarimetricImage(stokes=np.zeros((8, 9, 4)), normals=np.zeros((8, 8, 3)), mask=np.zeros((8, 8), bool),
                          L=np.zeros(3), V=np.zeros(3))


def test_bin_samples_and_csv(tmp_path):
    curve = bin_samples(np.array([0.1, 0.5, 45.0, 89.99, 90.0]), np.array([1.0, 3.0, 5.0, 7.0, 9.0]))
    assert curve.bin_values[0] == pytest.approx(2.0)
    assert curve.bin_counts[-1] == 2
    path = curve.write_csv(str(tmp_path / "curve.csv"))
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines[0] == "angle_deg,value,count"
    assert len(lines) == 1 + int((curve.bin_counts > 0).sum())
    other = Curve(curve.angles_deg, curve.values, curve.bin_centers, curve.bin_values + 1.0, curve.bin_counts)
    assert curve_rmse(other, curve) == pytest.approx(1.0)


def test_image_files_round_trip(tmp_path):
    img = render(small_spec())
    paths = write_image(img, str(tmp_path), "sphere")
    for suffix in ("s0.pfm", "s1.pfm", "s2.pfm", "normal.pfm", "mask.pfm", "scene.json", "intensity.png", "dolp.png", "aolp.png"):
        path = tmp_path / f"sphere.{suffix}"
        assert str(path) in paths and path.stat().st_size > 0
    back = read_image(str(tmp_path), "sphere")
    assert np.array_equal(back.mask, img.mask)
    assert np.allclose(back.stokes[..., :3], img.stokes[..., :3], rtol=1e-6, atol=1e-12)
    assert np.allclose(back.L, img.L) and np.allclose(back.V, img.V)
    assert back.metadata["scene_hash"] == img.metadata["scene_hash"]


def test_mismatched_image_files_rejected(tmp_path):
    write_image(render(small_spec()), str(tmp_path), "sphere", previews=False)
    write_pfm(str(tmp_path / "sphere.s1.pfm"), np.zeros((12, 13)))
    with pytest.raises(ConfigError, match="mismatched image dimensions"):
        read_image(str(tmp_path), "sphere")


def test_manifest_is_reproducible(tmp_path):
    manifests = []
    for run in ("a", "b"):
        out = tmp_path / run
        paths = write_image(render(small_spec()), str(out), "sphere")
        manifest = write_manifest(str(out), {"model": "fmbrdf", "seed": 0}, paths, extra={"command": "render"})
        manifests.append(json.loads(open(manifest, encoding="utf-8").read()))
    assert manifests[0] == manifests[1]
    assert manifests[0]["command"] == "render"
    assert "sphere.s0.pfm" in manifests[0]["files"]
    assert os.path.basename(manifest) == "manifest.json"


def test_scene_service_uses_settings(tmp_path):
    class Settings:
        FMBRDF_THREADS = 2
        FMBRDF_CACHE_DIR = str(tmp_path / "cache")

    img = SceneService(Settings()).render(small_spec())
    assert np.allclose(img.stokes, render(small_spec()).stokes, rtol=1e-12, atol=1e-15)
    assert img.metadata["model"] == "fmbrdf"
