# File: services/scene_service.py

"""Synthetic polarimetric imaging of spheres and planes.

An orthographic camera looks along -V; pixel (0, 0) is the top-left corner.
Images are written as one PFM per Stokes channel plus a 3-channel normal map,
a mask and a JSON side file holding the light and view directions.
"""

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from models.baselines import VARIANTS, BaselineParams, baseline_stokes_batch  # noqa: E402
from models.brdf import FmbrdfParams, LightSource, get_model  # noqa: E402
from optics.geometry import Direction, angle_between  # noqa: E402
from optics.polarization import aolp_array, dolp_array, filter_images, stokes_from_four_array  # noqa: E402
from utils.errors import ConfigError, EvaluationError, ParameterError  # noqa: E402
from utils.hashing import config_hash, file_sha256  # noqa: E402
from utils.pfm import read_pfm, write_pfm  # noqa: E402

logger = logging.getLogger(__name__)

MODEL_TAGS = ("fmbrdf",) + VARIANTS
CURVE_BINS = 64
CURVE_RANGE_DEG = (0.0, 90.0)
LIGHT_HORIZON = 1e-6


@dataclass(frozen=True)
class SceneSpec:
    shape: str = "sphere"
    width: int = 64
    height: int = 64
    V: Direction = Direction(0.0, 0.0, 1.0)
    light: LightSource = field(default_factory=lambda: LightSource(Direction.from_angles(math.radians(45.0), 0.0)))
    model: str = "fmbrdf"
    params: FmbrdfParams = FmbrdfParams(mu=1.5, ks=0.3, rk=2.0, alpha=0.3, beta=2.0, kappa=5.0)
    baseline: Optional[BaselineParams] = None
    noise_sigma: float = 0.0
    seed: int = 0
    nv_threshold: float = 0.1
    up: Tuple[float, float, float] = (0.0, 1.0, 0.0)
    plane_normal: Direction = Direction(0.0, 0.0, 1.0)
    rule: Tuple[int, int] = (32, 64)
    normalization: str = "table"

    def __post_init__(self):
        if self.shape not in ("sphere", "plane"):
            raise ParameterError(f"unknown scene shape '{self.shape}'")
        if self.width < 8 or self.height < 8:
            raise ParameterError(f"resolution must be at least 8x8, got {self.width}x{self.height}")
        if self.model not in MODEL_TAGS:
            raise ParameterError(f"unknown model '{self.model}'")
        if self.model != "fmbrdf" and (self.baseline is None or self.baseline.variant != self.model):
            raise ParameterError(f"model '{self.model}' needs matching baseline parameters")
        if self.noise_sigma < 0.0:
            raise ParameterError("noise sigma must be >= 0")

    def describe(self) -> Dict[str, object]:
        return {
            "shape": self.shape,
            "width": self.width,
            "height": self.height,
            "V": self.V.as_array().tolist(),
            "L": self.light.L.as_array().tolist(),
            "E0": self.light.E0,
            "stokes_in": self.light.stokes_in.as_array().tolist(),
            "model": self.model,
            "params": self.params.as_dict(),
            "baseline": None if self.baseline is None else vars(self.baseline),
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "nv_threshold": self.nv_threshold,
            "up": list(self.up),
            "plane_normal": self.plane_normal.as_array().tolist(),
            "rule": list(self.rule),
            "normalization": self.normalization,
        }


@dataclass
class PolarimetricImage:
    stokes: np.ndarray
    normals: np.ndarray
    mask: np.ndarray
    L: np.ndarray
    V: np.ndarray
    E0: float = 1.0
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        h, w = self.mask.shape
        if self.stokes.shape[:2] != (h, w) or self.normals.shape[:2] != (h, w):
            raise ConfigError("mismatched image dimensions")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.mask.shape

    def intensity(self) -> np.ndarray:
        return self.stokes[..., 0]

    def dolp(self) -> np.ndarray:
        return np.where(self.mask, dolp_array(self.stokes), 0.0)

    def aolp(self) -> np.ndarray:
        return np.where(self.mask, aolp_array(self.stokes), 0.0)

    def filter_images(self) -> np.ndarray:
        return filter_images(self.stokes)

    def valid_normals(self) -> np.ndarray:
        return self.normals[self.mask]


def camera_basis(V: Direction, up=(0.0, 1.0, 0.0)) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(right, up, towards-camera) for an orthographic camera looking along -V."""
    w = V.as_array()
    up = np.asarray(up, dtype=float)
    right = np.cross(up, w)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0]), w)
    right /= np.linalg.norm(right)
    return right, np.cross(w, right), w


def scene_normals(spec: SceneSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel normals (H, W, 3) and the silhouette (H, W)."""
    cols = (np.arange(spec.width) + 0.5) / spec.width * 2.0 - 1.0
    rows = 1.0 - (np.arange(spec.height) + 0.5) / spec.height * 2.0
    x, y = np.meshgrid(cols, rows)
    if spec.shape == "plane":
        normals = np.broadcast_to(spec.plane_normal.as_array(), (spec.height, spec.width, 3)).copy()
        return normals, np.ones((spec.height, spec.width), dtype=bool)
    right, up, w = camera_basis(spec.V, spec.up)
    r2 = x * x + y * y
    inside = r2 < 1.0
    z = np.sqrt(np.clip(1.0 - r2, 0.0, 1.0))
    normals = x[..., None] * right + y[..., None] * up + z[..., None] * w
    normals[~inside] = 0.0
    return normals, inside


def evaluate_model(
    model: str,
    params: FmbrdfParams,
    baseline: Optional[BaselineParams],
    N: np.ndarray, L: np.ndarray, V: np.ndarray, s_in: np.ndarray,
    rule: Tuple[int, int] = (32, 64),
    normalization: str = "table",
    threads: int = 1,
    surrogate=None,
    cache_dir: Optional[str] = None,
) -> np.ndarray:
    """(P, 4) Stokes for any model tag; ``surrogate`` switches the FMBRDF to surrogate mode."""
    if model == "fmbrdf":
        if surrogate is not None:
            if np.any(np.asarray(s_in)[..., 1:3] != 0.0):
                raise EvaluationError("surrogate mode supports unpolarized light only")
            return surrogate.total_stokes(params, N, L, V, float(np.asarray(s_in).reshape(-1, 4)[0, 0]))
        fm = get_model(params, rule[0], rule[1], normalization, threads=threads, cache_dir=cache_dir)
        return fm.total_stokes_batch(N, L, V, s_in)
    if baseline is None or baseline.variant != model:
        raise ParameterError(f"model '{model}' needs matching baseline parameters")
    return baseline_stokes_batch(baseline, N, L, V, s_in, threads=threads)


def render(spec: SceneSpec, threads: int = 1, surrogate=None, cache_dir: Optional[str] = None) -> PolarimetricImage:
    started = time.monotonic()
    normals, inside = scene_normals(spec)
    V = spec.V.as_array()
    L = spec.light.L.as_array()
    cos_v = normals @ V
    cos_l = normals @ L
    mask = inside & (cos_v >= spec.nv_threshold) & (cos_l > LIGHT_HORIZON)
    if surrogate is not None and spec.model == "fmbrdf":
        limit = math.cos(surrogate.domain.theta_max)
        outside = mask & ((cos_v < limit) | (cos_l < limit))
        if np.any(outside):
            logger.warning(f"Dropping {int(outside.sum())} pixels outside the surrogate angular domain")
            mask &= ~outside

    stokes = np.zeros((spec.height, spec.width, 4))
    if np.any(mask):
        n_valid = normals[mask]
        values = evaluate_model(
            spec.model, spec.params, spec.baseline, n_valid, L, V, spec.light.stokes_in.as_array(),
            rule=spec.rule, normalization=spec.normalization, threads=threads, surrogate=surrogate, cache_dir=cache_dir,
        )
        finite = np.all(np.isfinite(values), axis=-1)
        if not np.all(finite):
            bad = np.flatnonzero(mask)[~finite]
            logger.warning(f"Evaluation failed at {bad.size} pixels (first pixel {int(bad[0])}); removed from the mask")
            values = np.where(finite[:, None], values, 0.0)
        stokes[mask] = values
        mask.reshape(-1)[np.flatnonzero(mask)[~finite]] = False
    else:
        logger.warning("Scene has no lit, visible pixels")

    if spec.noise_sigma > 0.0:
        rng = np.random.default_rng(spec.seed)
        readings = filter_images(stokes) + rng.normal(0.0, spec.noise_sigma, size=stokes.shape)
        readings = np.clip(readings, 0.0, None)
        stokes = stokes_from_four_array(readings[..., 0], readings[..., 1], readings[..., 2], readings[..., 3], strict=False)
    stokes[~mask] = 0.0

    image = PolarimetricImage(
        stokes=stokes, normals=normals, mask=mask, L=L, V=V, E0=spec.light.E0,
        metadata={"scene_hash": config_hash(spec.describe()), "model": spec.model},
    )
    logger.info(f"Rendered {spec.width}x{spec.height} {spec.shape} ({int(mask.sum())} valid pixels) in {time.monotonic() - started:.2f}s")
    return image


# -- curves ------------------------------------------------------------


@dataclass
class Curve:
    angles_deg: np.ndarray
    values: np.ndarray
    bin_centers: np.ndarray
    bin_values: np.ndarray
    bin_counts: np.ndarray

    def rows(self) -> List[Tuple[float, float, int]]:
        keep = self.bin_counts > 0
        return list(zip(self.bin_centers[keep].tolist(), self.bin_values[keep].tolist(), self.bin_counts[keep].tolist()))

    def write_csv(self, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("angle_deg,value,count\n")
            for angle, value, count in self.rows():
                f.write(f"{angle:.6f},{value:.9g},{count}\n")
        return path


def bin_samples(angles_deg: np.ndarray, values: np.ndarray, bins: int = CURVE_BINS) -> Curve:
    edges = np.linspace(CURVE_RANGE_DEG[0], CURVE_RANGE_DEG[1], bins + 1)
    index = np.clip(np.digitize(angles_deg, edges) - 1, 0, bins - 1)
    counts = np.bincount(index, minlength=bins)
    sums = np.bincount(index, weights=values, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return Curve(angles_deg, values, 0.5 * (edges[:-1] + edges[1:]), means, counts)


def _require_pixels(img: PolarimetricImage) -> None:
    if not np.any(img.mask):
        raise EvaluationError("no valid pixels")


def dolp_curve(img: PolarimetricImage, V: Optional[np.ndarray] = None) -> Curve:
    """DoLP against the angle between the pixel normal and the view direction."""
    _require_pixels(img)
    V = img.V if V is None else np.asarray(V, dtype=float)
    angles = np.degrees(angle_between(img.normals[img.mask], V))
    return bin_samples(angles, dolp_array(img.stokes[img.mask]))


def intensity_curve(img: PolarimetricImage, L: Optional[np.ndarray] = None) -> Curve:
    """Radiance against the angle between the pixel normal and the light direction."""
    _require_pixels(img)
    L = img.L if L is None else np.asarray(L, dtype=float)
    angles = np.degrees(angle_between(img.normals[img.mask], L))
    return bin_samples(angles, img.stokes[img.mask][:, 0])


def curve_rmse(model: Curve, observed: Curve) -> float:
    """RMSE between bin means over bins populated in both curves."""
    common = (model.bin_counts > 0) & (observed.bin_counts > 0)
    if not np.any(common):
        return float("nan")
    diff = model.bin_values[common] - observed.bin_values[common]
    return float(np.sqrt(np.mean(diff * diff)))


def planar_sweep(
    params,
    model: str = "fmbrdf",
    angles_deg: Iterable[float] = tuple(range(-80, 81, 5)),
    light_deg: float = 45.0,
    E0: float = 1.0,
    rule: Tuple[int, int] = (32, 64),
    normalization: str = "table",
    threads: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """Radiance of a flat patch (N = +Z) seen from V = (sin t, 0, cos t), light fixed in the same plane.

    ``params`` is an FmbrdfParams for the FMBRDF and a BaselineParams otherwise.
    """
    angles = np.asarray(list(angles_deg), dtype=float)
    if np.any(np.abs(angles) >= 90.0):
        raise ParameterError("camera angles must lie in (-90, 90) degrees")
    t = np.radians(angles)
    V = np.stack([np.sin(t), np.zeros_like(t), np.cos(t)], axis=-1)
    light = math.radians(light_deg)
    L = np.array([math.sin(light), 0.0, math.cos(light)])
    N = np.array([0.0, 0.0, 1.0])
    s_in = np.array([E0, 0.0, 0.0, 0.0])
    if model == "fmbrdf":
        values = evaluate_model(model, params, None, N, L, V, s_in, rule=rule, normalization=normalization, threads=threads)
    else:
        values = evaluate_model(model, None, params, N, L, V, s_in, threads=threads)
    return angles, values[:, 0]


# -- files ---------------------------------------------------------------


def _save_png(path: str, data: np.ndarray, cmap: str, vmin: float, vmax: float) -> str:
    plt.imsave(path, data, cmap=cmap, vmin=vmin, vmax=vmax, metadata={"Software": None})
    return path


def write_image(img: PolarimetricImage, out_dir: str, name: str = "render", previews: bool = True) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, name)
    paths = []
    for k, channel in enumerate(("s0", "s1", "s2")):
        path = f"{base}.{channel}.pfm"
        write_pfm(path, img.stokes[..., k])
        paths.append(path)
    write_pfm(f"{base}.normal.pfm", img.normals)
    write_pfm(f"{base}.mask.pfm", img.mask.astype(float))
    paths += [f"{base}.normal.pfm", f"{base}.mask.pfm"]

    side = {"L": img.L.tolist(), "V": img.V.tolist(), "E0": img.E0, "metadata": img.metadata}
    with open(f"{base}.scene.json", "w", encoding="utf-8") as f:
        json.dump(side, f, indent=2, sort_keys=True)
    paths.append(f"{base}.scene.json")

    if previews:
        s0 = img.intensity()
        peak = float(s0.max()) if s0.size and s0.max() > 0 else 1.0
        paths.append(_save_png(f"{base}.intensity.png", s0, "gray", 0.0, peak))
        paths.append(_save_png(f"{base}.dolp.png", img.dolp(), "viridis", 0.0, 1.0))
        paths.append(_save_png(f"{base}.aolp.png", img.aolp(), "twilight", -0.5 * math.pi, 0.5 * math.pi))
    logger.info(f"Wrote {len(paths)} image files under {out_dir}")
    return paths


def read_image(directory: str, name: str = "render") -> PolarimetricImage:
    base = os.path.join(directory, name)
    channels = [read_pfm(f"{base}.{c}.pfm") for c in ("s0", "s1", "s2")]
    normals = read_pfm(f"{base}.normal.pfm")
    mask = read_pfm(f"{base}.mask.pfm") > 0.5
    shapes = {c.shape for c in channels} | {normals.shape[:2], mask.shape}
    if len(shapes) != 1 or normals.ndim != 3:
        raise ConfigError(f"mismatched image dimensions under {directory}: {sorted(shapes)}")
    try:
        with open(f"{base}.scene.json", "r", encoding="utf-8") as f:
            side = json.load(f)
        L = np.asarray(side["L"], dtype=float)
        V = np.asarray(side["V"], dtype=float)
        E0 = float(side.get("E0", 1.0))
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot read scene description {base}.scene.json: {e}") from e
    stokes = np.zeros(mask.shape + (4,))
    for k, channel in enumerate(channels):
        stokes[..., k] = channel
    return PolarimetricImage(stokes=stokes, normals=normals, mask=mask, L=L, V=V, E0=E0, metadata=side.get("metadata", {}))


def plot_curves(path: str, curves: Dict[str, Curve], ylabel: str, xlabel: str) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, curve in curves.items():
        rows = curve.rows()
        if rows:
            xs, ys, _ = zip(*rows)
            ax.plot(xs, ys, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_xlim(*CURVE_RANGE_DEG)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def write_manifest(out_dir: str, config_payload: Dict[str, object], paths: Sequence[str], extra: Optional[Dict[str, object]] = None) -> str:
    manifest = {
        "config_hash": config_hash(config_payload),
        "files": {os.path.relpath(p, out_dir): file_sha256(p) for p in sorted(paths)},
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


class SceneService:
    """Rendering front end bound to the process settings."""

    def __init__(self, settings):
        self.settings = settings

    def render(self, spec: SceneSpec, threads: Optional[int] = None, surrogate=None) -> PolarimetricImage:
        return render(spec, threads=threads or self.settings.FMBRDF_THREADS, surrogate=surrogate,
                      cache_dir=self.settings.FMBRDF_CACHE_DIR)
