# File: commands/curves_command.py

import csv
import json
import logging
import math
import os
from typing import Dict, List, get_args

from app import EXIT_OK, add_common_arguments
from config import ModelTag, load_run_config
from models.brdf import body_albedo
from microgeometry.quadrature import build_rule
from optics.geometry import Direction
from services.scene_service import (
    Curve,
    curve_rmse,
    dolp_curve,
    intensity_curve,
    planar_sweep,
    plot_curves,
    read_image,
    write_manifest,
)
from utils.errors import ConfigError

logger = logging.getLogger(__name__)


def _sweep_csv(path: str, angles, values) -> str:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["angle_deg", "value", "count"])
        for angle, value in zip(angles, values):
            writer.writerow([f"{angle:.6f}", f"{value:.9g}", 1])
    return path


class CurvesCommand:
    name = "curves"
    help = "DoLP-vs-view, intensity-vs-light and planar-sweep curves for any model tag."

    def __init__(self, app):
        self.app = app
        self.settings = app.settings
        self.scene_service = app.scene_service

    def register(self, parser) -> None:
        add_common_arguments(parser)
        parser.add_argument("--image", default=None, help="Observed image directory; default renders the config's model")
        parser.add_argument("--name", default="render", help="Base name of the observed image files")
        parser.add_argument("--models", default=None, help="Comma-separated model tags; default from the config")

    def run(self, args) -> int:
        cfg = load_run_config(args.config)
        models: List[str] = args.models.split(",") if args.models else list(cfg.curves.models)
        unknown = [m for m in models if m not in get_args(ModelTag)]
        if unknown:
            raise ConfigError(f"unknown model tag(s): {', '.join(unknown)}")
        threads = self.app.threads(args.threads)
        out = args.out
        os.makedirs(out, exist_ok=True)

        if args.image:
            observed = read_image(args.image, args.name)
        else:
            observed = self.scene_service.render(cfg.scene_spec(settings=self.settings), threads=threads)
        observed_curves = {"dolp": dolp_curve(observed), "intensity": intensity_curve(observed)}

        paths = []
        dolp_plots: Dict[str, Curve] = {"observed": observed_curves["dolp"]}
        intensity_plots: Dict[str, Curve] = {"observed": observed_curves["intensity"]}
        summary = []
        for kind, curve in observed_curves.items():
            paths.append(curve.write_csv(os.path.join(out, f"observed.{kind}.csv")))

        sweeps = {}
        angles = cfg.curves.sweep_angles()
        for model in models:
            spec = cfg.scene_spec(model=model, settings=self.settings)
            img = self.scene_service.render(spec, threads=threads)
            curves = {"dolp": dolp_curve(img), "intensity": intensity_curve(img)}
            for kind, curve in curves.items():
                paths.append(curve.write_csv(os.path.join(out, f"{model}.{kind}.csv")))
                summary.append((model, kind, curve_rmse(curve, observed_curves[kind])))
            dolp_plots[model] = curves["dolp"]
            intensity_plots[model] = curves["intensity"]

            params = cfg.params.to_params() if model == "fmbrdf" else cfg.baseline_params(model)
            sweep_angles, sweep_values = planar_sweep(
                params, model, angles, light_deg=cfg.curves.sweep_light_deg, E0=cfg.scene.irradiance,
                rule=cfg.quadrature.rule(self.settings), normalization=cfg.quadrature.normalization, threads=threads,
            )
            paths.append(_sweep_csv(os.path.join(out, f"{model}.sweep.csv"), sweep_angles, sweep_values))
            sweeps[model] = (sweep_angles, sweep_values)

        summary_path = os.path.join(out, "curves_summary.csv")
        with open(summary_path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["model", "curve", "rmse"])
            for model, kind, rmse in summary:
                writer.writerow([model, kind, f"{rmse:.9g}"])
        paths.append(summary_path)

        paths.append(plot_curves(os.path.join(out, "dolp.png"), dolp_plots, "DoLP", "angle(N, V) [deg]"))
        paths.append(plot_curves(os.path.join(out, "intensity.png"), intensity_plots, "radiance", "angle(N, L) [deg]"))
        paths.append(self._plot_sweeps(os.path.join(out, "sweep.png"), sweeps))

        if "fmbrdf" in models:
            albedo_path = os.path.join(out, "albedo.json")
            s = cfg.scene
            light = Direction.from_angles(math.radians(s.light_theta_deg), math.radians(s.light_phi_deg))
            n_theta, n_phi = cfg.quadrature.rule(self.settings)
            albedo = body_albedo(cfg.params.to_params(), Direction(0.0, 0.0, 1.0), light,
                                 rule=build_rule(n_theta, n_phi), normalization=cfg.quadrature.normalization)
            with open(albedo_path, "w", encoding="utf-8") as f:
                json.dump({"body_albedo": albedo, "light_theta_deg": s.light_theta_deg}, f, indent=2, sort_keys=True)
            paths.append(albedo_path)

        write_manifest(out, cfg.model_dump(mode="json"), paths, extra={"command": self.name, "models": models})
        return EXIT_OK

    @staticmethod
    def _plot_sweeps(path: str, sweeps) -> str:
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        for model, (angles, values) in sweeps.items():
            ax.plot(angles, values, label=model)
        ax.set_xlabel("camera angle [deg]")
        ax.set_ylabel("radiance")
        ax.legend(loc="best")
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
        return path


def setup(app):
    app.add_command(CurvesCommand(app))
