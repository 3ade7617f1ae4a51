# File: commands/fit_command.py

import dataclasses
import logging
import math
import os

from app import EXIT_OK, add_common_arguments, load_surrogate
from config import load_run_config
from optics.geometry import Direction
from services.reflectometry_service import Observation, novel_light_nrmse
from services.scene_service import read_image, write_manifest
from utils.hashing import file_sha256

logger = logging.getLogger(__name__)


class FitCommand:
    name = "fit"
    help = "Estimate FMBRDF parameters from one polarimetric image."

    def __init__(self, app):
        self.app = app
        self.settings = app.settings
        self.reflectometry_service = app.reflectometry_service

    def register(self, parser) -> None:
        add_common_arguments(parser)
        parser.add_argument("--image", required=True, help="Directory holding the PFM Stokes images and normal map")
        parser.add_argument("--name", default="render", help="Base name of the image files")
        parser.add_argument("--mode", choices=("oracle", "surrogate"), default=None, help="Override the evaluation mode")
        parser.add_argument("--surrogate", default=None, help="Surrogate model file for --mode surrogate")
        parser.add_argument("--no-polarization", action="store_true", help="Fit the intensity term only")
        parser.add_argument("--no-intensity", action="store_true", help="Fit the DoLP term only")
        parser.add_argument("--multi-start", type=int, default=None, help="Number of perturbed starts")

    def run(self, args) -> int:
        cfg = load_run_config(args.config)
        threads = self.app.threads(args.threads)
        fit_cfg = cfg.fit.to_fit_config(cfg.quadrature, threads=threads, settings=self.settings)
        overrides = {}
        if args.mode:
            overrides["mode"] = args.mode
        if args.no_polarization:
            overrides["use_polarization"] = False
        if args.no_intensity:
            overrides["use_intensity"] = False
        if args.multi_start:
            overrides["multi_start"] = args.multi_start
        fit_cfg = dataclasses.replace(fit_cfg, **overrides)
        surrogate = load_surrogate(self.app, args.surrogate) if fit_cfg.mode == "surrogate" else None

        img = read_image(args.image, args.name)
        obs = Observation.from_image(img, cfg.scene.nv_threshold)
        logger.info(f"Fitting {obs.size} pixels in {fit_cfg.mode} mode")
        report = self.reflectometry_service.fit(obs, fit_cfg, surrogate=surrogate)

        if cfg.fit.novel_light_theta_deg is not None and cfg.fit.reference is not None:
            light = Direction.from_angles(math.radians(cfg.fit.novel_light_theta_deg), math.radians(cfg.fit.novel_light_phi_deg))
            report.novel_light_nrmse = novel_light_nrmse(
                report.params, cfg.fit.reference.to_params(), obs.N, obs.V, light.as_array(), obs.E0,
                rule=fit_cfg.rule, normalization=fit_cfg.normalization, threads=threads,
            )
            logger.info(f"Novel-light normalized RMSE: {report.novel_light_nrmse:.4g}")

        paths = report.write(args.out)
        inputs = {
            os.path.basename(p): file_sha256(p)
            for p in sorted(os.path.join(args.image, f) for f in os.listdir(args.image) if f.startswith(f"{args.name}."))
            if p.endswith((".pfm", ".json"))
        }
        write_manifest(args.out, cfg.model_dump(mode="json"), paths,
                       extra={"command": self.name, "mode": fit_cfg.mode, "inputs": inputs})
        return EXIT_OK


def setup(app):
    app.add_command(FitCommand(app))
