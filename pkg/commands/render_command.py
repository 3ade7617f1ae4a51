# File: commands/render_command.py

import logging
import os
from typing import get_args

from app import EXIT_OK, add_common_arguments, load_surrogate
from config import ModelTag, load_run_config
from services.scene_service import dolp_curve, intensity_curve, write_image, write_manifest
from utils.errors import ConfigError

logger = logging.getLogger(__name__)


class RenderCommand:
    name = "render"
    help = "Render a synthetic polarimetric image of a sphere or plane."

    def __init__(self, app):
        self.app = app
        self.settings = app.settings
        self.scene_service = app.scene_service

    def register(self, parser) -> None:
        add_common_arguments(parser)
        parser.add_argument("--model", default=None, help="Override the config's model tag")
        parser.add_argument("--mode", choices=("oracle", "surrogate"), default="oracle", help="FMBRDF evaluation mode")
        parser.add_argument("--surrogate", default=None, help="Surrogate model file for --mode surrogate")
        parser.add_argument("--name", default="render", help="Base name of the written files")
        parser.add_argument("--no-previews", action="store_true", help="Skip the PNG previews")

    def run(self, args) -> int:
        cfg = load_run_config(args.config)
        if args.model:
            if args.model not in get_args(ModelTag):
                raise ConfigError(f"unknown model tag '{args.model}'")
            cfg = cfg.model_copy(update={"model": args.model})
        spec = cfg.scene_spec(settings=self.settings)
        surrogate = load_surrogate(self.app, args.surrogate) if args.mode == "surrogate" else None

        img = self.scene_service.render(spec, threads=self.app.threads(args.threads), surrogate=surrogate)
        paths = write_image(img, args.out, args.name, previews=not args.no_previews)
        if img.mask.any():
            paths.append(dolp_curve(img).write_csv(os.path.join(args.out, f"{args.name}.dolp_curve.csv")))
            paths.append(intensity_curve(img).write_csv(os.path.join(args.out, f"{args.name}.intensity_curve.csv")))
        write_manifest(args.out, cfg.model_dump(mode="json"), paths,
                       extra={"command": self.name, "mode": args.mode, "valid_pixels": int(img.mask.sum())})
        logger.info(f"Render written to {args.out}")
        return EXIT_OK


def setup(app):
    app.add_command(RenderCommand(app))
