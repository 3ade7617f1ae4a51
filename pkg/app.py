# File: app.py

import argparse
import importlib
import logging
import os
from typing import Dict, Optional, Sequence

from config import settings
from utils.errors import (
    ConfigError,
    EvaluationError,
    FmbrdfError,
    GeometryError,
    PfmFormatError,
    QuadratureError,
    SurrogateDomainError,
    SurrogateFormatError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_TEST_FAILURE = 1
EXIT_CONFIG = 2
EXIT_EVALUATION = 3
EXIT_SURROGATE_QUALITY = 4

# first match wins
EXIT_CODES = (
    (ConfigError, EXIT_CONFIG),
    (PfmFormatError, EXIT_CONFIG),
    (SurrogateFormatError, EXIT_CONFIG),
    (EvaluationError, EXIT_EVALUATION),
    (QuadratureError, EXIT_EVALUATION),
    (GeometryError, EXIT_EVALUATION),
    (SurrogateDomainError, EXIT_EVALUATION),
    (FmbrdfError, EXIT_CONFIG),
)

COMMAND_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "commands")


def exit_code_for(error: BaseException) -> int:
    for kind, code in EXIT_CODES:
        if isinstance(error, kind):
            return code
    return EXIT_EVALUATION


class FmbrdfApp:
    """Command-line application: owns the settings, the services and the subcommands."""

    def __init__(self, app_settings=None):
        self.settings = app_settings or settings
        self.parser = argparse.ArgumentParser(
            prog="fmbrdf",
            description="Fresnel microfacet BRDF rendering, reflectometry and surrogate training.",
        )
        self.parser.add_argument("--log-level", default=None, help="Override LOG_LEVEL for this run")
        self.subparsers = self.parser.add_subparsers(dest="command", metavar="COMMAND")
        self.subparsers.required = True
        self.commands: Dict[str, object] = {}
        self.scene_service = None
        self.reflectometry_service = None

    def setup(self) -> None:
        from services.reflectometry_service import ReflectometryService
        from services.scene_service import SceneService

        self.scene_service = SceneService(self.settings)
        logger.debug("SceneService initialized.")
        self.reflectometry_service = ReflectometryService(self.settings)
        logger.debug("ReflectometryService initialized.")

        for filename in sorted(os.listdir(COMMAND_DIR)):
            if filename.endswith("_command.py"):
                module_name = f"commands.{filename[:-3]}"
                try:
                    module = importlib.import_module(module_name)
                    module.setup(self)
                    logger.debug(f"Loaded command module: {module_name}")
                except AttributeError:
                    logger.error(f"Command module {module_name} has no setup function.")
                except Exception as e:
                    logger.error(f"Failed to load command module {module_name}: {e}", exc_info=True)

    def add_command(self, command) -> None:
        if command.name in self.commands:
            logger.warning(f"Command already registered: {command.name}")
            return
        sub = self.subparsers.add_parser(command.name, help=command.help, description=command.help)
        command.register(sub)
        sub.set_defaults(handler=command)
        self.commands[command.name] = command

    def threads(self, requested: Optional[int]) -> int:
        return requested if requested and requested > 0 else self.settings.FMBRDF_THREADS

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        args = self.parser.parse_args(argv)
        if args.log_level:
            logging.getLogger().setLevel(getattr(logging, args.log_level.upper(), logging.INFO))
        command = args.handler
        logger.info(f"Running '{command.name}'")
        try:
            code = command.run(args)
        except FmbrdfError as e:
            code = exit_code_for(e)
            logger.error(f"'{command.name}' failed ({type(e).__name__}, exit {code}): {e}", exc_info=True)
            return code
        logger.info(f"'{command.name}' finished with exit code {code}")
        return code


def add_common_arguments(parser: argparse.ArgumentParser, config: bool = True, out: bool = True) -> None:
    if config:
        parser.add_argument("--config", default=None, help="JSON run config (version 1); omitted fields take documented defaults")
    if out:
        parser.add_argument("--out", required=True, help="Output directory; all written paths are relative to it")
    parser.add_argument("--threads", type=int, default=None, help="Worker cap; results do not depend on it")


def load_surrogate(app: FmbrdfApp, path: Optional[str]):
    """Surrogate model from ``path`` or FMBRDF_SURROGATE_PATH."""
    from surrogate.serialization import load

    path = path or app.settings.FMBRDF_SURROGATE_PATH
    if not path:
        raise ConfigError("surrogate mode needs --surrogate or FMBRDF_SURROGATE_PATH")
    return load(path)
