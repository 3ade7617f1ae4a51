# File: commands/surrogate_command.py

import json
import logging
import os

from app import EXIT_OK, EXIT_SURROGATE_QUALITY, add_common_arguments
from config import load_run_config
from services.scene_service import write_manifest
from surrogate import serialization
from surrogate.training import generate_training_set, quality_failures, resolution_check, train, validate
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

REPLAY_TOLERANCE = 1e-6
MODEL_FILE = "surrogate.fmsg"


class TrainSurrogateCommand:
    name = "train-surrogate"
    help = "Train the body-reflection and Smith surrogates, or re-validate a stored model."

    def __init__(self, app):
        self.app = app
        self.settings = app.settings

    def register(self, parser) -> None:
        add_common_arguments(parser, out=False)
        parser.add_argument("--out", default=None, help="Output directory for the model, metrics and manifest")
        parser.add_argument("--validate", default=None, metavar="MODEL",
                            help="Replay the held-out set of MODEL and compare with its stored metrics")

    def run(self, args) -> int:
        cfg = load_run_config(args.config)
        threads = self.app.threads(args.threads)
        if args.validate:
            return self._validate(args.validate, cfg, threads, args.out)
        if not args.out:
            raise ConfigError("train-surrogate needs --out")

        tc = cfg.surrogate.to_training_config(threads=threads)
        ts = generate_training_set(tc.domain, tc.n_samples, tc.rule, tc.seed, tc.n_smith_samples, tc.normalization, threads)
        drift = resolution_check(ts, rule=tc.rule, normalization=tc.normalization, seed=tc.seed)
        logger.info(f"Oracle resolution check: max relative s0 change at doubled resolution {drift:.3g}")
        model = train(ts, tc)
        model.metrics["oracle_resolution_drift"] = drift

        os.makedirs(args.out, exist_ok=True)
        model_path = os.path.join(args.out, MODEL_FILE)
        serialization.save(model, model_path)
        metrics_path = os.path.join(args.out, "metrics.json")
        with open(metrics_path, "w", encoding="utf-8") as f:
            json.dump(model.metrics, f, indent=2, sort_keys=True)
        write_manifest(args.out, cfg.model_dump(mode="json"), [model_path, metrics_path], extra={"command": self.name})

        failures = quality_failures(model.metrics, cfg.surrogate.max_rel_s0, cfg.surrogate.max_abs_dolp)
        for failure in failures:
            logger.error(f"Surrogate quality gate: {failure}")
        return EXIT_SURROGATE_QUALITY if failures else EXIT_OK

    def _validate(self, path: str, cfg, threads: int, out) -> int:
        model = serialization.load(path)
        replayed = validate(model, threads=threads)
        mismatches = []
        for key, value in replayed.items():
            stored = model.metrics.get(key)
            if stored is None or abs(stored - value) > REPLAY_TOLERANCE:
                mismatches.append(f"{key}: stored {stored}, replayed {value}")
        for mismatch in mismatches:
            logger.error(f"Replay mismatch {mismatch}")
        if out:
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "validation.json"), "w", encoding="utf-8") as f:
                json.dump({"replayed": replayed, "stored": model.metrics, "mismatches": mismatches}, f, indent=2, sort_keys=True)
        failures = quality_failures(replayed, cfg.surrogate.max_rel_s0, cfg.surrogate.max_abs_dolp)
        for failure in failures:
            logger.error(f"Surrogate quality gate: {failure}")
        if mismatches or failures:
            return EXIT_SURROGATE_QUALITY
        logger.info(f"Surrogate {path} validated: {replayed}")
        return EXIT_OK


def setup(app):
    app.add_command(TrainSurrogateCommand(app))
