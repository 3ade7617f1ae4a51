# File: utils/logging_setup.py

import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import Optional

LOG_FORMAT = "%(asctime)s [%(levelname)s] [%(name)s] (%(filename)s:%(lineno)d): %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

MAX_LOG_BYTES = 10 * 1024 * 1024
LOG_BACKUPS = 5

# top-level packages of this repository
APP_LOGGERS = ("main", "app", "config", "commands", "models", "microgeometry", "optics", "surrogate", "services", "utils")

# chatty at DEBUG
QUIET_LOGGERS = ("matplotlib", "PIL", "torch")


def _file_handler(log_dir: str, log_file_name: str, formatter: logging.Formatter) -> Optional[RotatingFileHandler]:
    try:
        os.makedirs(log_dir, exist_ok=True)
    except OSError as e:
        logging.error(f"Could not create log directory {log_dir}: {e}. Logging to current directory instead.")
        log_dir = "."
    path = os.path.join(log_dir, log_file_name)
    try:
        handler = RotatingFileHandler(path, maxBytes=MAX_LOG_BYTES, backupCount=LOG_BACKUPS, encoding="utf-8")
    except OSError as e:
        logging.error(f"Could not open log file {path}: {e}. File logging disabled.")
        return None
    handler.setFormatter(formatter)
    return handler


def setup_logging(log_level: str = "INFO", log_to_file: bool = False, log_dir: str = "logs",
                  log_file_name: str = "fmbrdf.log") -> Optional[str]:
    """Configure the root logger once per process.

    Output goes to stdout and, with ``log_to_file``, to a rotating file
    (10 MB x 5). Returns the log file path, or None when file logging is off.
    """
    level = getattr(logging, log_level.upper(), logging.INFO)
    formatter = logging.Formatter(LOG_FORMAT, DATE_FORMAT)

    root = logging.getLogger()
    root.setLevel(level)
    # repeated calls replace the handlers
    for handler in list(root.handlers):
        root.removeHandler(handler)

    console = logging.StreamHandler(sys.stdout)
    console.setFormatter(formatter)
    root.addHandler(console)

    log_path = None
    if log_to_file:
        handler = _file_handler(log_dir, log_file_name, formatter)
        if handler is not None:
            root.addHandler(handler)
            log_path = handler.baseFilename

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)
    for name in APP_LOGGERS:
        logging.getLogger(name).setLevel(level)

    logger = logging.getLogger(__name__)
    logger.info(f"Logging configured with level {log_level.upper()}.")
    if log_path:
        logger.info(f"Logging to file: {log_path}")
    return log_path
