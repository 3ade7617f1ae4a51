# File: main.py

import logging
import sys

# Settings load first so configuration errors stop the process early.
try:
    from config import settings
except SystemExit as e:
    logging.critical(f"fmbrdf cannot start due to critical configuration errors: {e}")
    print(f"CRITICAL: fmbrdf cannot start due to critical configuration errors: {e}")
    exit(2)
except ImportError:
    logging.critical("Failed to import settings from config.py. Ensure config.py exists and is valid.")
    print("CRITICAL: Failed to import settings from config.py. Ensure config.py exists and is valid.")
    exit(2)


from utils.logging_setup import setup_logging
from app import EXIT_EVALUATION, FmbrdfApp


setup_logging(
    log_level=settings.LOG_LEVEL,
    log_to_file=settings.LOG_TO_FILE,
    log_dir=settings.LOG_DIR,
    log_file_name=settings.LOG_FILE_NAME,
)

logger = logging.getLogger(__name__)


def main(argv=None) -> int:
    app = FmbrdfApp(settings)
    app.setup()
    return app.run(argv)


if __name__ == "__main__":
    code = EXIT_EVALUATION
    try:
        code = main()
    except KeyboardInterrupt:
        logger.info("Interrupted.")
        code = 130
    except Exception as e:
        logger.critical(f"An unexpected error occurred at the top level: {e}", exc_info=True)
    finally:
        logger.info("fmbrdf process terminated.")
    sys.exit(code)
