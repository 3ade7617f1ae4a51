# File: commands/selftest_command.py

import logging
import os

import pytest

from app import EXIT_OK, EXIT_TEST_FAILURE

logger = logging.getLogger(__name__)

TESTS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "tests")


class SelftestCommand:
    name = "selftest"
    help = "Run the fast invariant test suite."

    def __init__(self, app):
        self.app = app

    def register(self, parser) -> None:
        parser.add_argument("-k", dest="keyword", default=None, help="Only run tests matching this expression")

    def run(self, args) -> int:
        pytest_args = ["-q", "-m", "not slow", TESTS_DIR]
        if args.keyword:
            pytest_args += ["-k", args.keyword]
        code = pytest.main(pytest_args)
        if code != 0:
            logger.error(f"Self-test failed (pytest exit {int(code)})")
            return EXIT_TEST_FAILURE
        return EXIT_OK


def setup(app):
    app.add_command(SelftestCommand(app))
