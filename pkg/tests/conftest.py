from __future__ import annotations

import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from kbonacci import create_app
from kbonacci.core.config import Config
from kbonacci.sequences.roots_service import find_roots


class TestConfig(Config):
    TESTING = True
    LOG_LEVEL = "ERROR"
    VERIFY_DEFAULT_TRIALS = 2


@pytest.fixture
def app():
    app = create_app(TestConfig)
    with app.app_context():
        yield app


@pytest.fixture
def runner(app):
    return app.test_cli_runner()


@pytest.fixture(scope="session")
def root_sets():
    cache = {}

    def _get(k: int, bits: int = 256):
        if (k, bits) not in cache:
            cache[(k, bits)] = find_roots(k, bits)
        return cache[(k, bits)]

    return _get


@pytest.fixture
def rng():
    return random.Random(20240917)
