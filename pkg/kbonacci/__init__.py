from __future__ import annotations

from flask import Flask

from kbonacci.core.config import Config
from kbonacci.sequences import sequences_bp


def create_app(config_object: type[Config] | None = None) -> Flask:
    app = Flask(__name__)
    app.config.from_object(config_object or Config)
    app.logger.setLevel(app.config["LOG_LEVEL"])

    register_cli(app)
    return app


def register_cli(app: Flask) -> None:
    """Attach compute, roots, verify and table to ``app.cli``."""
    app.register_blueprint(sequences_bp)
