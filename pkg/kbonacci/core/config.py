from __future__ import annotations


class Config:
    # All settings are literals: the CLI is configured through flags only.
    ENVELOPE_SCHEMA_VERSION = "1.0.0"
    ROOT_MAX_SWEEPS = 200
    ROOT_MAX_NEWTON_STEPS = 64
    ROOT_DEFAULT_DIGITS = 20
    VERIFY_WORKERS = 1
    VERIFY_DEFAULT_TRIALS = 5
    VERIFY_DEFAULT_SEED = 0
    VERIFY_INIT_RANGE = 1_000_000
    LOG_LEVEL = "WARNING"
