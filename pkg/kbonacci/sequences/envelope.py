from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import timedelta
from functools import lru_cache
from pathlib import Path
from typing import Any

import jsonschema

from kbonacci.core.errors import EnvelopeError

SCHEMA_PATH = Path(__file__).resolve().parents[2] / "docs" / "envelope.schema.json"


@lru_cache(maxsize=1)
def load_schema() -> dict[str, Any]:
    with SCHEMA_PATH.open("r", encoding="utf-8") as handle:
        return json.load(handle)


def validate_envelope(payload: dict[str, Any]) -> None:
    try:
        jsonschema.validate(instance=payload, schema=load_schema())
    except jsonschema.ValidationError as exc:
        raise EnvelopeError(f"Envelope rejected by schema: {exc.message}") from exc


@dataclass(frozen=True)
class OutputEnvelope:
    schema_version: str
    command: str
    inputs: dict[str, Any]
    results: dict[str, Any]
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "command": self.command,
            "inputs": self.inputs,
            "results": self.results,
            "timings": self.timings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def build_envelope(
    command: str,
    inputs: dict[str, Any],
    results: dict[str, Any],
    timings: dict[str, timedelta | float] | None = None,
    *,
    schema_version: str,
) -> OutputEnvelope:
    envelope = OutputEnvelope(
        schema_version=schema_version,
        command=command,
        inputs=inputs,
        results=results,
        timings={
            phase: value.total_seconds() if isinstance(value, timedelta) else float(value)
            for phase, value in (timings or {}).items()
        },
    )
    validate_envelope(envelope.to_dict())
    return envelope
