from __future__ import annotations


class SequenceSpecError(ValueError):
    """Raised when a sequence definition or an index argument is invalid."""


class NumericalError(ArithmeticError):
    """Base class for failures of the high-precision routes."""

    def __init__(
        self,
        message: str,
        *,
        k: int | None = None,
        precision_bits: int | None = None,
        detail: dict[str, object] | None = None,
    ) -> None:
        super().__init__(message)
        self.k = k
        self.precision_bits = precision_bits
        self.detail = detail or {}

    def to_dict(self) -> dict[str, object]:
        return {
            "error": type(self).__name__,
            "message": str(self),
            "k": self.k,
            "precision_bits": self.precision_bits,
            "detail": self.detail,
        }


class NonConvergence(NumericalError):
    """Raised when root finding cannot certify its roots within the iteration caps."""


class PrecisionExhausted(NumericalError):
    """Raised when a closed-form value cannot be rounded safely at the working precision."""

    def __init__(
        self,
        message: str,
        *,
        suggested_precision: int | None = None,
        **kwargs,
    ) -> None:
        super().__init__(message, **kwargs)
        self.suggested_precision = suggested_precision

    def to_dict(self) -> dict[str, object]:
        payload = super().to_dict()
        payload["suggested_precision"] = self.suggested_precision
        return payload


class IllConditioned(NumericalError):
    """Raised when the Vandermonde solve leaves a residual above tolerance."""


class CalibrationFailed(NumericalError):
    """Raised when no index or diagonal alignment reproduces the exact sequence."""


class EnvelopeError(ValueError):
    """Raised when a command envelope does not match the published JSON schema."""
