from __future__ import annotations

import numbers
from dataclasses import dataclass, field
from datetime import timedelta
from enum import Enum
from typing import Callable

import mpmath

from kbonacci.core.errors import NonConvergence, SequenceSpecError
from kbonacci.core.precision import MIN_PRECISION_BITS, precision_context

# Distance below which a root would make (lambda - 1) a dangerous divisor.
ROOT_ONE_CLEARANCE = mpmath.mpf("1e-3")


class EvaluationMethod(str, Enum):
    RECURRENCE = "recurrence"
    MATRIX_POWER = "matrix_power"
    CLOSED_FORM = "closed_form"
    DRESDEN = "dresden"
    BACANI_RABAGO = "bacani_rabago"
    BINET = "binet"

    @property
    def is_exact(self) -> bool:
        return self in EXACT_METHODS


EXACT_METHODS = frozenset({EvaluationMethod.RECURRENCE, EvaluationMethod.MATRIX_POWER})


@dataclass(frozen=True)
class SequenceSpec:
    """Order ``k`` plus the ``k`` exact initial terms t_0 ... t_{k-1}."""

    k: int
    initial_terms: tuple[int, ...]

    def __post_init__(self) -> None:
        if isinstance(self.k, bool) or not isinstance(self.k, numbers.Integral):
            raise SequenceSpecError(f"Order k must be an integer, got {self.k!r}")
        if self.k < 2:
            raise SequenceSpecError(f"Order k must be >= 2, got {self.k}")
        terms = tuple(self.initial_terms)
        for term in terms:
            if isinstance(term, bool) or not isinstance(term, numbers.Integral):
                raise SequenceSpecError(f"Initial terms must be integers, got {term!r}")
        if len(terms) != self.k:
            raise SequenceSpecError(
                f"Expected {self.k} initial terms for k={self.k}, got {len(terms)}"
            )
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "initial_terms", tuple(int(term) for term in terms))

    @classmethod
    def special(cls, k: int) -> SequenceSpec:
        """The k-generalized Fibonacci initial terms 0, ..., 0, 1."""
        if k < 2:
            raise SequenceSpecError(f"Order k must be >= 2, got {k}")
        return cls(k, (0,) * (k - 1) + (1,))

    @classmethod
    def unit(cls, k: int, p: int) -> SequenceSpec:
        if not 0 <= p < k:
            raise SequenceSpecError(f"Unit index {p} outside 0..{k - 1}")
        return cls(k, tuple(1 if i == p else 0 for i in range(k)))

    @property
    def is_special(self) -> bool:
        return self.initial_terms == (0,) * (self.k - 1) + (1,)

    def __add__(self, other: SequenceSpec) -> SequenceSpec:
        if not isinstance(other, SequenceSpec):
            return NotImplemented
        if other.k != self.k:
            raise SequenceSpecError("Cannot add sequences of different order")
        return SequenceSpec(
            self.k, tuple(a + b for a, b in zip(self.initial_terms, other.initial_terms))
        )

    def to_dict(self) -> dict[str, object]:
        return {"k": self.k, "initial_terms": [str(term) for term in self.initial_terms]}


@dataclass(frozen=True)
class HPComplex:
    real: mpmath.mpf
    imag: mpmath.mpf
    precision_bits: int

    def __post_init__(self) -> None:
        if self.precision_bits < MIN_PRECISION_BITS:
            raise ValueError(
                f"precision_bits must be >= {MIN_PRECISION_BITS}, got {self.precision_bits}"
            )

    @classmethod
    def from_value(cls, value: object, precision_bits: int) -> HPComplex:
        ctx = precision_context(precision_bits)
        z = _as_mpc(value, ctx)
        return cls(z.real, z.imag, precision_bits)

    def value(self, ctx: mpmath.MPContext | None = None) -> mpmath.mpc:
        ctx = ctx or precision_context(self.precision_bits)
        return ctx.mpc(self.real, self.imag)

    def _combine(
        self, other: object, op: Callable[[mpmath.mpc, mpmath.mpc], mpmath.mpc]
    ) -> HPComplex:
        bits = self.precision_bits
        if isinstance(other, HPComplex):
            bits = min(bits, other.precision_bits)
        ctx = precision_context(bits)
        return HPComplex.from_value(op(self.value(ctx), _as_mpc(other, ctx)), bits)

    def __add__(self, other: object) -> HPComplex:
        return self._combine(other, lambda a, b: a + b)

    def __radd__(self, other: object) -> HPComplex:
        return self._combine(other, lambda a, b: b + a)

    def __sub__(self, other: object) -> HPComplex:
        return self._combine(other, lambda a, b: a - b)

    def __rsub__(self, other: object) -> HPComplex:
        return self._combine(other, lambda a, b: b - a)

    def __mul__(self, other: object) -> HPComplex:
        return self._combine(other, lambda a, b: a * b)

    def __rmul__(self, other: object) -> HPComplex:
        return self._combine(other, lambda a, b: b * a)

    def __truediv__(self, other: object) -> HPComplex:
        return self._combine(other, lambda a, b: a / b)

    def __rtruediv__(self, other: object) -> HPComplex:
        return self._combine(other, lambda a, b: b / a)

    def __neg__(self) -> HPComplex:
        return HPComplex(-self.real, -self.imag, self.precision_bits)

    def __pow__(self, exponent: int) -> HPComplex:
        ctx = precision_context(self.precision_bits)
        return HPComplex.from_value(self.value(ctx) ** int(exponent), self.precision_bits)

    def __abs__(self) -> mpmath.mpf:
        ctx = precision_context(self.precision_bits)
        return ctx.fabs(self.value(ctx))

    def is_real(self, tolerance: mpmath.mpf) -> bool:
        return abs(self.imag) <= tolerance

    def nstr(self, digits: int = 20) -> str:
        ctx = precision_context(self.precision_bits)
        if self.imag == 0:
            return ctx.nstr(self.real, digits, strip_zeros=False)
        return ctx.nstr(self.value(ctx), digits, strip_zeros=False)

    def to_dict(self, digits: int = 30) -> dict[str, str]:
        ctx = precision_context(self.precision_bits)
        return {
            "re": ctx.nstr(self.real, digits),
            "im": ctx.nstr(self.imag, digits),
        }


def _as_mpc(value: object, ctx: mpmath.MPContext) -> mpmath.mpc:
    if isinstance(value, HPComplex):
        return value.value(ctx)
    return ctx.mpc(value)


@dataclass(frozen=True)
class RootSet:
    """The k certified roots of lambda^k - lambda^(k-1) - ... - 1.

    Construction re-checks every certificate and raises NonConvergence on any
    violation, so an existing instance is always certified.
    """

    k: int
    roots: tuple[HPComplex, ...]
    residuals: tuple[mpmath.mpf, ...]
    min_separation: mpmath.mpf
    dominant_index: int
    precision_bits: int
    tolerance: mpmath.mpf

    def __post_init__(self) -> None:
        context = {"k": self.k, "precision_bits": self.precision_bits}
        if len(self.roots) != self.k or len(self.residuals) != self.k:
            raise NonConvergence(f"Expected {self.k} roots, got {len(self.roots)}", **context)
        worst = max(self.residuals)
        if worst > self.tolerance:
            raise NonConvergence(
                "Root residual above certification tolerance",
                detail={"max_residual": mpmath.nstr(worst, 8)},
                **context,
            )
        if not self.min_separation > self.tolerance:
            raise NonConvergence(
                "Roots are not pairwise separated",
                detail={"min_separation": mpmath.nstr(self.min_separation, 8)},
                **context,
            )
        dominant = self.roots[self.dominant_index]
        if not dominant.is_real(self.tolerance) or not 1 < abs(dominant) < 2:
            raise NonConvergence(
                "Dominant root is not a real number in (1, 2)",
                detail={"dominant": dominant.nstr(12)},
                **context,
            )
        for index, root in enumerate(self.roots):
            if index != self.dominant_index and not abs(root) < 1:
                raise NonConvergence(
                    "Non-dominant root outside the unit disc",
                    detail={"root": root.nstr(12)},
                    **context,
                )
            if abs(root - 1) <= ROOT_ONE_CLEARANCE:
                raise NonConvergence("Root too close to 1", **context)

    @property
    def dominant(self) -> HPComplex:
        return self.roots[self.dominant_index]

    def values(self, ctx: mpmath.MPContext | None = None) -> list[mpmath.mpc]:
        ctx = ctx or precision_context(self.precision_bits)
        return [root.value(ctx) for root in self.roots]

    def to_dict(self, digits: int = 30) -> dict[str, object]:
        return {
            "k": self.k,
            "precision_bits": self.precision_bits,
            "roots": [root.to_dict(digits) for root in self.roots],
            "residuals": [mpmath.nstr(value, 6) for value in self.residuals],
            "min_separation": mpmath.nstr(self.min_separation, 12),
            "dominant_index": self.dominant_index,
        }


@dataclass(frozen=True)
class WeightVector:
    """Closed-form coefficients c_m paired with the roots they multiply."""

    k: int
    weights: tuple[HPComplex, ...]
    roots: RootSet
    source_spec: SequenceSpec

    def reconstruct(self, p: int) -> HPComplex:
        """Sum of c_m * lambda_m^p; equals t_p for 0 <= p < k."""
        ctx = precision_context(self.roots.precision_bits)
        total = ctx.fsum(
            weight.value(ctx) * lam**p
            for weight, lam in zip(self.weights, self.roots.values(ctx))
        )
        return HPComplex.from_value(total, self.roots.precision_bits)

    def reconstruction_residuals(self) -> list[mpmath.mpf]:
        return [
            abs(self.reconstruct(p) - term)
            for p, term in enumerate(self.source_spec.initial_terms)
        ]


@dataclass(frozen=True)
class ResidualReport:
    """Residuals of one numerical identity, one entry per root (or per probe)."""

    name: str
    k: int
    precision_bits: int
    residuals: tuple[mpmath.mpf, ...]
    threshold: mpmath.mpf

    @property
    def max_residual(self) -> mpmath.mpf:
        return max(self.residuals)

    @property
    def passed(self) -> bool:
        return self.max_residual < self.threshold

    def to_dict(self) -> dict[str, object]:
        return {
            "name": self.name,
            "k": self.k,
            "precision_bits": self.precision_bits,
            "residuals": [mpmath.nstr(value, 6) for value in self.residuals],
            "max_residual": mpmath.nstr(self.max_residual, 6),
            "threshold": mpmath.nstr(self.threshold, 6),
            "passed": self.passed,
        }


@dataclass(frozen=True)
class EvaluationReport:
    n: int
    method: EvaluationMethod
    exact_value: int | None = None
    approx_value: HPComplex | None = None
    rounding_gap: mpmath.mpf | None = None
    elapsed: timedelta = field(default_factory=timedelta)
    aligned_index: int | None = None
    recovered: int | None = None
    error_bound: mpmath.mpf | None = None

    def __post_init__(self) -> None:
        if self.exact_value is None and self.approx_value is None:
            raise ValueError("EvaluationReport needs an exact or an approximate value")
        if (self.rounding_gap is None) != (self.approx_value is None):
            raise ValueError("rounding_gap must accompany approx_value")
        if self.aligned_index is None:
            object.__setattr__(self, "aligned_index", self.n)

    @property
    def value(self) -> int | None:
        return self.exact_value if self.exact_value is not None else self.recovered

    def to_dict(self) -> dict[str, object]:
        payload: dict[str, object] = {
            "n": self.n,
            "method": self.method.value,
            "aligned_index": self.aligned_index,
            "value": None if self.value is None else str(self.value),
            "elapsed_seconds": self.elapsed.total_seconds(),
        }
        if self.approx_value is not None:
            payload["approx_value"] = self.approx_value.to_dict()
            payload["rounding_gap"] = mpmath.nstr(self.rounding_gap, 6)
            payload["error_bound"] = (
                None if self.error_bound is None else mpmath.nstr(self.error_bound, 6)
            )
        return payload
