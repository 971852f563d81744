from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations

import mpmath

from kbonacci.core.errors import NonConvergence, SequenceSpecError
from kbonacci.core.models import HPComplex, ResidualReport, RootSet
from kbonacci.core.precision import MIN_PRECISION_BITS, precision_context, tolerance_for

logger = logging.getLogger(__name__)

MAX_SWEEPS = 200
MAX_NEWTON_STEPS = 64
# Start points sit on the unit circle, rotated off the real axis so that no two
# of them are complex conjugates of each other.
_START_ANGLE = mpmath.mpf("0.4")


@dataclass(frozen=True)
class CharPoly:
    """lambda^k - lambda^(k-1) - ... - lambda - 1, coefficients from the constant term up."""

    k: int
    coefficients: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.coefficients) != self.k + 1:
            raise SequenceSpecError("Characteristic polynomial must have degree k")
        if self.coefficients[-1] != 1 or any(c != -1 for c in self.coefficients[:-1]):
            raise SequenceSpecError("Characteristic polynomial must be monic with -1 elsewhere")

    @classmethod
    def for_order(cls, k: int) -> CharPoly:
        if k < 2:
            raise SequenceSpecError(f"Order k must be >= 2, got {k}")
        return cls(k, (-1,) * k + (1,))

    @property
    def highest_first(self) -> list[int]:
        """Leading coefficient first, the order mpmath.polyval takes."""
        return list(reversed(self.coefficients))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1


def evaluate_poly(p: CharPoly, z: HPComplex) -> HPComplex:
    ctx = precision_context(z.precision_bits)
    return HPComplex.from_value(ctx.polyval(p.highest_first, z.value(ctx)), z.precision_bits)


def _initial_guesses(ctx: mpmath.MPContext, k: int) -> list[mpmath.mpc]:
    return [ctx.expjpi(2 * ctx.mpf(m) / k) * ctx.expj(_START_ANGLE) for m in range(k)]


def _simultaneous_iteration(
    ctx: mpmath.MPContext,
    poly: CharPoly,
    guesses: list[mpmath.mpc],
    tolerance: mpmath.mpf,
    max_sweeps: int,
) -> int:
    """Durand-Kerner sweeps, updating ``guesses`` in place; returns the sweep count."""
    coefficients = poly.highest_first
    for sweep in range(1, max_sweeps + 1):
        largest_step = ctx.zero
        for m, z in enumerate(guesses):
            denominator = ctx.one
            for j, other in enumerate(guesses):
                if j != m:
                    denominator *= z - other
            step = ctx.polyval(coefficients, z) / denominator
            guesses[m] = z - step
            largest_step = max(largest_step, ctx.fabs(step))
        if largest_step <= tolerance:
            return sweep
    raise NonConvergence(
        f"Simultaneous iteration did not settle after {max_sweeps} sweeps",
        k=poly.k,
        precision_bits=ctx.prec,
    )


def _newton_polish(
    ctx: mpmath.MPContext, poly: CharPoly, z: mpmath.mpc, max_steps: int
) -> mpmath.mpc:
    floor = ctx.ldexp(ctx.one, 4 - ctx.prec)
    previous = None
    for _ in range(max_steps):
        value, slope = ctx.polyval(poly.highest_first, z, derivative=True)
        if value == 0 or slope == 0:
            break
        step = value / slope
        z -= step
        size = ctx.fabs(step)
        if size <= floor * max(ctx.one, ctx.fabs(z)):
            break
        if previous is not None and size >= previous:
            # rounding noise: further steps cannot improve the root
            break
        previous = size
    return z


def find_roots(
    k: int,
    precision_bits: int,
    *,
    max_sweeps: int = MAX_SWEEPS,
    max_newton_steps: int = MAX_NEWTON_STEPS,
) -> RootSet:
    if k < 2:
        raise SequenceSpecError(f"Order k must be >= 2, got {k}")
    if precision_bits < MIN_PRECISION_BITS:
        raise SequenceSpecError(
            f"precision_bits must be >= {MIN_PRECISION_BITS}, got {precision_bits}"
        )
    ctx = precision_context(precision_bits)
    poly = CharPoly.for_order(k)
    tolerance = tolerance_for(precision_bits, 2)

    guesses = _initial_guesses(ctx, k)
    sweeps = _simultaneous_iteration(ctx, poly, guesses, tolerance, max_sweeps)
    polished = []
    for z in guesses:
        z = _newton_polish(ctx, poly, z, max_newton_steps)
        if ctx.fabs(z.imag) <= tolerance:
            z = ctx.mpc(z.real, 0)
        polished.append(z)
    logger.debug("k=%s bits=%s settled after %s sweeps", k, precision_bits, sweeps)

    residuals = tuple(ctx.fabs(ctx.polyval(poly.highest_first, z)) for z in polished)
    min_separation = min(ctx.fabs(a - b) for a, b in combinations(polished, 2))
    dominant_index = max(range(k), key=lambda index: ctx.fabs(polished[index]))
    try:
        return RootSet(
            k=k,
            roots=tuple(HPComplex.from_value(z, precision_bits) for z in polished),
            residuals=residuals,
            min_separation=min_separation,
            dominant_index=dominant_index,
            precision_bits=precision_bits,
            tolerance=tolerance,
        )
    except NonConvergence as exc:
        logger.warning("Root certification failed for k=%s bits=%s: %s", k, precision_bits, exc)
        raise


def dominant_root(k: int, precision_bits: int) -> HPComplex:
    return find_roots(k, precision_bits).dominant


def root_identity_check(rs: RootSet) -> ResidualReport:
    """Residual of lambda = 1 + 1/lambda + ... + 1/lambda^(k-1) for every root."""
    ctx = precision_context(rs.precision_bits)
    residuals = []
    for lam in rs.values(ctx):
        inverse = 1 / lam
        series = ctx.fsum(inverse**i for i in range(rs.k))
        residuals.append(ctx.fabs(lam - series))
    return ResidualReport(
        name="root_identity",
        k=rs.k,
        precision_bits=rs.precision_bits,
        residuals=tuple(residuals),
        threshold=tolerance_for(rs.precision_bits, 4),
    )


def vieta_check(rs: RootSet) -> ResidualReport:
    """Sum of roots against 1 and product of roots against (-1)^(k+1)."""
    ctx = precision_context(rs.precision_bits)
    values = rs.values(ctx)
    product = ctx.fprod(values)
    expected_product = 1 if rs.k % 2 else -1
    return ResidualReport(
        name="vieta",
        k=rs.k,
        precision_bits=rs.precision_bits,
        residuals=(ctx.fabs(ctx.fsum(values) - 1), ctx.fabs(product - expected_product)),
        threshold=rs.tolerance,
    )
