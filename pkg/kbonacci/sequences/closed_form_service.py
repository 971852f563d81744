from __future__ import annotations

import logging
import math
import time
from datetime import timedelta
from threading import Lock

import mpmath

from kbonacci.core.errors import (
    CalibrationFailed,
    IllConditioned,
    PrecisionExhausted,
    SequenceSpecError,
)
from kbonacci.core.models import (
    EvaluationMethod,
    EvaluationReport,
    HPComplex,
    ResidualReport,
    RootSet,
    SequenceSpec,
    WeightVector,
)
from kbonacci.core.precision import default_precision_for, precision_context, tolerance_for
from kbonacci.sequences.exact_service import sequence_slice

logger = logging.getLogger(__name__)

ROUNDING_GAP_LIMIT = mpmath.mpf("0.25")
# Bits of slack assumed lost between the roots and the final sum.
_ERROR_GUARD_BITS = 8
_CALIBRATION_INDICES = range(2, 21)

# (k, precision_bits) -> calibrated Bacani-Rabago index offset
_OFFSET_CACHE: dict[tuple[int, int], int] = {}
_OFFSET_CACHE_LOCK = Lock()


def _require_matching_order(rs: RootSet, spec: SequenceSpec) -> None:
    if spec.k != rs.k:
        raise SequenceSpecError(f"Sequence order {spec.k} does not match root set order {rs.k}")


def _require_index(n: int, minimum: int) -> None:
    if n < minimum:
        raise SequenceSpecError(f"Index must be >= {minimum}, got {n}")


def _differences(values: list[mpmath.mpc]) -> list[mpmath.mpc]:
    """prod_{j != m} (lambda_m - lambda_j) for every m."""
    products = []
    for m, lam in enumerate(values):
        product = lam**0
        for j, other in enumerate(values):
            if j != m:
                product *= lam - other
        products.append(product)
    return products


def _reconstruction_tolerance(rs: RootSet, spec: SequenceSpec) -> mpmath.mpf:
    largest = max([1] + [abs(term) for term in spec.initial_terms])
    return tolerance_for(rs.precision_bits, 4) * largest


def _build_weights(rs: RootSet, spec: SequenceSpec, weights: list[mpmath.mpc]) -> WeightVector:
    vector = WeightVector(
        k=rs.k,
        weights=tuple(HPComplex.from_value(c, rs.precision_bits) for c in weights),
        roots=rs,
        source_spec=spec,
    )
    worst = max(vector.reconstruction_residuals())
    if worst > _reconstruction_tolerance(rs, spec):
        raise PrecisionExhausted(
            "Weights do not reproduce the initial terms",
            k=rs.k,
            precision_bits=rs.precision_bits,
            suggested_precision=2 * rs.precision_bits,
            detail={"max_residual": mpmath.nstr(worst, 8)},
        )
    return vector


def weights_special(rs: RootSet) -> WeightVector:
    ctx = precision_context(rs.precision_bits)
    weights = [1 / product for product in _differences(rs.values(ctx))]
    return _build_weights(rs, SequenceSpec.special(rs.k), weights)


def weight_numerator(lam: mpmath.mpc, spec: SequenceSpec) -> mpmath.mpc:
    """Sum over p of (lambda^(k-p) - lambda^(k-p-1) - ... - 1) * t_{p-1}."""
    k = spec.k
    total = lam * 0
    for p in range(1, k + 1):
        degree = k - p
        factor = lam**degree - sum((lam ** (degree - i) for i in range(1, degree + 1)), lam * 0)
        total += factor * spec.initial_terms[p - 1]
    return total


def weights_like(rs: RootSet, spec: SequenceSpec) -> WeightVector:
    _require_matching_order(rs, spec)
    ctx = precision_context(rs.precision_bits)
    values = rs.values(ctx)
    weights = [
        weight_numerator(lam, spec) / product
        for lam, product in zip(values, _differences(values))
    ]
    return _build_weights(rs, spec, weights)


def eigen_coefficients(rs: RootSet, spec: SequenceSpec) -> WeightVector:
    """Coordinates of the initial-term vector in the eigenbasis (1, lambda, ..., lambda^(k-1))."""
    _require_matching_order(rs, spec)
    ctx = precision_context(rs.precision_bits)
    values = rs.values(ctx)
    vandermonde = [[lam**p for lam in values] for p in range(rs.k)]
    try:
        solution = ctx.lu_solve(ctx.matrix(vandermonde), ctx.matrix(list(spec.initial_terms)))
    except ZeroDivisionError as exc:
        raise IllConditioned(
            "Vandermonde system is singular at this precision",
            k=rs.k,
            precision_bits=rs.precision_bits,
        ) from exc
    coefficients = [ctx.mpc(solution[m]) for m in range(rs.k)]
    residual = max(
        ctx.fabs(ctx.fsum(row[m] * coefficients[m] for m in range(rs.k)) - term)
        for row, term in zip(vandermonde, spec.initial_terms)
    )
    if residual > _reconstruction_tolerance(rs, spec):
        raise IllConditioned(
            "Vandermonde solve residual above tolerance",
            k=rs.k,
            precision_bits=rs.precision_bits,
            detail={"residual": mpmath.nstr(residual, 8)},
        )
    return WeightVector(
        k=rs.k,
        weights=tuple(HPComplex.from_value(c, rs.precision_bits) for c in coefficients),
        roots=rs,
        source_spec=spec,
    )


def _evaluate(
    ctx: mpmath.MPContext, weights: list[mpmath.mpc], values: list[mpmath.mpc], exponent: int
) -> tuple[mpmath.mpc, mpmath.mpf]:
    terms = [c * lam**exponent for c, lam in zip(weights, values)]
    return ctx.fsum(terms), ctx.fsum(ctx.fabs(term) for term in terms)


def _report(
    *,
    ctx: mpmath.MPContext,
    rs: RootSet,
    spec: SequenceSpec,
    method: EvaluationMethod,
    n: int,
    aligned_index: int,
    approx: mpmath.mpc,
    magnitude: mpmath.mpf,
    started: float,
) -> EvaluationReport:
    recovered = int(ctx.nint(approx.real))
    gap = ctx.fabs(approx - recovered)
    error_bound = magnitude * (n + rs.k + 1) * ctx.ldexp(ctx.one, _ERROR_GUARD_BITS - rs.precision_bits)
    if gap >= ROUNDING_GAP_LIMIT or error_bound >= ROUNDING_GAP_LIMIT:
        needed = int(ctx.log(magnitude * (n + rs.k + 1) + 1, 2)) + _ERROR_GUARD_BITS + 16
        suggested = max(default_precision_for(spec, aligned_index), needed, rs.precision_bits + 1)
        raise PrecisionExhausted(
            f"{method.value} at n={n} cannot be rounded at {rs.precision_bits} bits",
            k=rs.k,
            precision_bits=rs.precision_bits,
            suggested_precision=suggested,
            detail={
                "n": n,
                "rounding_gap": mpmath.nstr(gap, 6),
                "error_bound": mpmath.nstr(error_bound, 6),
            },
        )
    return EvaluationReport(
        n=n,
        method=method,
        approx_value=HPComplex.from_value(approx, rs.precision_bits),
        rounding_gap=gap,
        elapsed=timedelta(seconds=time.perf_counter() - started),
        aligned_index=aligned_index,
        recovered=recovered,
        error_bound=error_bound,
    )


def nth_closed_form(w: WeightVector, n: int) -> EvaluationReport:
    _require_index(n, 0)
    started = time.perf_counter()
    rs = w.roots
    ctx = precision_context(rs.precision_bits)
    weights = [weight.value(ctx) for weight in w.weights]
    approx, magnitude = _evaluate(ctx, weights, rs.values(ctx), n)
    return _report(
        ctx=ctx,
        rs=rs,
        spec=w.source_spec,
        method=EvaluationMethod.CLOSED_FORM,
        n=n,
        aligned_index=n,
        approx=approx,
        magnitude=magnitude,
        started=started,
    )


def _dresden_coefficients(ctx: mpmath.MPContext, rs: RootSet) -> list[mpmath.mpc]:
    k = rs.k
    return [(lam - 1) / (2 + (k + 1) * (lam - 2)) for lam in rs.values(ctx)]


def dresden_nth(rs: RootSet, n: int) -> EvaluationReport:
    """Dresden's indexing (F_1 = 1): the value equals the special sequence at n + k - 2."""
    _require_index(n, 1)
    started = time.perf_counter()
    ctx = precision_context(rs.precision_bits)
    approx, magnitude = _evaluate(ctx, _dresden_coefficients(ctx, rs), rs.values(ctx), n - 1)
    return _report(
        ctx=ctx,
        rs=rs,
        spec=SequenceSpec.special(rs.k),
        method=EvaluationMethod.DRESDEN,
        n=n,
        aligned_index=n + rs.k - 2,
        approx=approx,
        magnitude=magnitude,
        started=started,
    )


def _bacani_rabago_weights(
    ctx: mpmath.MPContext, rs: RootSet, spec: SequenceSpec
) -> list[mpmath.mpc]:
    """Fold the quoted G_n^(k) expression into one coefficient per root.

    G_0 pairs with alpha^(n-2), G_{m+1} with alpha^(n-2) + ... + alpha^(n-3-m)
    for m = 0..k-3, and G_{k-1} with alpha^(n-1).
    """
    terms = spec.initial_terms
    k = rs.k
    weights = []
    for a, alpha in zip(_dresden_coefficients(ctx, rs), rs.values(ctx)):
        inverse = 1 / alpha
        factor = terms[0] * inverse**2 + terms[k - 1] * inverse
        for m in range(k - 2):
            factor += terms[m + 1] * ctx.fsum(inverse ** (2 + j) for j in range(m + 2))
        weights.append(a * factor)
    return weights


def calibrate_bacani_rabago_offset(rs: RootSet) -> int:
    """Offset d such that the quoted formula at n equals the exact term n + d.

    Found by matching a probe sequence (1, 2, ..., k) on n = 2..20; cached per
    (k, precision_bits).
    """
    key = (rs.k, rs.precision_bits)
    with _OFFSET_CACHE_LOCK:
        if key in _OFFSET_CACHE:
            return _OFFSET_CACHE[key]

    ctx = precision_context(rs.precision_bits)
    probe = SequenceSpec(rs.k, tuple(range(1, rs.k + 1)))
    weights = _bacani_rabago_weights(ctx, rs, probe)
    values = rs.values(ctx)
    observed = [int(ctx.nint(_evaluate(ctx, weights, values, n)[0].real)) for n in _CALIBRATION_INDICES]
    first, last = _CALIBRATION_INDICES[0], _CALIBRATION_INDICES[-1]
    exact = sequence_slice(probe, 0, last + rs.k)
    for offset in range(-rs.k, rs.k + 1):
        if first + offset < 0:
            continue
        if observed == exact[first + offset : last + offset + 1]:
            logger.info("Bacani-Rabago offset for k=%s is %s", rs.k, offset)
            with _OFFSET_CACHE_LOCK:
                _OFFSET_CACHE[key] = offset
            return offset
    raise CalibrationFailed(
        "No index offset aligns the Bacani-Rabago formula with the recurrence",
        k=rs.k,
        precision_bits=rs.precision_bits,
    )


def bacani_rabago_nth(rs: RootSet, spec: SequenceSpec, n: int) -> EvaluationReport:
    _require_matching_order(rs, spec)
    _require_index(n, 2)
    started = time.perf_counter()
    offset = calibrate_bacani_rabago_offset(rs)
    ctx = precision_context(rs.precision_bits)
    approx, magnitude = _evaluate(ctx, _bacani_rabago_weights(ctx, rs, spec), rs.values(ctx), n)
    return _report(
        ctx=ctx,
        rs=rs,
        spec=spec,
        method=EvaluationMethod.BACANI_RABAGO,
        n=n,
        aligned_index=n + offset,
        approx=approx,
        magnitude=magnitude,
        started=started,
    )


def binet_nth(rs: RootSet, n: int) -> EvaluationReport:
    """Classic Binet formula (phi^n - psi^n) / sqrt(5); only defined for k = 2."""
    if rs.k != 2:
        raise SequenceSpecError(f"Binet's formula needs k=2, got k={rs.k}")
    _require_index(n, 0)
    started = time.perf_counter()
    ctx = precision_context(rs.precision_bits)
    phi = rs.dominant.value(ctx)
    psi = rs.roots[1 - rs.dominant_index].value(ctx)
    root5 = ctx.sqrt(5)
    weights = [1 / root5, -1 / root5]
    approx, magnitude = _evaluate(ctx, weights, [phi, psi], n)
    return _report(
        ctx=ctx,
        rs=rs,
        spec=SequenceSpec.special(2),
        method=EvaluationMethod.BINET,
        n=n,
        aligned_index=n,
        approx=ctx.mpc(approx),
        magnitude=magnitude,
        started=started,
    )


def product_identity_check(rs: RootSet) -> ResidualReport:
    """((k+1) lambda - 2k) lambda^(k-1) / (lambda - 1) against prod_{j != m} (lambda - lambda_j)."""
    ctx = precision_context(rs.precision_bits)
    k = rs.k
    values = rs.values(ctx)
    residuals = []
    for lam, product in zip(values, _differences(values)):
        lhs = ((k + 1) * lam - 2 * k) * lam ** (k - 1) / (lam - 1)
        residuals.append(ctx.fabs(lhs - product))
    return ResidualReport(
        name="product_identity",
        k=k,
        precision_bits=rs.precision_bits,
        residuals=tuple(residuals),
        threshold=tolerance_for(rs.precision_bits, 4),
    )


def coefficient_unity_check(rs: RootSet) -> ResidualReport:
    """Closed form at n = k for each unit spec e_p; every value must be 1."""
    ctx = precision_context(rs.precision_bits)
    values = rs.values(ctx)
    residuals = []
    for p in range(rs.k):
        vector = weights_like(rs, SequenceSpec.unit(rs.k, p))
        approx, _ = _evaluate(ctx, [c.value(ctx) for c in vector.weights], values, rs.k)
        residuals.append(ctx.fabs(approx - 1))
    return ResidualReport(
        name="coefficient_unity",
        k=rs.k,
        precision_bits=rs.precision_bits,
        residuals=tuple(residuals),
        threshold=tolerance_for(rs.precision_bits, 4),
    )


def required_precision(spec: SequenceSpec, n: int) -> int:
    """Precision needed to round the closed form at ``n``, including the initial-term size."""
    largest = max([1] + [abs(term) for term in spec.initial_terms])
    return default_precision_for(spec, n) + math.ceil(math.log2(largest + 1))
