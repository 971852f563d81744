from __future__ import annotations

import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import timedelta
from threading import Lock
from typing import Callable, Iterable

import mpmath

from kbonacci.core.errors import CalibrationFailed, NumericalError, SequenceSpecError
from kbonacci.core.models import ResidualReport, RootSet, SequenceSpec, WeightVector
from kbonacci.core.precision import default_precision_for, precision_context, tolerance_for
from kbonacci.sequences.closed_form_service import (
    ROUNDING_GAP_LIMIT,
    bacani_rabago_nth,
    calibrate_bacani_rabago_offset,
    coefficient_unity_check,
    dresden_nth,
    eigen_coefficients,
    nth_closed_form,
    product_identity_check,
    required_precision,
    weights_like,
    weights_special,
)
from kbonacci.sequences.exact_service import nth_by_matrix_power, sequence_slice
from kbonacci.sequences.roots_service import find_roots, root_identity_check, vieta_check

logger = logging.getLogger(__name__)

MIN_MATCHED_TERMS = 10
DIAGONAL_ORACLE_MAX_K = 5
DIAGONAL_ORACLE_TERMS = 15
SYMMETRY_ROWS = 8
DRESDEN_SHIFT_MAX_N = 200
DEFAULT_INIT_RANGE = 1_000_000

# k -> (slope, offset) locked by the first successful diagonal calibration
_DIAGONAL_CACHE: dict[int, tuple[int, int]] = {}
_DIAGONAL_CACHE_LOCK = Lock()


@dataclass(frozen=True)
class PascalTriangleK:
    """Rows of C_k(n, i) = C_k(n-1, i) + C_k(n-1, i-1) + ... + C_k(n-k+1, i-1)."""

    k: int
    rows: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        for n, row in enumerate(self.rows):
            if len(row) != n + 1 or row[0] != 1 or row[-1] != 1:
                raise SequenceSpecError(f"Row {n} of the k={self.k} triangle is malformed")

    @property
    def row_count(self) -> int:
        return len(self.rows)

    def entry(self, n: int, i: int) -> int:
        if n < 0 or i < 0 or i > n:
            return 0
        if n >= self.row_count:
            raise SequenceSpecError(f"Row {n} not built (triangle has {self.row_count} rows)")
        return self.rows[n][i]

    def row(self, n: int) -> tuple[int, ...]:
        return self.rows[n]


def build_triangle(k: int, rows: int) -> PascalTriangleK:
    if k < 2:
        raise SequenceSpecError(f"Order k must be >= 2, got {k}")
    if rows < 1:
        raise SequenceSpecError(f"Triangle needs at least one row, got {rows}")
    built: list[tuple[int, ...]] = []

    def entry(n: int, i: int) -> int:
        if n < 0 or i < 0 or i > n:
            return 0
        return built[n][i]

    for n in range(rows):
        row = [1] * (n + 1)
        for i in range(1, n):
            row[i] = entry(n - 1, i) + sum(entry(n - j, i - 1) for j in range(1, k))
        built.append(tuple(row))
    return PascalTriangleK(k, tuple(built))


@dataclass(frozen=True)
class DiagonalCalibration:
    """Diagonal d sums C_k(d - slope*i, i); sums[d] equals the special sequence at d + offset."""

    k: int
    slope: int
    offset: int
    sums: tuple[int, ...]
    matched_terms: int

    def to_dict(self) -> dict[str, object]:
        return {
            "k": self.k,
            "slope": self.slope,
            "offset": self.offset,
            "sums": [str(value) for value in self.sums],
            "matched_terms": self.matched_terms,
        }


def _diagonal(tri: PascalTriangleK, slope: int, d: int) -> int:
    total, i = 0, 0
    while d - slope * i >= 0:
        total += tri.entry(d - slope * i, i)
        i += 1
    return total


def calibrate_diagonals(tri: PascalTriangleK, count: int) -> DiagonalCalibration:
    if count < MIN_MATCHED_TERMS:
        raise SequenceSpecError(f"Calibration needs at least {MIN_MATCHED_TERMS} diagonals")
    if count > tri.row_count:
        raise SequenceSpecError(f"{count} diagonals need {count} rows, triangle has {tri.row_count}")
    k = tri.k
    exact = sequence_slice(SequenceSpec.special(k), 0, count + 2 * k)

    with _DIAGONAL_CACHE_LOCK:
        locked = _DIAGONAL_CACHE.get(k)
    candidates = [locked] if locked else [
        (slope, offset) for slope in range(1, k) for offset in range(2 * k + 1)
    ]
    for slope, offset in candidates:
        sums = [_diagonal(tri, slope, d) for d in range(count)]
        if sums == exact[offset : offset + count]:
            if not locked:
                logger.info("Diagonal mapping for k=%s: slope %s offset %s", k, slope, offset)
                with _DIAGONAL_CACHE_LOCK:
                    _DIAGONAL_CACHE.setdefault(k, (slope, offset))
            return DiagonalCalibration(k, slope, offset, tuple(sums), count)
    raise CalibrationFailed("No rising-diagonal mapping reproduces the k-generalized sequence", k=k)


def diagonal_sums(tri: PascalTriangleK, count: int) -> list[int]:
    return list(calibrate_diagonals(tri, count).sums)


def base_case_coefficients(k: int) -> list[int]:
    """Exact coefficient of each t_p in term k, t_0 first; all of them are 1."""
    special = sequence_slice(SequenceSpec.special(k), 0, 2 * k)
    by_distance = [
        special[k + q] - sum(special[k + r] for r in range(q)) for q in range(k)
    ]
    return list(reversed(by_distance))


@dataclass(frozen=True)
class ProbeFailure:
    n: int | None
    method: str
    reason: str
    detail: dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict[str, object]:
        return {"n": self.n, "method": self.method, "reason": self.reason, "detail": self.detail}


@dataclass(frozen=True)
class ProbeResult:
    """All method outputs for one index n; closed-form entries are rounded integers."""

    n: int
    recurrence: int
    matrix_power: int
    closed_form: int | None = None
    rounding_gap: mpmath.mpf | None = None
    dresden: int | None = None
    bacani_rabago: int | None = None
    max_gap: mpmath.mpf | None = None
    failures: tuple[ProbeFailure, ...] = ()
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, object]:
        def text(value: int | None) -> str | None:
            return None if value is None else str(value)

        return {
            "n": self.n,
            "recurrence": str(self.recurrence),
            "matrix_power": str(self.matrix_power),
            "closed_form": text(self.closed_form),
            "rounding_gap": None if self.rounding_gap is None else mpmath.nstr(self.rounding_gap, 6),
            "dresden": text(self.dresden),
            "bacani_rabago": text(self.bacani_rabago),
        }


@dataclass(frozen=True)
class CrossCheckReport:
    spec: SequenceSpec
    n_from: int
    n_max: int
    precision_bits: int
    probes: tuple[ProbeResult, ...]
    failures: tuple[ProbeFailure, ...]
    max_rounding_gap: mpmath.mpf | None
    bacani_rabago_offset: int | None
    timings: dict[str, timedelta]

    @property
    def failure_count(self) -> int:
        return len(self.failures)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self, include_probes: bool = False) -> dict[str, object]:
        payload: dict[str, object] = {
            "spec": self.spec.to_dict(),
            "n_from": self.n_from,
            "n_max": self.n_max,
            "precision_bits": self.precision_bits,
            "failure_count": self.failure_count,
            "failures": [failure.to_dict() for failure in self.failures],
            "max_rounding_gap": (
                None if self.max_rounding_gap is None else mpmath.nstr(self.max_rounding_gap, 6)
            ),
            "mappings": {
                "dresden_offset": self.spec.k - 2 if self.spec.is_special else None,
                "bacani_rabago_offset": self.bacani_rabago_offset,
            },
        }
        if include_probes:
            payload["probes"] = [probe.to_dict() for probe in self.probes]
        return payload


def _setup_failure(method: str, exc: NumericalError) -> ProbeFailure:
    return ProbeFailure(None, method, type(exc).__name__, exc.to_dict())


def _probe(
    spec: SequenceSpec,
    n: int,
    exact: list[int],
    weights: WeightVector | None,
    rs: RootSet | None,
    offset: int | None,
) -> ProbeResult:
    failures: list[ProbeFailure] = []
    timings: dict[str, float] = {}
    gaps: list[mpmath.mpf] = []
    recurrence = exact[n]

    started = time.perf_counter()
    matrix_power = nth_by_matrix_power(spec, n)
    timings["matrix_power"] = time.perf_counter() - started
    if matrix_power != recurrence:
        failures.append(
            ProbeFailure(n, "matrix_power", "mismatch", {"expected": str(recurrence)})
        )

    def approximate(method: str, run: Callable[[], object], target: int) -> int | None:
        try:
            report = run()
        except NumericalError as exc:
            failures.append(ProbeFailure(n, method, type(exc).__name__, exc.to_dict()))
            return None
        timings[method] = report.elapsed.total_seconds()
        gaps.append(report.rounding_gap)
        if report.recovered != exact[target]:
            failures.append(
                ProbeFailure(
                    n,
                    method,
                    "mismatch",
                    {"expected": str(exact[target]), "recovered": str(report.recovered)},
                )
            )
        return report.recovered

    closed_form = rounding_gap = dresden = bacani_rabago = None
    if weights is not None:
        closed_form = approximate("closed_form", lambda: nth_closed_form(weights, n), n)
        rounding_gap = gaps[-1] if closed_form is not None else None
    if rs is not None and spec.is_special and n >= 1:
        dresden = approximate("dresden", lambda: dresden_nth(rs, n), n + spec.k - 2)
    if rs is not None and offset is not None and n >= 2:
        bacani_rabago = approximate(
            "bacani_rabago", lambda: bacani_rabago_nth(rs, spec, n), n + offset
        )
    return ProbeResult(
        n=n,
        recurrence=recurrence,
        matrix_power=matrix_power,
        closed_form=closed_form,
        rounding_gap=rounding_gap,
        dresden=dresden,
        bacani_rabago=bacani_rabago,
        max_gap=max(gaps) if gaps else None,
        failures=tuple(failures),
        timings=timings,
    )


def probe_range(
    spec: SequenceSpec,
    n_from: int,
    n_to: int,
    precision_bits: int,
    *,
    workers: int = 1,
) -> CrossCheckReport:
    """Evaluate every method on n_from..n_to and compare each against the recurrence."""
    if n_from < 0 or n_to < n_from:
        raise SequenceSpecError(f"Invalid range {n_from}..{n_to}")
    k = spec.k
    timings: dict[str, float] = {}

    started = time.perf_counter()
    exact = sequence_slice(spec, 0, n_to + 2 * k)
    timings["recurrence"] = time.perf_counter() - started

    setup_failures: list[ProbeFailure] = []
    rs = weights = offset = None
    try:
        rs = find_roots(k, precision_bits)
    except NumericalError as exc:
        setup_failures.append(_setup_failure("roots", exc))
    if rs is not None:
        try:
            weights = weights_like(rs, spec)
        except NumericalError as exc:
            setup_failures.append(_setup_failure("closed_form", exc))
        try:
            offset = calibrate_bacani_rabago_offset(rs)
        except NumericalError as exc:
            setup_failures.append(_setup_failure("bacani_rabago", exc))

    def run(n: int) -> ProbeResult:
        return _probe(spec, n, exact, weights, rs, offset)

    indices = range(n_from, n_to + 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            probes = list(executor.map(run, indices))
    else:
        probes = [run(n) for n in indices]

    failures = setup_failures + [failure for probe in probes for failure in probe.failures]
    for probe in probes:
        for method, seconds in probe.timings.items():
            timings[method] = timings.get(method, 0.0) + seconds
    gaps = [probe.max_gap for probe in probes if probe.max_gap is not None]
    if failures:
        logger.warning(
            "Cross-check k=%s n=%s..%s: %s failures at %s bits",
            k,
            n_from,
            n_to,
            len(failures),
            precision_bits,
        )
    return CrossCheckReport(
        spec=spec,
        n_from=n_from,
        n_max=n_to,
        precision_bits=precision_bits,
        probes=tuple(probes),
        failures=tuple(failures),
        max_rounding_gap=max(gaps) if gaps else None,
        bacani_rabago_offset=offset,
        timings={method: timedelta(seconds=seconds) for method, seconds in timings.items()},
    )


def cross_check(
    spec: SequenceSpec, n_max: int, precision_bits: int, *, workers: int = 1
) -> CrossCheckReport:
    if n_max < spec.k:
        raise SequenceSpecError(f"n_max must be >= k={spec.k}, got {n_max}")
    return probe_range(spec, 0, n_max, precision_bits, workers=workers)


@dataclass(frozen=True)
class CheckResult:
    name: str
    k: int
    passed: bool
    max_residual: mpmath.mpf | int | None = None
    threshold: mpmath.mpf | None = None
    detail: dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_residuals(cls, report: ResidualReport, **detail: object) -> CheckResult:
        return cls(
            name=report.name,
            k=report.k,
            passed=report.passed,
            max_residual=report.max_residual,
            threshold=report.threshold,
            detail={"residuals": [mpmath.nstr(value, 6) for value in report.residuals], **detail},
        )

    def to_dict(self) -> dict[str, object]:
        def text(value: object) -> str | None:
            if value is None:
                return None
            return str(value) if isinstance(value, int) else mpmath.nstr(value, 6)

        return {
            "name": self.name,
            "k": self.k,
            "passed": self.passed,
            "max_residual": text(self.max_residual),
            "threshold": text(self.threshold),
            "detail": self.detail,
        }


@dataclass(frozen=True)
class VerificationReport:
    k_values: tuple[int, ...]
    n_max: int
    trials: int
    seed: int
    checks: tuple[CheckResult, ...]
    timings: dict[str, timedelta]

    @property
    def failures(self) -> list[CheckResult]:
        return [check for check in self.checks if not check.passed]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict[str, object]:
        return {
            "k_values": list(self.k_values),
            "n_max": self.n_max,
            "trials": self.trials,
            "seed": self.seed,
            "check_count": len(self.checks),
            "failure_count": len(self.failures),
            "checks": [check.to_dict() for check in self.checks],
        }


def _guarded(name: str, k: int, run: Callable[[], CheckResult]) -> CheckResult:
    try:
        return run()
    except NumericalError as exc:
        logger.warning("Check %s failed for k=%s: %s", name, k, exc)
        return CheckResult(name=name, k=k, passed=False, detail=exc.to_dict())


def random_specs(k: int, trials: int, rng: random.Random, init_range: int) -> list[SequenceSpec]:
    return [
        SequenceSpec(k, tuple(rng.randint(-init_range, init_range) for _ in range(k)))
        for _ in range(trials)
    ]


def _root_certificates(rs: RootSet) -> CheckResult:
    return CheckResult(
        name="root_certificates",
        k=rs.k,
        passed=True,
        max_residual=max(rs.residuals),
        threshold=rs.tolerance,
        detail={
            "min_separation": mpmath.nstr(rs.min_separation, 8),
            "dominant": rs.dominant.nstr(20),
        },
    )


def _weight_paths(rs: RootSet, specs: Iterable[SequenceSpec]) -> CheckResult:
    ctx = precision_context(rs.precision_bits)
    threshold = tolerance_for(rs.precision_bits, 4)
    worst = ctx.zero
    pairs = [(weights_special(rs), weights_like(rs, SequenceSpec.special(rs.k)))]
    pairs += [(eigen_coefficients(rs, spec), weights_like(rs, spec)) for spec in specs]
    for left, right in pairs:
        for a, b in zip(left.weights, right.weights):
            worst = max(worst, ctx.fabs(a.value(ctx) - b.value(ctx)))
    return CheckResult("weight_paths", rs.k, worst < threshold, worst, threshold)


def _base_case(rs: RootSet, specs: Iterable[SequenceSpec]) -> CheckResult:
    ctx = precision_context(rs.precision_bits)
    worst = ctx.zero
    mismatches = []
    for spec in specs:
        report = nth_closed_form(weights_like(rs, spec), rs.k)
        expected = sum(spec.initial_terms)
        worst = max(worst, ctx.fabs(report.approx_value.value(ctx) - expected))
        if report.recovered != expected:
            mismatches.append([str(term) for term in spec.initial_terms])
    return CheckResult(
        "base_case",
        rs.k,
        not mismatches,
        worst,
        ROUNDING_GAP_LIMIT,
        {"mismatches": mismatches},
    )


def _base_case_coefficients(k: int) -> CheckResult:
    coefficients = base_case_coefficients(k)
    worst = max(abs(value - 1) for value in coefficients)
    return CheckResult(
        "base_case_coefficients",
        k,
        worst == 0,
        worst,
        detail={"coefficients": [str(value) for value in coefficients]},
    )


def _dresden_shift(rs: RootSet, n_max: int) -> CheckResult:
    """Dresden at n against the special closed form at n + k - 2, as an absolute residual.

    Roots run at twice the rounding budget of the largest compared index.
    """
    top = min(n_max, DRESDEN_SHIFT_MAX_N)
    bits = max(rs.precision_bits, 2 * default_precision_for(SequenceSpec.special(rs.k), top + rs.k))
    if bits != rs.precision_bits:
        rs = find_roots(rs.k, bits)
    ctx = precision_context(bits)
    weights = weights_special(rs)
    threshold = tolerance_for(rs.precision_bits, 4)
    worst = ctx.zero
    for n in range(1, top + 1):
        left = dresden_nth(rs, n).approx_value.value(ctx)
        right = nth_closed_form(weights, n + rs.k - 2).approx_value.value(ctx)
        worst = max(worst, ctx.fabs(left - right))
    return CheckResult("dresden_shift", rs.k, worst < threshold, worst, threshold, {"precision_bits": bits})


def _bacani_rabago_offset(rs: RootSet) -> CheckResult:
    offset = calibrate_bacani_rabago_offset(rs)
    return CheckResult("bacani_rabago_offset", rs.k, True, detail={"offset": offset})


def _cross_check(spec: SequenceSpec, n_max: int, bits: int, workers: int) -> CheckResult:
    report = cross_check(spec, n_max, bits, workers=workers)
    detail = report.to_dict()
    detail.pop("spec")
    detail["initial_terms"] = [str(term) for term in spec.initial_terms]
    return CheckResult(
        "cross_check",
        spec.k,
        report.passed,
        report.max_rounding_gap,
        ROUNDING_GAP_LIMIT,
        detail,
    )


def _diagonal_oracle(k: int) -> CheckResult:
    calibration = calibrate_diagonals(build_triangle(k, DIAGONAL_ORACLE_TERMS), DIAGONAL_ORACLE_TERMS)
    return CheckResult("diagonal_oracle", k, True, detail=calibration.to_dict())


def _triangle_symmetry(k: int) -> CheckResult:
    tri = build_triangle(k, SYMMETRY_ROWS)
    asymmetric = [n for n, row in enumerate(tri.rows) if row != row[::-1]]
    return CheckResult("triangle_symmetry", k, not asymmetric, detail={"asymmetric_rows": asymmetric})


def verify_order(
    k: int,
    n_max: int,
    specs: list[SequenceSpec],
    *,
    precision_bits: int | None = None,
    workers: int = 1,
) -> list[CheckResult]:
    """Every identity and oracle check for one order k; ``specs`` are the random trials."""
    largest = max([1] + [abs(term) for spec in specs for term in spec.initial_terms])
    bits = precision_bits or required_precision(SequenceSpec(k, (largest,) * k), n_max + k)
    checks: list[CheckResult] = []
    try:
        rs = find_roots(k, bits)
    except NumericalError as exc:
        logger.warning("Root certification failed for k=%s at %s bits", k, bits)
        return [CheckResult("root_certificates", k, False, detail=exc.to_dict())]

    checks.append(_root_certificates(rs))
    checks.append(CheckResult.from_residuals(vieta_check(rs)))
    checks.append(CheckResult.from_residuals(root_identity_check(rs)))
    checks.append(CheckResult.from_residuals(product_identity_check(rs)))
    checks.append(_guarded("coefficient_unity", k, lambda: CheckResult.from_residuals(coefficient_unity_check(rs))))
    checks.append(_base_case_coefficients(k))
    checks.append(_guarded("base_case", k, lambda: _base_case(rs, [SequenceSpec.special(k), *specs])))
    checks.append(_guarded("weight_paths", k, lambda: _weight_paths(rs, specs)))
    checks.append(_guarded("dresden_shift", k, lambda: _dresden_shift(rs, n_max)))
    checks.append(_guarded("bacani_rabago_offset", k, lambda: _bacani_rabago_offset(rs)))
    for spec in [SequenceSpec.special(k), *specs]:
        checks.append(_guarded("cross_check", k, lambda spec=spec: _cross_check(spec, n_max, bits, workers)))
    if k <= DIAGONAL_ORACLE_MAX_K:
        checks.append(_guarded("diagonal_oracle", k, lambda: _diagonal_oracle(k)))
    if k <= 3:
        checks.append(_triangle_symmetry(k))
    return checks


def run_verification(
    k_values: Iterable[int],
    n_max: int,
    trials: int,
    seed: int,
    precision: int | None = None,
    *,
    workers: int = 1,
    init_range: int = DEFAULT_INIT_RANGE,
) -> VerificationReport:
    k_values = tuple(k_values)
    if not k_values:
        raise SequenceSpecError("Empty k range")
    if any(k < 2 for k in k_values):
        raise SequenceSpecError("Every k must be >= 2")
    if trials < 0:
        raise SequenceSpecError(f"trials must be >= 0, got {trials}")
    if n_max < max(k_values):
        raise SequenceSpecError(f"n_max must be >= {max(k_values)}, got {n_max}")

    rng = random.Random(seed)
    checks: list[CheckResult] = []
    timings: dict[str, timedelta] = {}
    for k in k_values:
        started = time.perf_counter()
        specs = random_specs(k, trials, rng, init_range)
        checks.extend(verify_order(k, n_max, specs, precision_bits=precision, workers=workers))
        timings[f"k={k}"] = timedelta(seconds=time.perf_counter() - started)
    report = VerificationReport(k_values, n_max, trials, seed, tuple(checks), timings)
    logger.info("Verification finished: %s checks, %s failed", len(checks), len(report.failures))
    return report
