from __future__ import annotations

import csv
import math
import time
from io import StringIO
from typing import Any, Callable

import click
import mpmath
from flask import current_app

from kbonacci.core.errors import NumericalError, PrecisionExhausted, SequenceSpecError
from kbonacci.core.models import (
    EvaluationMethod,
    EvaluationReport,
    HPComplex,
    RootSet,
    SequenceSpec,
)
from kbonacci.core.precision import MIN_PRECISION_BITS, default_precision_for, precision_context
from kbonacci.sequences import sequences_bp
from kbonacci.sequences.closed_form_service import (
    bacani_rabago_nth,
    binet_nth,
    dresden_nth,
    nth_closed_form,
    weights_like,
)
from kbonacci.sequences.envelope import build_envelope
from kbonacci.sequences.exact_service import evaluate_exact, sequence_slice
from kbonacci.sequences.roots_service import find_roots
from kbonacci.sequences.verify_service import probe_range, run_verification

EXIT_VERIFICATION_FAILED = 1
EXIT_NUMERICAL = 3

CSV_HEADERS = ["n", "recurrence", "matrix_power", "closed_form", "rounding_gap"]
MAX_SEED = 2**64 - 1

# CLI spelling -> evaluation method
METHOD_CHOICES = {
    "recurrence": EvaluationMethod.RECURRENCE,
    "matrix-power": EvaluationMethod.MATRIX_POWER,
    "closed-form": EvaluationMethod.CLOSED_FORM,
    "dresden": EvaluationMethod.DRESDEN,
    "bacani-rabago": EvaluationMethod.BACANI_RABAGO,
    "binet": EvaluationMethod.BINET,
}


def _parse_terms(_ctx: click.Context, _param: click.Parameter, value: str | None) -> tuple[int, ...] | None:
    if value is None:
        return None
    try:
        return tuple(int(part.strip()) for part in value.split(","))
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from exc


def _parse_k_range(_ctx: click.Context, _param: click.Parameter, value: str) -> tuple[int, ...]:
    low_text, _, high_text = value.partition("..")
    try:
        low = int(low_text)
        high = int(high_text) if high_text else low
    except ValueError as exc:
        raise click.BadParameter(f"expected K or LOW..HIGH, got {value!r}") from exc
    if low < 2 or high < low:
        raise click.BadParameter(f"range must be nonempty with k >= 2, got {value!r}")
    return tuple(range(low, high + 1))


def common_options(command: Callable[..., Any]) -> Callable[..., Any]:
    command = click.option(
        "--seed", type=click.IntRange(0, MAX_SEED), default=None, help="Random seed."
    )(command)
    command = click.option(
        "--precision",
        type=click.IntRange(min=MIN_PRECISION_BITS),
        default=None,
        help="Working precision in bits (default: derived from k and n).",
    )(command)
    return click.option("--json", "as_json", is_flag=True, help="Print the JSON envelope.")(command)


def _spec_from(k: int, init: tuple[int, ...] | None) -> SequenceSpec:
    try:
        return SequenceSpec(k, init) if init is not None else SequenceSpec.special(k)
    except SequenceSpecError as exc:
        raise click.UsageError(str(exc)) from exc


def _emit(command: str, inputs: dict[str, Any], results: dict[str, Any], timings: dict[str, float]) -> None:
    envelope = build_envelope(
        command,
        inputs,
        results,
        timings,
        schema_version=current_app.config["ENVELOPE_SCHEMA_VERSION"],
    )
    click.echo(envelope.to_json())


def _numerical_failure(
    ctx: click.Context, command: str, inputs: dict[str, Any], exc: NumericalError, as_json: bool
) -> None:
    current_app.logger.warning("%s failed: %s", command, exc)
    if as_json:
        _emit(command, inputs, {"error": exc.to_dict()}, {})
    else:
        message = f"Error: {type(exc).__name__}: {exc}"
        if isinstance(exc, PrecisionExhausted) and exc.suggested_precision:
            message += f" (retry with --precision {exc.suggested_precision})"
        click.echo(message, err=True)
    ctx.exit(EXIT_NUMERICAL)


def format_fixed(value: mpmath.mpf, digits: int, ctx: mpmath.MPContext) -> str:
    """Decimal string with exactly ``digits`` digits after the point, correctly rounded."""
    scaled = int(ctx.nint(value * ctx.mpf(10) ** digits))
    sign = "-" if scaled < 0 else ""
    whole, fraction = divmod(abs(scaled), 10**digits)
    if digits == 0:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{fraction:0{digits}d}"


def format_root(root: HPComplex, digits: int) -> str:
    ctx = precision_context(root.precision_bits)
    real = format_fixed(root.real, digits, ctx)
    if root.imag == 0:
        return real
    imag = format_fixed(abs(root.imag), digits, ctx)
    return f"{real}{'-' if root.imag < 0 else '+'}{imag}i"


def _evaluate(
    method: EvaluationMethod, spec: SequenceSpec, n: int, rs: RootSet | None
) -> EvaluationReport:
    if method is EvaluationMethod.CLOSED_FORM:
        return nth_closed_form(weights_like(rs, spec), n)
    if method is EvaluationMethod.DRESDEN:
        return dresden_nth(rs, n)
    if method is EvaluationMethod.BACANI_RABAGO:
        return bacani_rabago_nth(rs, spec, n)
    return binet_nth(rs, n)


def _precision_index(method: EvaluationMethod, k: int, n: int) -> int:
    if method in (EvaluationMethod.DRESDEN, EvaluationMethod.BACANI_RABAGO):
        return n + k
    return n


@sequences_bp.cli.command("compute")
@click.option("--k", "k", type=click.IntRange(min=2), required=True, help="Order of the recurrence.")
@click.option("--n", "n", type=click.IntRange(min=0), required=True, help="Index of the term.")
@click.option("--init", callback=_parse_terms, default=None, help="Initial terms t_0,...,t_{k-1}.")
@click.option(
    "--method",
    type=click.Choice(list(METHOD_CHOICES)),
    default="matrix-power",
    show_default=True,
)
@common_options
@click.pass_context
def compute(
    ctx: click.Context,
    k: int,
    n: int,
    init: tuple[int, ...] | None,
    method: str,
    as_json: bool,
    precision: int | None,
    seed: int | None,
) -> None:
    """Compute one term of a k-generalized Fibonacci-like sequence."""
    spec = _spec_from(k, init)
    evaluation = METHOD_CHOICES[method]
    if evaluation in (EvaluationMethod.DRESDEN, EvaluationMethod.BINET) and not spec.is_special:
        raise click.UsageError(f"--method {method} only applies to the initial terms 0,...,0,1")
    bits = precision or default_precision_for(spec, _precision_index(evaluation, k, n))
    inputs = {
        "k": k,
        "n": n,
        "initial_terms": [str(term) for term in spec.initial_terms],
        "method": evaluation.value,
        "precision_bits": None if evaluation.is_exact else bits,
        "seed": seed,
    }
    timings: dict[str, float] = {}
    started = time.perf_counter()
    try:
        if evaluation.is_exact:
            report = evaluate_exact(spec, n, evaluation)
        else:
            rs = find_roots(
                k,
                bits,
                max_sweeps=current_app.config["ROOT_MAX_SWEEPS"],
                max_newton_steps=current_app.config["ROOT_MAX_NEWTON_STEPS"],
            )
            timings["roots"] = time.perf_counter() - started
            report = _evaluate(evaluation, spec, n, rs)
    except SequenceSpecError as exc:
        raise click.UsageError(str(exc)) from exc
    except NumericalError as exc:
        _numerical_failure(ctx, "compute", inputs, exc, as_json)
        return
    timings["total"] = time.perf_counter() - started

    if as_json:
        _emit("compute", inputs, report.to_dict(), timings)
        return
    click.echo(str(report.value))
    if report.approx_value is not None:
        click.echo(f"rounding_gap: {mpmath.nstr(report.rounding_gap, 6)}")
        if report.aligned_index != n:
            click.echo(f"aligned_index: {report.aligned_index}")


@sequences_bp.cli.command("roots")
@click.option("--k", "k", type=click.IntRange(min=2), required=True, help="Order of the recurrence.")
@click.option("--digits", type=click.IntRange(min=1), default=None, help="Decimal digits to print.")
@common_options
@click.pass_context
def roots(
    ctx: click.Context,
    k: int,
    digits: int | None,
    as_json: bool,
    precision: int | None,
    seed: int | None,
) -> None:
    """Print the certified roots of the characteristic polynomial."""
    digits = digits or current_app.config["ROOT_DEFAULT_DIGITS"]
    bits = precision or max(
        default_precision_for(SequenceSpec.special(k), 0),
        math.ceil(digits * math.log2(10)) + 32,
    )
    inputs = {"k": k, "digits": digits, "precision_bits": bits, "seed": seed}
    started = time.perf_counter()
    try:
        rs = find_roots(
            k,
            bits,
            max_sweeps=current_app.config["ROOT_MAX_SWEEPS"],
            max_newton_steps=current_app.config["ROOT_MAX_NEWTON_STEPS"],
        )
    except NumericalError as exc:
        _numerical_failure(ctx, "roots", inputs, exc, as_json)
        return
    timings = {"roots": time.perf_counter() - started}

    formatted = [format_root(root, digits) for root in rs.roots]
    if as_json:
        results = rs.to_dict(digits)
        results["formatted"] = formatted
        _emit("roots", inputs, results, timings)
        return
    for index, (text, residual) in enumerate(zip(formatted, rs.residuals)):
        flag = "  (dominant)" if index == rs.dominant_index else ""
        click.echo(f"{text}  |P|={mpmath.nstr(residual, 3)}{flag}")
    click.echo(f"min_separation: {mpmath.nstr(rs.min_separation, 12)}")


@sequences_bp.cli.command("verify")
@click.option("--k", "k_values", callback=_parse_k_range, default="2..6", show_default=True, help="K or LOW..HIGH.")
@click.option("--n-max", type=click.IntRange(min=2), default=100, show_default=True)
@click.option("--trials", type=click.IntRange(min=0), default=None, help="Random specs per k.")
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Threads per cross-check.")
@common_options
@click.pass_context
def verify(
    ctx: click.Context,
    k_values: tuple[int, ...],
    n_max: int,
    trials: int | None,
    workers: int | None,
    as_json: bool,
    precision: int | None,
    seed: int | None,
) -> None:
    """Run every identity check and the cross-validation suite."""
    config = current_app.config
    trials = config["VERIFY_DEFAULT_TRIALS"] if trials is None else trials
    seed = config["VERIFY_DEFAULT_SEED"] if seed is None else seed
    inputs = {
        "k_values": list(k_values),
        "n_max": n_max,
        "trials": trials,
        "seed": seed,
        "precision_bits": precision,
    }
    try:
        report = run_verification(
            k_values,
            n_max,
            trials,
            seed,
            precision,
            workers=workers or config["VERIFY_WORKERS"],
            init_range=config["VERIFY_INIT_RANGE"],
        )
    except SequenceSpecError as exc:
        raise click.UsageError(str(exc)) from exc

    if as_json:
        _emit("verify", inputs, report.to_dict(), report.timings)
    else:
        for check in report.checks:
            status = "PASS" if check.passed else "FAIL"
            line = f"{status} k={check.k} {check.name}"
            if check.max_residual is not None:
                line += f" max_residual={check.to_dict()['max_residual']}"
            click.echo(line)
        click.echo(f"{len(report.checks)} checks, {len(report.failures)} failed")
    if not report.passed:
        current_app.logger.warning("verify: %s checks failed", len(report.failures))
        ctx.exit(EXIT_VERIFICATION_FAILED)


@sequences_bp.cli.command("table")
@click.option("--k", "k", type=click.IntRange(min=2), required=True, help="Order of the recurrence.")
@click.option("--from", "n_from", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--to", "n_to", type=click.IntRange(min=0), required=True)
@click.option("--init", callback=_parse_terms, default=None, help="Initial terms t_0,...,t_{k-1}.")
@click.option("--format", "output_format", type=click.Choice(["text", "csv", "json"]), default="text")
@common_options
@click.pass_context
def table(
    ctx: click.Context,
    k: int,
    n_from: int,
    n_to: int,
    init: tuple[int, ...] | None,
    output_format: str,
    as_json: bool,
    precision: int | None,
    seed: int | None,
) -> None:
    """Print a slice of the sequence, or every method side by side as CSV."""
    if n_to < n_from:
        raise click.BadParameter(f"--to {n_to} is below --from {n_from}", param_hint="--to")
    spec = _spec_from(k, init)
    if as_json:
        output_format = "json"
    started = time.perf_counter()

    if output_format == "text":
        click.echo(",".join(str(term) for term in sequence_slice(spec, n_from, n_to)))
        return

    bits = precision or default_precision_for(spec, n_to + k)
    inputs = {
        "k": k,
        "n_from": n_from,
        "n_to": n_to,
        "initial_terms": [str(term) for term in spec.initial_terms],
        "precision_bits": bits,
        "seed": seed,
    }
    report = probe_range(spec, n_from, n_to, bits, workers=current_app.config["VERIFY_WORKERS"])
    timings = {"total": time.perf_counter() - started}

    if output_format == "json":
        results = report.to_dict(include_probes=True)
        results["terms"] = [str(probe.recurrence) for probe in report.probes]
        _emit("table", inputs, results, timings)
    else:
        stream = StringIO()
        writer = csv.DictWriter(stream, fieldnames=CSV_HEADERS, lineterminator="\n")
        writer.writeheader()
        for probe in report.probes:
            row = probe.to_dict()
            writer.writerow({header: row[header] if row[header] is not None else "" for header in CSV_HEADERS})
        click.echo(stream.getvalue(), nl=False)
    if not report.passed:
        current_app.logger.warning("table: %s method disagreements", report.failure_count)
        ctx.exit(EXIT_VERIFICATION_FAILED)
