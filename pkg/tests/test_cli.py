from __future__ import annotations

import json

import mpmath
import pytest

from kbonacci.core.errors import EnvelopeError
from kbonacci.core.models import SequenceSpec
from kbonacci.core.precision import default_precision_for, precision_context
from kbonacci.sequences.commands import CSV_HEADERS, format_fixed
from kbonacci.sequences.envelope import build_envelope, validate_envelope
from kbonacci.sequences.exact_service import nth_by_recurrence


def _json(result):
    return json.loads(result.stdout)


def test_compute_recurrence_tribonacci(runner):
    result = runner.invoke(args=["compute", "--k", "3", "--n", "10", "--method", "recurrence"])
    assert result.exit_code == 0
    assert result.stdout.splitlines()[0] == "81"


def test_compute_defaults_to_exact_matrix_power(runner):
    result = runner.invoke(args=["compute", "--k", "2", "--n", "0"])
    assert result.exit_code == 0
    assert result.stdout.strip() == "0"

    result = runner.invoke(args=["compute", "--k", "2", "--n", "1000", "--json"])
    payload = _json(result)
    assert payload["inputs"]["method"] == "matrix_power"
    assert payload["results"]["value"] == str(nth_by_recurrence(SequenceSpec.special(2), 1000))


def test_compute_closed_form_with_explicit_precision(runner):
    result = runner.invoke(
        args=["compute", "--k", "2", "--n", "50", "--method", "closed-form", "--precision", "256", "--json"]
    )
    assert result.exit_code == 0
    payload = _json(result)
    assert payload["results"]["value"] == "12586269025"
    assert mpmath.mpf(payload["results"]["rounding_gap"]) < mpmath.mpf("1e-30")
    assert payload["inputs"]["precision_bits"] == 256
    assert payload["schema_version"] == "1.0.0"


@pytest.mark.parametrize(
    ("method", "extra", "expected"),
    [
        ("dresden", [], "55"),
        ("binet", [], "55"),
        ("bacani-rabago", ["--init", "0,1"], "55"),
    ],
)
def test_compute_alternative_closed_forms(runner, method, extra, expected):
    result = runner.invoke(args=["compute", "--k", "2", "--n", "10", "--method", method, *extra])
    assert result.exit_code == 0
    assert result.stdout.splitlines()[0] == expected


def test_compute_with_initial_terms_prints_big_integer_exactly(runner):
    result = runner.invoke(args=["compute", "--k", "2", "--n", "6", "--init", "2,1"])
    assert result.stdout.strip() == "18"
    result = runner.invoke(args=["compute", "--k", "3", "--n", "400"])
    value = result.stdout.strip()
    assert value.isdigit()
    assert "e" not in value.lower()


@pytest.mark.parametrize(
    "args",
    [
        ["compute", "--k", "1", "--n", "3"],
        ["compute", "--k", "3", "--n", "-1"],
        ["compute", "--k", "3", "--n", "5", "--init", "1,2"],
        ["compute", "--k", "3", "--n", "5", "--init", "a,b,c"],
        ["compute", "--k", "3", "--n", "5", "--method", "binet"],
        ["compute", "--k", "2", "--n", "0", "--method", "dresden"],
        ["compute", "--k", "2", "--n", "5", "--precision", "16"],
        ["roots", "--k", "1"],
        ["verify", "--k", "5..3"],
        ["verify", "--k", "2..4", "--n-max", "3"],
        ["table", "--k", "2", "--from", "5", "--to", "2"],
    ],
)
def test_usage_errors_exit_with_code_two(runner, args):
    result = runner.invoke(args=args)
    assert result.exit_code == 2


def test_compute_under_precision_exits_three_with_suggestion(runner):
    result = runner.invoke(
        args=["compute", "--k", "2", "--n", "500", "--method", "closed-form", "--precision", "64", "--json"]
    )
    assert result.exit_code == 3
    payload = _json(result)
    error = payload["results"]["error"]
    assert error["error"] == "PrecisionExhausted"
    assert error["suggested_precision"] > 64


def test_roots_k2_digits(runner):
    result = runner.invoke(args=["roots", "--k", "2", "--digits", "12"])
    assert result.exit_code == 0
    lines = result.stdout.splitlines()
    assert any(line.startswith("1.618033988750 ") and "dominant" in line for line in lines)
    assert any(line.startswith("-0.618033988750 ") for line in lines)


def test_roots_k3_json(runner):
    result = runner.invoke(args=["roots", "--k", "3", "--digits", "10", "--json"])
    assert result.exit_code == 0
    payload = _json(result)
    results = payload["results"]
    assert results["formatted"][results["dominant_index"]] == "1.8392867552"
    assert len(results["roots"]) == 3
    assert any(text.endswith("i") for text in results["formatted"])


def test_format_fixed_rounds_correctly():
    ctx = precision_context(128)
    assert format_fixed(ctx.mpf("2.5"), 0, ctx) == "2"
    assert format_fixed(ctx.mpf("-0.00049"), 3, ctx) == "0.000"
    assert format_fixed(ctx.mpf("-1.2346"), 3, ctx) == "-1.235"
    assert format_fixed((1 + ctx.sqrt(5)) / 2, 12, ctx) == "1.618033988750"


def test_verify_small_grid_exits_zero_and_is_reproducible(runner):
    args = ["verify", "--k", "2..4", "--n-max", "80", "--trials", "2", "--seed", "42", "--json"]
    first = runner.invoke(args=args)
    second = runner.invoke(args=args)
    assert first.exit_code == 0, first.stdout
    assert _json(first)["results"] == _json(second)["results"]
    assert _json(first)["results"]["failure_count"] == 0


def test_verify_product_identity_residuals_per_root(runner):
    result = runner.invoke(args=["verify", "--k", "7..7", "--n-max", "40", "--trials", "0", "--json"])
    assert result.exit_code == 0
    checks = _json(result)["results"]["checks"]
    product = next(check for check in checks if check["name"] == "product_identity")
    assert len(product["detail"]["residuals"]) == 7
    assert product["passed"]


def test_verify_under_precision_reports_failures(runner):
    result = runner.invoke(
        args=["verify", "--k", "2..2", "--n-max", "500", "--precision", "64", "--trials", "0", "--json"]
    )
    assert result.exit_code == 1
    checks = _json(result)["results"]["checks"]
    failures = [
        failure
        for check in checks
        if check["name"] == "cross_check"
        for failure in check["detail"]["failures"]
    ]
    assert any(failure["reason"] == "PrecisionExhausted" for failure in failures)


def test_verify_text_output_lists_checks(runner):
    result = runner.invoke(args=["verify", "--k", "2", "--n-max", "30", "--trials", "1"])
    assert result.exit_code == 0
    assert "PASS k=2 root_certificates" in result.stdout
    assert result.stdout.strip().endswith("0 failed")


def test_table_text_slices(runner):
    result = runner.invoke(args=["table", "--k", "2", "--from", "0", "--to", "7"])
    assert result.stdout.strip() == "0,1,1,2,3,5,8,13"
    result = runner.invoke(args=["table", "--k", "4", "--from", "0", "--to", "3"])
    assert result.stdout.strip() == "0,0,0,1"


def test_table_csv_has_one_row_per_index_with_agreeing_methods(runner):
    result = runner.invoke(args=["table", "--k", "3", "--from", "2", "--to", "10", "--format", "csv"])
    assert result.exit_code == 0
    lines = result.stdout.strip().splitlines()
    assert lines[0] == ",".join(CSV_HEADERS)
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 9
    for n, recurrence, matrix_power, closed_form, gap in rows:
        assert recurrence == matrix_power == closed_form
        assert float(gap) < 0.25
    assert rows[-1][:2] == ["10", "81"]


def test_table_json_envelope(runner):
    result = runner.invoke(args=["table", "--k", "2", "--to", "12", "--json"])
    assert result.exit_code == 0
    payload = _json(result)
    assert payload["command"] == "table"
    assert payload["results"]["terms"][-1] == "144"
    assert payload["results"]["failure_count"] == 0


@pytest.mark.parametrize(
    "args",
    [
        ["compute", "--k", "4", "--n", "30", "--method", "closed-form", "--json"],
        ["roots", "--k", "5", "--json"],
        ["table", "--k", "3", "--to", "6", "--format", "json"],
        ["verify", "--k", "2", "--n-max", "20", "--trials", "1", "--json"],
    ],
)
def test_envelopes_validate_against_published_schema(runner, args):
    result = runner.invoke(args=args)
    assert result.exit_code == 0
    payload = _json(result)
    validate_envelope(payload)
    assert set(payload) == {"schema_version", "command", "inputs", "results", "timings"}
    assert all(value >= 0 for value in payload["timings"].values())


def test_schema_rejects_malformed_envelopes():
    with pytest.raises(EnvelopeError):
        build_envelope("compute", {}, {}, schema_version="1.0")
    with pytest.raises(EnvelopeError):
        build_envelope("plot", {}, {}, schema_version="1.0.0")
    with pytest.raises(EnvelopeError):
        validate_envelope({"schema_version": "1.0.0", "command": "roots"})


@pytest.mark.parametrize("method", ["recurrence", "matrix-power"])
def test_compute_exact_methods_emit_evaluation_reports(runner, method):
    result = runner.invoke(args=["compute", "--k", "3", "--n", "10", "--method", method, "--json"])
    assert result.exit_code == 0
    results = _json(result)["results"]
    assert results["value"] == "81"
    assert results["method"] == method.replace("-", "_")
    assert results["aligned_index"] == 10
    assert results["elapsed_seconds"] >= 0
    assert "approx_value" not in results


def test_compute_huge_order_below_k_does_not_build_a_matrix(runner):
    result = runner.invoke(args=["compute", "--k", "100000", "--n", "0"])
    assert result.exit_code == 0
    assert result.stdout.strip() == "0"


def test_compute_defaults_to_default_precision(runner):
    result = runner.invoke(args=["compute", "--k", "2", "--n", "50", "--method", "closed-form", "--json"])
    assert result.exit_code == 0
    payload = _json(result)
    assert payload["inputs"]["precision_bits"] == default_precision_for(SequenceSpec.special(2), 50)
    assert payload["results"]["value"] == "12586269025"


def test_verify_acceptance_grid_with_seed(runner):
    args = ["verify", "--k", "2..6", "--n-max", "200", "--seed", "42", "--json"]
    result = runner.invoke(args=args)
    assert result.exit_code == 0, result.stdout
    results = _json(result)["results"]
    assert results["k_values"] == [2, 3, 4, 5, 6]
    assert results["failure_count"] == 0
    assert results["check_count"] == len(results["checks"])


@pytest.mark.parametrize(
    ("command", "results"),
    [
        ("compute", {"n": 3, "method": "recurrence", "aligned_index": 3, "elapsed_seconds": 0.0}),
        ("compute", {"value": "2.5", "n": 3, "method": "recurrence", "aligned_index": 3, "elapsed_seconds": 0.0}),
        ("roots", {"k": 2, "precision_bits": 128, "min_separation": "2.2", "dominant_index": 0}),
        ("verify", {"k_values": [2], "n_max": 10, "trials": 0, "seed": 0, "check_count": 0}),
        ("table", {"terms": ["0", "1"]}),
        ("compute", {"error": {"error": "PrecisionExhausted"}}),
    ],
)
def test_schema_rejects_malformed_results(command, results):
    with pytest.raises(EnvelopeError):
        build_envelope(command, {}, results, schema_version="1.0.0")


def test_schema_accepts_error_results_for_every_command():
    error = {"error": {"error": "NonConvergence", "message": "no", "k": 3, "precision_bits": 64}}
    for command in ("compute", "roots", "verify", "table"):
        assert build_envelope(command, {}, error, schema_version="1.0.0").results == error
