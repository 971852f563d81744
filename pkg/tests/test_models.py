from __future__ import annotations

import threading
from datetime import timedelta

import mpmath
import pytest

from kbonacci.core.errors import NonConvergence, PrecisionExhausted, SequenceSpecError
from kbonacci.core.models import (
    EvaluationMethod,
    EvaluationReport,
    HPComplex,
    RootSet,
    SequenceSpec,
)
from kbonacci.core.precision import default_precision_for, precision_context, tolerance_for
from kbonacci.sequences.exact_service import nth_by_recurrence


def test_sequence_spec_rejects_small_order_and_wrong_term_count():
    with pytest.raises(SequenceSpecError):
        SequenceSpec(1, (1,))
    with pytest.raises(SequenceSpecError):
        SequenceSpec(3, (0, 1))
    with pytest.raises(SequenceSpecError):
        SequenceSpec(2, (0, True))
    with pytest.raises(SequenceSpecError):
        SequenceSpec(2, (0, 1.5))


def test_sequence_spec_special_unit_and_addition():
    special = SequenceSpec.special(4)
    assert special.initial_terms == (0, 0, 0, 1)
    assert special.is_special
    assert SequenceSpec.unit(3, 0).initial_terms == (1, 0, 0)
    assert (SequenceSpec(2, (2, 1)) + SequenceSpec(2, (-2, 0))).initial_terms == (0, 1)
    with pytest.raises(SequenceSpecError):
        SequenceSpec.special(2) + SequenceSpec.special(3)


def test_sequence_spec_keeps_big_terms_exact_in_dict():
    spec = SequenceSpec(2, (10**40, -(10**40) - 1))
    assert spec.to_dict() == {
        "k": 2,
        "initial_terms": [str(10**40), str(-(10**40) - 1)],
    }


@pytest.mark.parametrize(
    ("k", "n", "expected"),
    [(2, 10, 64), (2, 100, 148), (5, 1000, 1072)],
)
def test_default_precision_for_examples(k, n, expected):
    assert default_precision_for(SequenceSpec.special(k), n) == expected


def test_default_precision_covers_bit_length_of_terms():
    for k in (2, 3, 5, 10):
        spec = SequenceSpec.special(k)
        for n in (0, 1, 50, 500, 2000):
            assert default_precision_for(spec, n) >= nth_by_recurrence(spec, n).bit_length() + 8


def test_default_precision_is_monotone_and_rejects_negative_index():
    spec = SequenceSpec.special(3)
    values = [default_precision_for(spec, n) for n in range(0, 300, 7)]
    assert values == sorted(values)
    assert default_precision_for(SequenceSpec.special(4), 200) > default_precision_for(spec, 200)
    with pytest.raises(SequenceSpecError):
        default_precision_for(spec, -1)


def test_precision_context_is_per_thread_and_leaves_global_context_alone():
    global_prec = mpmath.mp.prec
    ctx = precision_context(200)
    assert ctx.prec == 200
    assert precision_context(200) is ctx
    seen = {}

    def worker():
        seen["ctx"] = precision_context(200)

    thread = threading.Thread(target=worker)
    thread.start()
    thread.join()
    assert seen["ctx"] is not ctx
    assert seen["ctx"].prec == 200
    assert mpmath.mp.prec == global_prec
    with pytest.raises(ValueError):
        precision_context(32)


def test_tolerance_for_halves_and_quarters_the_precision():
    assert tolerance_for(256, 2) == mpmath.ldexp(1, -128)
    assert tolerance_for(256, 4) == mpmath.ldexp(1, -64)


def test_hpcomplex_arithmetic_runs_at_minimum_precision():
    a = HPComplex.from_value(precision_context(256).one / 3, 256)
    b = HPComplex.from_value(2, 128)
    result = a * b
    assert result.precision_bits == 128
    assert (a + 1).precision_bits == 256
    assert abs((1 - a) - HPComplex.from_value(precision_context(256).mpf(2) / 3, 256)) < mpmath.ldexp(1, -250)
    with pytest.raises(ValueError):
        HPComplex(mpmath.mpf(0), mpmath.mpf(0), 32)


def test_hpcomplex_keeps_digits_beyond_double_precision():
    ctx = precision_context(256)
    third = HPComplex.from_value(ctx.one / 3, 256)
    tripled = third * 3
    assert abs(tripled - 1) < mpmath.ldexp(1, -250)
    assert third.nstr(40).startswith("0.333333333333333333333333333333333333")


def test_root_set_rejects_uncertified_roots():
    bits = 128
    ctx = precision_context(bits)
    tolerance = tolerance_for(bits, 2)
    phi = (1 + ctx.sqrt(5)) / 2
    psi = (1 - ctx.sqrt(5)) / 2
    good = dict(
        k=2,
        roots=(HPComplex.from_value(phi, bits), HPComplex.from_value(psi, bits)),
        residuals=(ctx.zero, ctx.zero),
        min_separation=ctx.sqrt(5),
        dominant_index=0,
        precision_bits=bits,
        tolerance=tolerance,
    )
    assert RootSet(**good).dominant.real == phi
    with pytest.raises(NonConvergence):
        RootSet(**{**good, "residuals": (ctx.one, ctx.zero)})
    with pytest.raises(NonConvergence):
        RootSet(**{**good, "min_separation": ctx.zero})
    with pytest.raises(NonConvergence):
        RootSet(**{**good, "dominant_index": 1})
    with pytest.raises(NonConvergence):
        RootSet(**{**good, "roots": good["roots"][:1], "residuals": (ctx.zero,)})


def test_evaluation_report_requires_a_value_and_a_matching_gap():
    with pytest.raises(ValueError):
        EvaluationReport(n=3, method=EvaluationMethod.RECURRENCE)
    with pytest.raises(ValueError):
        EvaluationReport(
            n=3,
            method=EvaluationMethod.CLOSED_FORM,
            approx_value=HPComplex.from_value(2, 64),
        )
    report = EvaluationReport(n=3, method=EvaluationMethod.RECURRENCE, exact_value=2)
    assert report.aligned_index == 3
    assert report.value == 2
    assert report.elapsed == timedelta()
    assert EvaluationMethod.MATRIX_POWER.is_exact
    assert not EvaluationMethod.DRESDEN.is_exact


def test_precision_exhausted_carries_suggestion_in_dict():
    error = PrecisionExhausted("too few bits", k=2, precision_bits=64, suggested_precision=600)
    payload = error.to_dict()
    assert payload["error"] == "PrecisionExhausted"
    assert payload["suggested_precision"] == 600
    assert payload["precision_bits"] == 64
    assert isinstance(error, ArithmeticError)
