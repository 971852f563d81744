from __future__ import annotations

import math
import threading
from typing import TYPE_CHECKING

import mpmath

from kbonacci.core.errors import SequenceSpecError

if TYPE_CHECKING:
    from kbonacci.core.models import SequenceSpec

MIN_PRECISION_BITS = 64
_GUARD_BITS = 32
_BITS_PER_ORDER = 8
# log2 of the bound 2 on the dominant root, known before any root finding.
_LOG2_DOMINANT_BOUND = 1.0

_CONTEXTS = threading.local()


def precision_context(bits: int) -> mpmath.MPContext:
    """Return this thread's mpmath context fixed at ``bits`` of working precision.

    Contexts are never shared across threads and their precision is never changed
    after creation, so callers may hold on to values produced by them.
    """
    if bits < MIN_PRECISION_BITS:
        raise ValueError(f"precision_bits must be >= {MIN_PRECISION_BITS}, got {bits}")
    cache: dict[int, mpmath.MPContext] | None = getattr(_CONTEXTS, "by_bits", None)
    if cache is None:
        cache = {}
        _CONTEXTS.by_bits = cache
    ctx = cache.get(bits)
    if ctx is None:
        ctx = mpmath.MPContext()
        ctx.prec = bits
        cache[bits] = ctx
    return ctx


def tolerance_for(bits: int, divisor: int) -> mpmath.mpf:
    """2^(-bits/divisor) at ``bits`` of precision (exponent rounded toward zero)."""
    ctx = precision_context(bits)
    return ctx.ldexp(ctx.one, -(bits // divisor))


def default_precision_for(spec: SequenceSpec, n: int) -> int:
    if n < 0:
        raise SequenceSpecError(f"Index must be non-negative, got {n}")
    bits = math.ceil(n * _LOG2_DOMINANT_BOUND) + _GUARD_BITS + _BITS_PER_ORDER * spec.k
    return max(MIN_PRECISION_BITS, bits)
