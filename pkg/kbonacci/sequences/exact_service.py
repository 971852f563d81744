from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from datetime import timedelta
from functools import reduce
from itertools import islice
from threading import Lock
from time import perf_counter
from typing import Iterator

from kbonacci.core.errors import SequenceSpecError
from kbonacci.core.models import EvaluationMethod, EvaluationReport, SequenceSpec

# k -> [M, M^2, M^4, ...] for the recurrence matrix of order k
_POWER_CACHE: dict[int, list[CompanionMatrix]] = {}
_POWER_CACHE_LOCK = Lock()


@dataclass(frozen=True)
class CompanionMatrix:
    """k x k integer matrix advancing the window (t_n, ..., t_{n+k-1}) by one index.

    Rows 0..k-2 shift the window, the last row of ones forms the next term.
    """

    k: int
    entries: tuple[tuple[int, ...], ...]

    @classmethod
    def for_order(cls, k: int) -> CompanionMatrix:
        if k < 2:
            raise SequenceSpecError(f"Order k must be >= 2, got {k}")
        rows = [tuple(1 if col == row + 1 else 0 for col in range(k)) for row in range(k - 1)]
        rows.append((1,) * k)
        return cls(k, tuple(rows))

    @classmethod
    def identity(cls, k: int) -> CompanionMatrix:
        return cls(k, tuple(tuple(int(row == col) for col in range(k)) for row in range(k)))

    def __matmul__(self, other: CompanionMatrix) -> CompanionMatrix:
        columns = list(zip(*other.entries))
        return CompanionMatrix(
            self.k,
            tuple(
                tuple(sum(a * b for a, b in zip(row, column)) for column in columns)
                for row in self.entries
            ),
        )

    def apply(self, vector: tuple[int, ...] | list[int]) -> tuple[int, ...]:
        if len(vector) != self.k:
            raise SequenceSpecError(f"Vector of length {len(vector)} for k={self.k}")
        return tuple(sum(a * b for a, b in zip(row, vector)) for row in self.entries)

    def power(self, n: int) -> CompanionMatrix:
        """Binary exponentiation over the squares M, M^2, M^4, ..."""
        if n < 0:
            raise SequenceSpecError(f"Matrix power must be non-negative, got {n}")
        if n == 0:
            return CompanionMatrix.identity(self.k)
        squares = self._squares(n.bit_length())
        factors = [squares[bit] for bit in range(n.bit_length()) if n >> bit & 1]
        return reduce(lambda left, right: left @ right, factors)

    def _squares(self, count: int) -> list[CompanionMatrix]:
        if self != CompanionMatrix.for_order(self.k):
            squares = [self]
            while len(squares) < count:
                squares.append(squares[-1] @ squares[-1])
            return squares
        with _POWER_CACHE_LOCK:
            squares = _POWER_CACHE.setdefault(self.k, [self])
            while len(squares) < count:
                squares.append(squares[-1] @ squares[-1])
            return squares[:count]


def clear_power_cache() -> None:
    with _POWER_CACHE_LOCK:
        _POWER_CACHE.clear()


def _check_index(n: int) -> None:
    if n < 0:
        raise SequenceSpecError(f"Index must be non-negative, got {n}")


def iter_terms(spec: SequenceSpec) -> Iterator[int]:
    """Yield t_0, t_1, ... forever, keeping only a window of k values."""
    window = deque(spec.initial_terms, maxlen=spec.k)
    yield from spec.initial_terms
    running = sum(window)
    while True:
        oldest = window[0]
        window.append(running)
        yield running
        running = 2 * running - oldest


def nth_by_recurrence(spec: SequenceSpec, n: int) -> int:
    _check_index(n)
    if n < spec.k:
        return spec.initial_terms[n]
    return next(islice(iter_terms(spec), n, None))


def sequence_slice(spec: SequenceSpec, n_from: int, n_to: int) -> list[int]:
    _check_index(n_from)
    if n_to < n_from:
        raise SequenceSpecError(f"Empty range {n_from}..{n_to}")
    return list(islice(iter_terms(spec), n_from, n_to + 1))


def nth_by_matrix_power(spec: SequenceSpec, n: int) -> int:
    _check_index(n)
    if n < spec.k:
        return spec.initial_terms[n]
    matrix = CompanionMatrix.for_order(spec.k).power(n)
    return matrix.apply(spec.initial_terms)[0]


def evaluate_exact(
    spec: SequenceSpec, n: int, method: EvaluationMethod = EvaluationMethod.MATRIX_POWER
) -> EvaluationReport:
    if not method.is_exact:
        raise SequenceSpecError(f"{method.value} is not an exact method")
    started = perf_counter()
    if method is EvaluationMethod.RECURRENCE:
        value = nth_by_recurrence(spec, n)
    else:
        value = nth_by_matrix_power(spec, n)
    return EvaluationReport(
        n=n,
        method=method,
        exact_value=value,
        elapsed=timedelta(seconds=perf_counter() - started),
    )
