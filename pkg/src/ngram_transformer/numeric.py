"""Scalar backends, small dense linear algebra, and normalization functions.

Two backends are supported. ``Backend.RATIONAL`` stores every scalar as a
:class:`fractions.Fraction` so all arithmetic is exact; ``Backend.FLOAT``
uses binary64. Vectors are plain tuples and matrices are :class:`Mat`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence, Union

Scalar = Union[Fraction, float]
Vec = tuple  # tuple of Scalar

FLOAT_TIE_EPS = 1e-9


class DimensionError(ValueError):
    """Raised when vector/matrix shapes do not line up."""


class Backend(str, Enum):
    RATIONAL = "rational"
    FLOAT = "float"

    def coerce(self, x) -> Scalar:
        if self is Backend.RATIONAL:
            if isinstance(x, float):
                raise TypeError(f"float {x!r} cannot enter the rational backend")
            return Fraction(x)
        return float(x)

    def vec(self, xs: Iterable) -> Vec:
        return tuple(self.coerce(x) for x in xs)

    @property
    def zero(self) -> Scalar:
        return Fraction(0) if self is Backend.RATIONAL else 0.0

    @property
    def one(self) -> Scalar:
        return Fraction(1) if self is Backend.RATIONAL else 1.0

    @property
    def tie_eps(self) -> Scalar:
        return Fraction(0) if self is Backend.RATIONAL else FLOAT_TIE_EPS


def is_rational(x) -> bool:
    return isinstance(x, (Fraction, int)) and not isinstance(x, bool)


def backend_of(xs: Iterable) -> Backend:
    """Infer the backend of a collection of scalars (floats win)."""
    return Backend.FLOAT if any(isinstance(x, float) for x in xs) else Backend.RATIONAL


@dataclass(frozen=True)
class Mat:
    """Dense matrix with a cached sparsity pattern for fast products."""

    rows: tuple
    ncols: int
    _nonzero: tuple = field(init=False, repr=False, compare=False)
    _zero: Scalar = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.rows)
        for r in rows:
            if len(r) != self.ncols:
                raise DimensionError(f"ragged matrix row of length {len(r)}, expected {self.ncols}")
        object.__setattr__(self, "rows", rows)
        nz = tuple(tuple((j, v) for j, v in enumerate(r) if v != 0) for r in rows)
        object.__setattr__(self, "_nonzero", nz)
        object.__setattr__(self, "_zero", _zero_like(v for r in rows for v in r))

    @property
    def nrows(self) -> int:
        return len(self.rows)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    @classmethod
    def zeros(cls, nrows: int, ncols: int, backend: Backend = Backend.RATIONAL) -> Mat:
        z = backend.zero
        return cls(tuple((z,) * ncols for _ in range(nrows)), ncols)

    @classmethod
    def identity(cls, n: int, backend: Backend = Backend.RATIONAL) -> Mat:
        return cls.from_entries(n, n, {(i, i): 1 for i in range(n)}, backend)

    @classmethod
    def from_entries(cls, nrows: int, ncols: int, entries: dict, backend: Backend = Backend.RATIONAL) -> Mat:
        """Build a matrix from ``{(row, col): value}``; unspecified entries are zero."""
        data = [[backend.zero] * ncols for _ in range(nrows)]
        for (i, j), v in entries.items():
            if not (0 <= i < nrows and 0 <= j < ncols):
                raise DimensionError(f"entry ({i}, {j}) outside {nrows}x{ncols}")
            data[i][j] = backend.coerce(v)
        return cls(tuple(tuple(r) for r in data), ncols)

    def matvec(self, x: Sequence) -> Vec:
        if len(x) != self.ncols:
            raise DimensionError(f"matrix with {self.ncols} columns applied to vector of length {len(x)}")
        out = []
        for nz in self._nonzero:
            acc = self._zero
            for j, v in nz:
                xj = x[j]
                if xj:
                    acc = acc + v * xj
            out.append(acc)
        return tuple(out)

    def matmul(self, other: Mat) -> Mat:
        if self.ncols != other.nrows:
            raise DimensionError(f"cannot multiply {self.shape} by {other.shape}")
        cols = list(zip(*other.rows)) if other.nrows else [() for _ in range(other.ncols)]
        rows = []
        for nz in self._nonzero:
            row = []
            for c in range(other.ncols):
                col = cols[c]
                acc = self._zero
                for j, v in nz:
                    if col[j]:
                        acc = acc + v * col[j]
                row.append(acc)
            rows.append(tuple(row))
        return Mat(tuple(rows), other.ncols)

    def convert(self, backend: Backend) -> Mat:
        return Mat(tuple(backend.vec(r) for r in self.rows), self.ncols)


def _zero_like(xs: Iterable) -> Scalar:
    return 0.0 if any(isinstance(x, float) for x in xs) else Fraction(0)


def _check_same_len(x: Sequence, y: Sequence) -> None:
    if len(x) != len(y):
        raise DimensionError(f"length mismatch: {len(x)} vs {len(y)}")


def vadd(x: Sequence, y: Sequence) -> Vec:
    _check_same_len(x, y)
    return tuple(a + b if b else a for a, b in zip(x, y))


def vscale(c, x: Sequence) -> Vec:
    return tuple(c * a for a in x)


def dot(x: Sequence, y: Sequence):
    _check_same_len(x, y)
    acc = _zero_like((*x, *y))
    for a, b in zip(x, y):
        if a and b:
            acc = acc + a * b
    return acc


def relu(x: Sequence) -> Vec:
    return tuple(a if a > 0 else (0.0 if isinstance(a, float) else Fraction(0)) for a in x)


def hardmax(x: Sequence, tie_eps: Scalar = 0) -> Vec:
    """Uniform weight over the (approximate) argmax set, zero elsewhere.

    Entries within ``tie_eps`` of the maximum count as tied. ``tie_eps`` must
    be zero for rational inputs.
    """
    if len(x) == 0:
        raise ValueError("hardmax of an empty vector")
    if tie_eps < 0:
        raise ValueError("tie_eps must be nonnegative")
    rational = all(is_rational(v) for v in x)
    if rational and tie_eps > 0:
        raise ValueError("tie_eps > 0 is not allowed on the rational backend")
    top = max(x)
    winners = [v >= top - tie_eps for v in x]
    m = sum(winners)
    if rational:
        w, z = Fraction(1, m), Fraction(0)
    else:
        w, z = 1.0 / m, 0.0
    return tuple(w if won else z for won in winners)


def sparsemax(x: Sequence) -> Vec:
    """Euclidean projection of ``x`` onto the probability simplex.

    Sort-then-threshold: with ``x_(1) >= x_(2) >= ...``, the support size is
    ``k = max{k : 1 + k x_(k) > sum_{j<=k} x_(j)}`` and the threshold is
    ``tau = (sum_{j<=k} x_(j) - 1) / k``. Exact for Fractions.
    """
    if len(x) == 0:
        raise ValueError("sparsemax of an empty vector")
    order = sorted(range(len(x)), key=lambda i: -x[i])
    one = 1.0 if any(isinstance(v, float) for v in x) else Fraction(1)
    cumsum = one - one
    k, k_sum = 0, cumsum
    for rank, i in enumerate(order, start=1):
        cumsum = cumsum + x[i]
        if one + rank * x[i] > cumsum:
            k, k_sum = rank, cumsum
    tau = (k_sum - one) / k
    zero = one - one
    return tuple(v - tau if v > tau else zero for v in x)


def softmax(x: Sequence[float]) -> Vec:
    """Plain float softmax; entries equal to -inf get probability 0."""
    if len(x) == 0:
        raise ValueError("softmax of an empty vector")
    if not all(isinstance(v, float) for v in x):
        raise ValueError("softmax of rational scores is irrational; use the float backend")
    top = max(x)
    if top == -math.inf:
        raise ValueError("softmax with every logit at -inf")
    e = [math.exp(v - top) for v in x]
    s = math.fsum(e)
    return tuple(v / s for v in e)


class ExtReal:
    """An extended-real logit ``log p`` for a nonnegative rational ``p``.

    The linear-domain value ``p`` is kept instead of the logarithm so that
    softmax over such logits stays exact; ``p == 0`` encodes ``-inf``.
    """

    __slots__ = ("linear",)

    def __init__(self, linear):
        linear = Fraction(linear)
        if linear < 0:
            raise ValueError("ExtReal wraps the log of a nonnegative number")
        self.linear = linear

    @classmethod
    def log(cls, p) -> ExtReal:
        return cls(p)

    @classmethod
    def neg_inf(cls) -> ExtReal:
        return cls(0)

    @property
    def is_neg_inf(self) -> bool:
        return self.linear == 0

    def __add__(self, other: ExtReal) -> ExtReal:
        # log a + log b = log(ab); -inf absorbs finite values.
        return ExtReal(self.linear * other.linear)

    def scale(self, k) -> ExtReal:
        """``k * log p`` for integer ``k``; ``0 * -inf`` is taken to be 0."""
        k = Fraction(k)
        if k.denominator != 1:
            raise ValueError("only integer multiples of a log-rational stay exact")
        if k == 0:
            return ExtReal(1)
        if self.linear == 0:
            if k < 0:
                raise ValueError("negative multiple of -inf is +inf")
            return ExtReal(0)
        return ExtReal(self.linear ** int(k))

    def exp(self) -> Fraction:
        return self.linear

    def __float__(self) -> float:
        return -math.inf if self.linear == 0 else math.log(self.linear)

    def __eq__(self, other) -> bool:
        return isinstance(other, ExtReal) and self.linear == other.linear

    def __hash__(self) -> int:
        return hash(("ExtReal", self.linear))

    def __repr__(self) -> str:
        return "ExtReal(-inf)" if self.is_neg_inf else f"ExtReal(log {self.linear})"

    def to_text(self) -> str:
        if self.is_neg_inf:
            return "neg_inf"
        return "log:" + format_rational(self.linear)

    @classmethod
    def from_text(cls, text: str) -> ExtReal:
        if text == "neg_inf":
            return cls(0)
        if not text.startswith("log:"):
            raise ValueError(f"malformed log-domain entry {text!r}")
        value = parse_rational(text[4:])
        if value <= 0:
            raise ValueError(f"log of nonpositive value in {text!r}")
        return cls(value)


def softmax_logdomain(logits: Sequence[ExtReal]) -> tuple[Fraction, ...]:
    """Exact ``softmax(log p_1, ..., log p_k) = p_i / sum_j p_j``."""
    total = sum((l.linear for l in logits), Fraction(0))
    if total == 0:
        raise ValueError("softmax with every logit at -inf")
    return tuple(l.linear / total for l in logits)


def format_rational(x: Fraction) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


def parse_rational(text: str) -> Fraction:
    if not isinstance(text, str):
        raise ValueError(f"expected a 'num/den' string, got {text!r}")
    num, sep, den = text.partition("/")
    try:
        value = Fraction(int(num), int(den)) if sep else Fraction(int(num))
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"malformed rational {text!r}") from exc
    return value


def format_scalar(x: Scalar):
    """Rationals as canonical "num/den" strings, floats as JSON numbers."""
    if isinstance(x, float):
        return x
    return format_rational(x)


def parse_scalar(v, backend: Backend) -> Scalar:
    if backend is Backend.RATIONAL:
        return parse_rational(v)
    if isinstance(v, str):
        return float(parse_rational(v))
    return float(v)
