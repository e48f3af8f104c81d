"""Compile n-gram LMs into explicit transformer weights.

Four constructions are provided:

* ``multihead``: one layer, ``n - 1`` hard-attention heads with square-root
  positional scores; head ``h`` fetches the symbol ``h`` positions back.
* ``multilayer``: ``n - 1`` single-head layers, each shifting a stack of
  one-hot blocks one position forward.
* ``singlehead``: one head spreading uniform weight over the history window
  and a decimal-digit decoder MLP that recovers the symbol at each offset.
* ``sparse``: like ``multihead`` but with rational ``-|<q, k>|`` scores and
  sparsemax, so the whole model is exact.

Every construction ends with the history one-hot, read through an output
matrix of log-probabilities.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Sequence

from .ngram import Alphabet, NGramLM, is_reachable
from .numeric import Backend, ExtReal
from .transformer import (
    Activation,
    AffineMap,
    EncodingKind,
    FinalTransform,
    Head,
    L1Rescale,
    Layer,
    Mlp,
    ModelError,
    Normalizer,
    Scoring,
    StaticEncoding,
    TransformerModel,
)

# Float constructions are only trusted where the best attention score beats
# the runner-up by at least this much (far above the hardmax tie tolerance).
FLOAT_SCORE_MARGIN = 1e-6


class Construction(str, Enum):
    MULTIHEAD = "multihead"
    MULTILAYER = "multilayer"
    SINGLEHEAD = "singlehead"
    SPARSE = "sparse"

    @property
    def default_backend(self) -> Backend:
        if self in (Construction.MULTIHEAD, Construction.MULTILAYER):
            return Backend.FLOAT
        return Backend.RATIONAL

    @property
    def supports_rational(self) -> bool:
        return self.default_backend is Backend.RATIONAL


@dataclass(frozen=True)
class HistoryIndexer:
    """Mixed-radix bijection between histories over ``Σ_bos`` and column indices.

    The oldest history symbol is the most significant digit; digits follow
    ``alphabet.bos_symbols`` order (BOS is digit 0).
    """

    alphabet: Alphabet
    length: int

    @property
    def width(self) -> int:
        return len(self.alphabet.bos_symbols)

    @property
    def size(self) -> int:
        return self.width ** self.length

    def index_of_digits(self, digits: Sequence[int]) -> int:
        if len(digits) != self.length:
            raise ValueError(f"expected {self.length} digits, got {len(digits)}")
        idx = 0
        for d in digits:
            if not 0 <= d < self.width:
                raise ValueError(f"digit {d} outside 0..{self.width - 1}")
            idx = idx * self.width + d
        return idx

    def index(self, history: Sequence[str]) -> int:
        return self.index_of_digits([self.alphabet.bos_index(s) for s in history])

    def digits(self, index: int) -> tuple:
        if not 0 <= index < self.size:
            raise ValueError(f"index {index} outside 0..{self.size - 1}")
        out = []
        for _ in range(self.length):
            index, d = divmod(index, self.width)
            out.append(d)
        return tuple(reversed(out))

    def history(self, index: int) -> tuple:
        syms = self.alphabet.bos_symbols
        return tuple(syms[d] for d in self.digits(index))


def build_and_mlp_over(slot_coords: Sequence[Sequence[int]], in_dim: int, backend: Backend) -> Mlp:
    """AND gadget reading slot ``i``'s symbol ``σ`` from input ``slot_coords[i][σ]``.

    Output unit ``s(σ_1, ..., σ_m)`` (mixed radix, first slot most significant)
    is ``ReLU(sum_i x[slot_coords[i][σ_i]] - (m - 1))``.
    """
    m = len(slot_coords)
    if m < 1:
        raise ValueError("the AND gadget needs at least one slot")
    widths = [len(c) for c in slot_coords]
    entries = {}
    out = 0
    for out, combo in enumerate(itertools.product(*(range(w) for w in widths))):
        for i, sigma in enumerate(combo):
            entries[out, slot_coords[i][sigma]] = 1
    size = math.prod(widths)
    hidden = AffineMap.from_entries(size, in_dim, entries, backend, [-(m - 1)] * size)
    return Mlp(((hidden, Activation.RELU), (AffineMap.identity(size, backend), Activation.IDENTITY)))


def build_and_mlp(slot_count: int, slot_width: int, backend: Backend = Backend.RATIONAL) -> Mlp:
    """AND gadget over ``slot_count`` contiguous one-hot blocks of ``slot_width``."""
    coords = [[i * slot_width + s for s in range(slot_width)] for i in range(slot_count)]
    return build_and_mlp_over(coords, slot_count * slot_width, backend)


def build_output_matrix(lm: NGramLM, indexer: HistoryIndexer) -> tuple:
    """``E[y][s(h)] = log p(y | h)``; unreachable histories get a uniform column."""
    width = len(lm.alphabet.eos_symbols)
    uniform = (Fraction(1, width),) * width
    cols = []
    for c in range(indexer.size):
        h = indexer.history(c)
        cols.append(lm.table[h] if is_reachable(h, lm.alphabet) else uniform)
    return tuple(tuple(ExtReal(cols[c][y]) for c in range(indexer.size)) for y in range(width))


def build_step_gadget(n_digits: int, backend: Backend = Backend.RATIONAL) -> Mlp:
    """``10^(N+1) (ReLU(z) - ReLU(z - 10^-(N+1)))``: exactly ``1{z > 0}`` off the ramp."""
    if n_digits < 1:
        raise ValueError("N must be >= 1")
    eps = Fraction(1, 10 ** (n_digits + 1))
    big = 10 ** (n_digits + 1)
    first = AffineMap.from_entries(2, 1, {(0, 0): 1, (1, 0): 1}, backend, [0, -eps])
    second = AffineMap.from_entries(1, 2, {(0, 0): big, (0, 1): -big}, backend)
    return Mlp(((first, Activation.RELU), (second, Activation.IDENTITY)))


def build_digit_mlp(n_digits: int, backend: Backend = Backend.RATIONAL) -> Mlp:
    """Decode ``x = sum_i d_i 10^-i`` into ``(d_1, ..., d_N)``.

    Layer ``l`` evaluates ``z_l = 10^l x - sum_{j<l} 10^(l-j) d_j - 1 + eps``
    through the step gadget's two rectifiers, carrying earlier digits and
    ``x`` along (all nonnegative, so ReLU passes them unchanged). Each digit
    ``d_{l-1} = 10^(N+1) (r1 - r2)`` is folded into the next affine map.
    A final digit of 2 also decodes to 1.
    """
    N = n_digits
    if N < 1:
        raise ValueError("N must be >= 1")
    eps = Fraction(1, 10 ** (N + 1))
    big = 10 ** (N + 1)
    layers = []
    # layer 1: input [x] -> [r1, r2, x]
    layers.append((AffineMap.from_entries(3, 1, {(0, 0): 10, (1, 0): 10, (2, 0): 1}, backend,
                                          [-1 + eps, -1, 0]), Activation.RELU))
    for l in range(2, N + 2):
        # previous hidden: [d_1..d_{l-2}, r1, r2, x]
        prev = l - 2
        r1, r2, xi = prev, prev + 1, prev + 2
        in_dim = prev + 3
        last = l == N + 1
        out_dim = l - 1 if last else (l - 1) + 3
        entries = {}
        for j in range(prev):
            entries[j, j] = 1
        entries[prev, r1] = big
        entries[prev, r2] = -big
        bias = [0] * out_dim
        if not last:
            # z_l = 10^l x - sum_{j<=l-1} 10^(l-j) d_j - 1 + eps
            for row, shift in ((l - 1, eps), (l, 0)):
                entries[row, xi] = 10 ** l
                for j in range(prev):
                    entries[row, j] = -(10 ** (l - 1 - j))
                entries[row, r1] = -10 * big
                entries[row, r2] = 10 * big
                bias[row] = -1 + shift
            entries[l + 1, xi] = 1
        layers.append((AffineMap.from_entries(out_dim, in_dim, entries, backend, bias),
                       Activation.IDENTITY if last else Activation.RELU))
    return Mlp(tuple(layers))


def decimal_scale(order: int) -> Fraction:
    """``sum_{i=1}^{n-1} 10^-i + 10^-(n-1)``.

    The first term places the history digits; the extra ``10^-(n-1)``
    accounts for the residual copy of the current symbol, which doubles the
    last digit.
    """
    s = sum(Fraction(1, 10 ** i) for i in range(1, order))
    return s + Fraction(1, 10 ** (order - 1))


def sqrt_angle(t: int) -> float:
    return math.asin(math.sqrt(1.0 / t))


def sqrt_score_margin(p: int) -> float:
    """Gap between ``<u_p, u_p> = 1`` and the best competing key ``<u_p, u_{p±1}>``.

    With ``u_t = (sqrt(1/t), sqrt(1 - 1/t)) = (sin θ_t, cos θ_t)`` the gap is
    ``1 - cos(θ_p - θ_a) = 2 sin²((θ_p - θ_a) / 2)``, computed in that
    cancellation-free form.
    """
    neighbours = [p + 1] + ([p - 1] if p > 1 else [])
    return min(2 * math.sin((sqrt_angle(p) - sqrt_angle(a)) / 2) ** 2 for a in neighbours)


def float_max_position(margin: float = FLOAT_SCORE_MARGIN, limit: int = 10 ** 6) -> int:
    """Largest query position whose square-root score margin is at least ``margin``."""
    p = 1
    while p < limit and sqrt_score_margin(p + 1) >= margin:
        p += 1
    return p


def _check_backend(construction: Construction, backend: Backend) -> Backend:
    backend = Backend(backend)
    if backend is Backend.RATIONAL and not construction.supports_rational:
        raise ModelError(f"{construction.value} uses irrational encodings (square roots); use --backend float")
    return backend


def _fetch_layer(order: int, width: int, dim: int, queries, keys, scoring: Scoring, normalizer: Normalizer,
                 backend: Backend) -> Layer:
    """Shared multi-head layer: head ``h`` copies slot 1 into slot 2, O clears slot 1."""
    value = AffineMap.from_entries(dim, dim, {(width + s, s): 1 for s in range(width)}, backend)
    out = AffineMap.from_entries(dim, dim, {(s, s): -1 for s in range(width)}, backend)
    heads = tuple(Head(q, k, value, scoring, normalizer) for q, k in zip(queries, keys))
    slots = [[(order - 2 - i) * dim + width + s for s in range(width)] for i in range(order - 1)]
    combiner = build_and_mlp_over(slots, dim * (order - 1), backend)
    return Layer(heads, (out,) * len(heads), combiner)


def compile_multihead(lm: NGramLM, backend: Backend = Backend.FLOAT) -> TransformerModel:
    backend = _check_backend(Construction.MULTIHEAD, backend)
    n, B = lm.order, len(lm.alphabet.bos_symbols)
    static = StaticEncoding(EncodingKind.SQRT, B, pad_blocks=1, offsets=tuple(range(n)))
    D = static.dim
    pos = 2 * B
    query = AffineMap.from_entries(2, D, {(0, pos): 1, (1, pos + 1): 1}, backend)
    keys = [AffineMap.from_entries(2, D, {(0, pos + 2 * h): 1, (1, pos + 2 * h + 1): 1}, backend)
            for h in range(n - 1)]
    layer = _fetch_layer(n, B, D, [query] * (n - 1), keys, Scoring.DOT, Normalizer.HARDMAX, backend)
    indexer = HistoryIndexer(lm.alphabet, n - 1)
    return TransformerModel(backend, n, lm.alphabet, static, (layer,), FinalTransform(),
                            build_output_matrix(lm, indexer), Construction.MULTIHEAD.value,
                            float_max_position())


def compile_multilayer(lm: NGramLM, backend: Backend = Backend.FLOAT) -> TransformerModel:
    backend = _check_backend(Construction.MULTILAYER, backend)
    n, B = lm.order, len(lm.alphabet.bos_symbols)
    static = StaticEncoding(EncodingKind.SQRT, B, pad_blocks=n - 2, offsets=(0, 1))
    D = static.dim
    pos = (n - 1) * B
    query = AffineMap.from_entries(2, D, {(0, pos): 1, (1, pos + 1): 1}, backend)
    key = AffineMap.from_entries(2, D, {(0, pos + 2): 1, (1, pos + 3): 1}, backend)
    layers = []
    for l in range(1, n):
        if l <= n - 2:
            value = AffineMap.from_entries(D, D, {(l * B + s, (l - 1) * B + s): 1 for s in range(B)}, backend)
        else:
            # the stack already holds the full history; the last layer is a no-op
            value = AffineMap.zero(D, D, backend)
        head = Head(query, key, value, Scoring.DOT, Normalizer.HARDMAX)
        layers.append(Layer((head,), (AffineMap.zero(D, D, backend),)))
    slots = [[(n - 2 - i) * B + s for s in range(B)] for i in range(n - 1)]
    final = FinalTransform(mlp=build_and_mlp_over(slots, D, backend))
    indexer = HistoryIndexer(lm.alphabet, n - 1)
    return TransformerModel(backend, n, lm.alphabet, static, tuple(layers), final,
                            build_output_matrix(lm, indexer), Construction.MULTILAYER.value,
                            float_max_position())


def compile_singlehead(lm: NGramLM, backend: Backend = Backend.RATIONAL) -> TransformerModel:
    backend = _check_backend(Construction.SINGLEHEAD, backend)
    if backend is not Backend.RATIONAL:
        raise ModelError("singlehead decodes decimal digits and needs the rational backend")
    n, B = lm.order, len(lm.alphabet.bos_symbols)
    static = StaticEncoding(EncodingKind.DECIMAL, B)
    D = static.dim
    one, pos = B, B + 1
    # q = (p - (n - 2), -1), k = (1, j): <q, k> = p - (n - 2) - j <= 0 exactly on the window
    query = AffineMap.from_entries(2, D, {(0, pos): 1, (1, one): -1}, backend, [-(n - 2), 0])
    key = AffineMap.from_entries(2, D, {(0, one): 1, (1, pos): 1}, backend)
    # scaling by n - 1 undoes the 1/(n - 1) attention weights
    value = AffineMap.from_entries(D, D, {(s, s): n - 1 for s in range(B)}, backend)
    head = Head(query, key, value, Scoring.NEG_RELU_DOT, Normalizer.HARDMAX)
    layer = Layer((head,), (AffineMap.zero(D, D, backend),))
    N = n - 1
    digits = Mlp.parallel([build_digit_mlp(N, backend)] * B, backend)
    slots = [[s * N + i for s in range(B)] for i in range(N)]
    mlp = digits.then(build_and_mlp_over(slots, B * N, backend))
    final = FinalTransform(L1Rescale(D, B, decimal_scale(n)), mlp)
    indexer = HistoryIndexer(lm.alphabet, n - 1)
    return TransformerModel(backend, n, lm.alphabet, static, (layer,), final,
                            build_output_matrix(lm, indexer), Construction.SINGLEHEAD.value)


def compile_sparse(lm: NGramLM, backend: Backend = Backend.RATIONAL) -> TransformerModel:
    backend = _check_backend(Construction.SPARSE, backend)
    n, B = lm.order, len(lm.alphabet.bos_symbols)
    static = StaticEncoding(EncodingKind.LINEAR, B, pad_blocks=1)
    D = static.dim
    one, pos = 2 * B, 2 * B + 1
    # q = (1, p - h); k = (j, -1) from the rotation [[0, 1], [-1, 0]] on (1, j)
    queries = [AffineMap.from_entries(2, D, {(0, one): 1, (1, pos): 1}, backend, [0, -h]) for h in range(n - 1)]
    key = AffineMap.from_entries(2, D, {(0, pos): 1, (1, one): -1}, backend)
    layer = _fetch_layer(n, B, D, queries, [key] * (n - 1), Scoring.NEG_ABS_DOT, Normalizer.SPARSEMAX, backend)
    indexer = HistoryIndexer(lm.alphabet, n - 1)
    return TransformerModel(backend, n, lm.alphabet, static, (layer,), FinalTransform(),
                            build_output_matrix(lm, indexer), Construction.SPARSE.value)


COMPILERS = {
    Construction.MULTIHEAD: compile_multihead,
    Construction.MULTILAYER: compile_multilayer,
    Construction.SINGLEHEAD: compile_singlehead,
    Construction.SPARSE: compile_sparse,
}


def compile_lm(lm: NGramLM, construction, backend=None) -> TransformerModel:
    construction = Construction(construction)
    backend = construction.default_backend if backend is None else Backend(backend)
    return COMPILERS[construction](lm, backend)


def expected_model_dim(construction, order: int, alphabet_size: int) -> int:
    """Residual-stream width of each construction, with ``B = |Σ| + 1``."""
    B = alphabet_size + 1
    construction = Construction(construction)
    if construction is Construction.MULTIHEAD:
        return 2 * B + 2 * order
    if construction is Construction.MULTILAYER:
        return (order - 1) * B + 4
    if construction is Construction.SINGLEHEAD:
        return B + 2
    return 2 * B + 2
