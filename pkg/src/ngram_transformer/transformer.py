"""Executable transformer semantics.

Layers follow ``a_t = Att(q_t, K_t, V_t) + x_t`` and ``z_t = O(a_t) + a_t``
with no layer normalization. Positions are 1-based over the BOS-padded
string, and the query at padded position ``p`` predicts the symbol at
``p + 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

from .ngram import Alphabet, NGramError, pad
from .numeric import (
    Backend,
    DimensionError,
    ExtReal,
    Mat,
    dot,
    format_scalar,
    hardmax,
    parse_scalar,
    relu,
    softmax,
    softmax_logdomain,
    sparsemax,
    vadd,
)


class Scoring(str, Enum):
    DOT = "dot"
    NEG_ABS_DOT = "neg_abs_dot"
    NEG_RELU_DOT = "neg_relu_dot"

    def __call__(self, q, k):
        s = dot(q, k)
        if self is Scoring.DOT:
            return s
        if self is Scoring.NEG_ABS_DOT:
            return -abs(s)
        return -s if s > 0 else s - s


class Normalizer(str, Enum):
    HARDMAX = "hardmax"
    SPARSEMAX = "sparsemax"
    SOFTMAX = "softmax"

    def __call__(self, scores, backend: Backend):
        if self is Normalizer.HARDMAX:
            return hardmax(scores, backend.tie_eps)
        if self is Normalizer.SPARSEMAX:
            return sparsemax(scores)
        return softmax(scores)


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class AffineMap:
    matrix: Mat
    bias: tuple

    def __post_init__(self):
        object.__setattr__(self, "bias", tuple(self.bias))
        if len(self.bias) != self.matrix.nrows:
            raise DimensionError(f"bias of length {len(self.bias)} for a {self.matrix.shape} matrix")

    @property
    def in_dim(self) -> int:
        return self.matrix.ncols

    @property
    def out_dim(self) -> int:
        return self.matrix.nrows

    def apply(self, x) -> tuple:
        y = self.matrix.matvec(x)
        return vadd(y, self.bias) if any(self.bias) else y

    @classmethod
    def linear(cls, matrix: Mat, backend: Backend) -> AffineMap:
        return cls(matrix, (backend.zero,) * matrix.nrows)

    @classmethod
    def zero(cls, out_dim: int, in_dim: int, backend: Backend) -> AffineMap:
        return cls.linear(Mat.zeros(out_dim, in_dim, backend), backend)

    @classmethod
    def identity(cls, dim: int, backend: Backend) -> AffineMap:
        return cls.linear(Mat.identity(dim, backend), backend)

    @classmethod
    def from_entries(cls, out_dim: int, in_dim: int, entries: dict, backend: Backend, bias=None) -> AffineMap:
        b = backend.vec(bias) if bias is not None else (backend.zero,) * out_dim
        return cls(Mat.from_entries(out_dim, in_dim, entries, backend), b)

    def compose(self, inner: AffineMap) -> AffineMap:
        """``self(inner(x))`` as a single affine map."""
        return AffineMap(self.matrix.matmul(inner.matrix), vadd(self.matrix.matvec(inner.bias), self.bias))


def block_diag(maps: Sequence[AffineMap], backend: Backend) -> AffineMap:
    entries = {}
    bias = []
    r0 = c0 = 0
    for m in maps:
        for i, row in enumerate(m.matrix.rows):
            for j, v in enumerate(row):
                if v:
                    entries[r0 + i, c0 + j] = v
        bias.extend(m.bias)
        r0 += m.out_dim
        c0 += m.in_dim
    return AffineMap.from_entries(r0, c0, entries, backend, bias)


@dataclass(frozen=True)
class Mlp:
    """Affine maps each followed by an activation; the last one is unactivated."""

    layers: tuple  # of (AffineMap, Activation)

    def __post_init__(self):
        layers = tuple((a, Activation(act)) for a, act in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ModelError("an MLP needs at least one layer")
        for (a, _), (b, _) in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionError(f"MLP layer output {a.out_dim} does not feed input {b.in_dim}")
        if layers[-1][1] is not Activation.IDENTITY:
            raise ModelError("the last MLP layer must use the identity activation")

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    def forward(self, x) -> tuple:
        for affine, act in self.layers:
            x = affine.apply(x)
            if act is Activation.RELU:
                x = relu(x)
        return x

    __call__ = forward

    @classmethod
    def identity(cls, dim: int, backend: Backend) -> Mlp:
        return cls(((AffineMap.identity(dim, backend), Activation.IDENTITY),))

    def then(self, outer: Mlp) -> Mlp:
        """``outer(self(x))``; the unactivated seam is folded into one affine map."""
        last, _ = self.layers[-1]
        first, act = outer.layers[0]
        seam = (first.compose(last), act)
        return Mlp(self.layers[:-1] + (seam,) + outer.layers[1:])

    @classmethod
    def parallel(cls, mlps: Sequence[Mlp], backend: Backend) -> Mlp:
        """Block-diagonal stacking of equal-depth MLPs with matching activations."""
        depth = mlps[0].depth
        if any(m.depth != depth for m in mlps):
            raise ModelError("parallel MLPs must have equal depth")
        layers = []
        for i in range(depth):
            acts = {m.layers[i][1] for m in mlps}
            if len(acts) != 1:
                raise ModelError("parallel MLPs must share activations layer by layer")
            layers.append((block_diag([m.layers[i][0] for m in mlps], backend), acts.pop()))
        return cls(tuple(layers))


def mlp_forward(mlp: Mlp, x) -> tuple:
    return mlp.forward(x)


@dataclass(frozen=True)
class Head:
    query: AffineMap
    key: AffineMap
    value: AffineMap
    scoring: Scoring
    normalizer: Normalizer

    def __post_init__(self):
        object.__setattr__(self, "scoring", Scoring(self.scoring))
        object.__setattr__(self, "normalizer", Normalizer(self.normalizer))
        if self.query.out_dim != self.key.out_dim:
            raise DimensionError("query and key maps must produce vectors of equal dimension")
        if self.query.in_dim != self.key.in_dim or self.key.in_dim != self.value.in_dim:
            raise DimensionError("query, key and value maps must read the same input dimension")


@dataclass(frozen=True)
class Layer:
    """One transformer layer; several heads are recombined row-wise by ``combiner``."""

    heads: tuple
    outputs: tuple  # one O map per head
    combiner: Optional[Mlp] = None

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(self.heads))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if not self.heads or len(self.heads) != len(self.outputs):
            raise ModelError("a layer needs one output map per head and at least one head")
        dim = self.heads[0].value.in_dim
        for h, o in zip(self.heads, self.outputs):
            if h.value.in_dim != dim or h.value.out_dim != dim or o.in_dim != dim or o.out_dim != dim:
                raise DimensionError(f"value and output maps must be {dim} -> {dim}")
        if self.combiner is None and len(self.heads) > 1:
            raise ModelError("multi-head layers need a combiner")
        if self.combiner is not None and self.combiner.in_dim != dim * len(self.heads):
            raise DimensionError(f"combiner expects {self.combiner.in_dim} inputs, heads give {dim * len(self.heads)}")

    @property
    def in_dim(self) -> int:
        return self.heads[0].value.in_dim

    @property
    def out_dim(self) -> int:
        return self.combiner.out_dim if self.combiner is not None else self.in_dim


@dataclass(frozen=True)
class L1Rescale:
    """Keep the first ``keep`` coordinates, divide by their L1 norm, multiply by ``scale``."""

    in_dim: int
    keep: int
    scale: object

    def apply(self, x) -> tuple:
        if len(x) != self.in_dim:
            raise DimensionError(f"L1 rescale expects {self.in_dim} inputs, got {len(x)}")
        head = x[:self.keep]
        norm = sum((abs(v) for v in head), head[0] - head[0])
        if norm == 0:
            raise ModelError("L1 rescale of a zero vector")
        return tuple(v * self.scale / norm for v in head)


@dataclass(frozen=True)
class FinalTransform:
    """``F``: an optional L1 rescale followed by an optional MLP (identity if both absent)."""

    rescale: Optional[L1Rescale] = None
    mlp: Optional[Mlp] = None

    def apply(self, x) -> tuple:
        if self.rescale is not None:
            x = self.rescale.apply(x)
        if self.mlp is not None:
            x = self.mlp.forward(x)
        return x

    def out_dim(self, in_dim: int) -> int:
        if self.mlp is not None:
            return self.mlp.out_dim
        if self.rescale is not None:
            return self.rescale.keep
        return in_dim

    def check_input(self, in_dim: int) -> None:
        if self.rescale is not None:
            if self.rescale.in_dim != in_dim:
                raise DimensionError(f"F expects {self.rescale.in_dim} inputs, layers give {in_dim}")
            in_dim = self.rescale.keep
        if self.mlp is not None and self.mlp.in_dim != in_dim:
            raise DimensionError(f"F's MLP expects {self.mlp.in_dim} inputs, gets {in_dim}")


class EncodingKind(str, Enum):
    ONEHOT = "onehot"    # (onehot; zeros)
    SQRT = "sqrt"        # (onehot; zeros; (sqrt(1/(p+k)), sqrt(1-1/(p+k))) for k in offsets)
    DECIMAL = "decimal"  # (10^-p onehot; zeros; 1; p)
    LINEAR = "linear"    # (onehot; zeros; 1; p)


@dataclass(frozen=True)
class StaticEncoding:
    """Position-augmented symbol representation ``r(y, p)``.

    ``width`` is the size of the symbol one-hot (BOS first); ``pad_blocks``
    zero blocks of that width follow it, then the positional coordinates.
    """

    kind: EncodingKind
    width: int
    pad_blocks: int = 0
    offsets: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", EncodingKind(self.kind))
        object.__setattr__(self, "offsets", tuple(self.offsets))
        if self.width < 1 or self.pad_blocks < 0:
            raise ModelError("encoding width must be positive and pad_blocks nonnegative")
        if self.offsets and self.kind is not EncodingKind.SQRT:
            raise ModelError("offsets only apply to the sqrt encoding")
        if any(k < 0 for k in self.offsets):
            raise ModelError("sqrt offsets must be nonnegative")

    @property
    def dim(self) -> int:
        base = self.width * (1 + self.pad_blocks)
        if self.kind is EncodingKind.SQRT:
            return base + 2 * len(self.offsets)
        if self.kind in (EncodingKind.DECIMAL, EncodingKind.LINEAR):
            return base + 2
        return base

    def check_backend(self, backend: Backend) -> None:
        if self.kind is EncodingKind.SQRT and backend is Backend.RATIONAL:
            raise ModelError("square-root positional encodings are irrational encodings; use the float backend")

    def encode(self, symbol_index: int, position: int, backend: Backend) -> tuple:
        if not 0 <= symbol_index < self.width:
            raise ModelError(f"symbol index {symbol_index} outside encoding width {self.width}")
        if position < 1:
            raise ModelError("positions start at 1")
        zero, one = backend.zero, backend.one
        sym = [zero] * self.width
        if self.kind is EncodingKind.DECIMAL:
            sym[symbol_index] = backend.coerce(Fraction(1, 10 ** position)) if backend is Backend.RATIONAL else 10.0 ** -position
        else:
            sym[symbol_index] = one
        out = sym + [zero] * (self.width * self.pad_blocks)
        if self.kind is EncodingKind.SQRT:
            self.check_backend(backend)
            for k in self.offsets:
                t = position + k
                out += [math.sqrt(1.0 / t), math.sqrt(1.0 - 1.0 / t)]
        elif self.kind in (EncodingKind.DECIMAL, EncodingKind.LINEAR):
            out += [one, backend.coerce(position)]
        return tuple(out)


@dataclass
class ForwardTrace:
    """Side-channel record of an instrumented forward pass.

    ``states[0]`` holds the static encodings and ``states[l]`` the output of
    layer ``l``. ``scores[l][h][p - 1]`` and ``weights[l][h][p - 1]`` hold the
    attention scores and weights of head ``h`` in layer ``l + 1`` for query ``p``.
    """

    states: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    weights: list = field(default_factory=list)


@dataclass(frozen=True)
class TransformerModel:
    backend: Backend
    order: int
    alphabet: Alphabet
    static: StaticEncoding
    layers: tuple
    final: FinalTransform
    output: tuple  # rows over alphabet.eos_symbols, columns over history indices; entries ExtReal
    construction: str = "custom"
    max_position: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "backend", Backend(self.backend))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "output", tuple(tuple(r) for r in self.output))
        self.static.check_backend(self.backend)
        if self.static.width != len(self.alphabet.bos_symbols):
            raise DimensionError("static encoding width must equal |alphabet| + 1")
        dim = self.static.dim
        for i, layer in enumerate(self.layers, start=1):
            if layer.in_dim != dim:
                raise DimensionError(f"layer {i} expects dimension {layer.in_dim}, receives {dim}")
            dim = layer.out_dim
        self.final.check_input(dim)
        enc_dim = self.final.out_dim(dim)
        if len(self.output) != len(self.alphabet.eos_symbols):
            raise DimensionError("output matrix needs one row per symbol plus EOS")
        for row in self.output:
            if len(row) != enc_dim:
                raise DimensionError(f"output matrix has {len(row)} columns, F produces {enc_dim}")
            if not all(isinstance(v, ExtReal) for v in row):
                raise ModelError("output matrix entries must be log-domain values")

    @property
    def model_dim(self) -> int:
        return self.static.dim

    @property
    def contextual_dim(self) -> int:
        return self.layers[-1].out_dim if self.layers else self.static.dim

    @property
    def enc_dim(self) -> int:
        return self.final.out_dim(self.contextual_dim)


def attention_weights(head: Head, query, keys: Sequence, backend: Backend):
    """Scores ``f(q, k_j)`` and normalized weights for one query."""
    scores = tuple(head.scoring(query, k) for k in keys)
    return scores, head.normalizer(scores, backend)


def attend(head: Head, query_pos: int, xs: Sequence, backend: Backend) -> tuple:
    """Attention output at 1-based ``query_pos`` over positions ``1..query_pos``."""
    if query_pos < 1 or query_pos > len(xs):
        raise ModelError(f"query position {query_pos} outside 1..{len(xs)}")
    keys = [head.key.apply(x) for x in xs[:query_pos]]
    _, w = attention_weights(head, head.query.apply(xs[query_pos - 1]), keys, backend)
    return _mix(w, [head.value.apply(x) for x in xs[:query_pos]], backend)


def _mix(weights, values, backend: Backend) -> tuple:
    out = [backend.zero] * len(values[0])
    for s, v in zip(weights, values):
        if s:
            for i, vi in enumerate(v):
                if vi:
                    out[i] += s * vi
    return tuple(out)


def layer_forward(layer: Layer, xs: Sequence, backend: Backend, trace: Optional[ForwardTrace] = None) -> list:
    if not xs:
        raise ModelError("layer applied to an empty sequence")
    per_head = []
    trace_scores, trace_weights = [], []
    for head, out_map in zip(layer.heads, layer.outputs):
        queries = [head.query.apply(x) for x in xs]
        keys = [head.key.apply(x) for x in xs]
        values = [head.value.apply(x) for x in xs]
        zs, h_scores, h_weights = [], [], []
        for p in range(1, len(xs) + 1):
            scores, w = attention_weights(head, queries[p - 1], keys[:p], backend)
            a = vadd(_mix(w, values[:p], backend), xs[p - 1])
            zs.append(vadd(out_map.apply(a), a))
            h_scores.append(scores)
            h_weights.append(w)
        per_head.append(zs)
        trace_scores.append(h_scores)
        trace_weights.append(h_weights)
    if trace is not None:
        trace.scores.append(trace_scores)
        trace.weights.append(trace_weights)
    if layer.combiner is None:
        return per_head[0]
    return [layer.combiner.forward(tuple(v for z in zs for v in z)) for zs in zip(*per_head)]


def static_encodings(model: TransformerModel, y: Sequence[str]) -> list:
    padded = pad(model.alphabet.check_string(y), model.order, model.alphabet.bos)
    if model.max_position is not None and len(padded) > model.max_position:
        raise ModelError(f"padded length {len(padded)} exceeds the model's validated maximum position {model.max_position}")
    return [model.static.encode(model.alphabet.bos_index(s), p, model.backend)
            for p, s in enumerate(padded, start=1)]


def transformer_forward(model: TransformerModel, y: Sequence[str], trace: Optional[ForwardTrace] = None) -> list:
    """Contextual vectors for every padded position of ``y``."""
    xs = static_encodings(model, y)
    if trace is not None:
        trace.states.append(xs)
    for layer in model.layers:
        xs = layer_forward(layer, xs, model.backend, trace)
        if trace is not None:
            trace.states.append(xs)
    return xs


def _is_integral(v) -> bool:
    if isinstance(v, float):
        return v.is_integer()
    return Fraction(v).denominator == 1


def output_distribution(model: TransformerModel, enc: Sequence) -> tuple:
    """``softmax(E enc)`` over ``alphabet.eos_symbols``.

    Integral ``enc`` keeps the computation exact: ``E enc`` is a product of
    rational powers in the linear domain. The float backend converts only
    the resulting distribution to float.
    """
    if all(_is_integral(v) for v in enc):
        ks = [int(v) for v in enc]
        logits = []
        for row in model.output:
            acc = ExtReal(1)
            for k, e in zip(ks, row):
                if k:
                    acc = acc + e.scale(k)
            logits.append(acc)
        dist = softmax_logdomain(logits)
        if model.backend is Backend.FLOAT:
            return tuple(float(p) for p in dist)
        return dist
    if model.backend is Backend.RATIONAL:
        raise ModelError("non-integral representation on the rational backend; softmax would be irrational")
    logits = []
    for row in model.output:
        acc = 0.0
        for k, e in zip(enc, row):
            if k:
                if e.is_neg_inf:
                    if k < 0:
                        raise ModelError("negative weight on a -inf logit")
                    acc = -math.inf
                else:
                    acc += float(k) * float(e)
        logits.append(acc)
    return softmax(logits)


def _check_one_hot(enc) -> None:
    ones = [i for i, v in enumerate(enc) if v == 1]
    if len(ones) != 1 or any(v != 0 for i, v in enumerate(enc) if i != ones[0]):
        raise ModelError("representation is not a one-hot history vector")


def lm_prefix_distributions(model: TransformerModel, y: Sequence[str], audit: bool = False) -> list:
    """Next-symbol distributions after each prefix ``y[:t]``, ``t = 0..len(y)``.

    One forward pass serves every prefix because attention is causal.
    """
    xs = transformer_forward(model, y)
    out = []
    for p in range(model.order - 1, len(xs) + 1):
        enc = model.final.apply(xs[p - 1])
        if audit:
            _check_one_hot(enc)
        out.append(output_distribution(model, enc))
    return out


class PrefixEvaluator:
    """Memoized causal evaluation over many strings sharing prefixes.

    The state of every layer at padded position ``p`` depends only on the
    padded prefix ending at ``p``, so each distinct prefix is computed once.
    Results equal those of :func:`transformer_forward` exactly.
    """

    def __init__(self, model: TransformerModel):
        self.model = model
        # padded prefix -> per layer: (input state, [(key, value) per head]) plus final output
        self._cache: dict = {}

    def _entry(self, padded: tuple):
        entry = self._cache.get(padded)
        if entry is not None:
            return entry
        model = self.model
        p = len(padded)
        if model.max_position is not None and p > model.max_position:
            raise ModelError(f"padded length {p} exceeds the model's validated maximum position {model.max_position}")
        earlier = [self._entry(padded[:j]) for j in range(1, p)]
        x = model.static.encode(model.alphabet.bos_index(padded[-1]), p, model.backend)
        kvs = []
        for li, layer in enumerate(model.layers):
            layer_kv, zs = [], []
            for hi, (head, out_map) in enumerate(zip(layer.heads, layer.outputs)):
                k, v = head.key.apply(x), head.value.apply(x)
                layer_kv.append((k, v))
                keys = [e[0][li][hi][0] for e in earlier] + [k]
                values = [e[0][li][hi][1] for e in earlier] + [v]
                _, w = attention_weights(head, head.query.apply(x), keys, model.backend)
                a = vadd(_mix(w, values, model.backend), x)
                zs.append(vadd(out_map.apply(a), a))
            kvs.append(layer_kv)
            x = zs[0] if layer.combiner is None else layer.combiner.forward(tuple(v for z in zs for v in z))
        entry = (kvs, x)
        self._cache[padded] = entry
        return entry

    def state(self, prefix: Sequence[str]) -> tuple:
        """Final-layer vector at the last padded position of ``prefix``."""
        model = self.model
        padded = tuple(pad(model.alphabet.check_string(prefix), model.order, model.alphabet.bos))
        return self._entry(padded)[1]

    def distribution(self, prefix: Sequence[str], audit: bool = False) -> tuple:
        enc = self.model.final.apply(self.state(prefix))
        if audit:
            _check_one_hot(enc)
        return output_distribution(self.model, enc)


def lm_conditional(model: TransformerModel, prefix: Sequence[str], audit: bool = False) -> tuple:
    return lm_prefix_distributions(model, prefix, audit)[-1]


def lm_string_prob(model: TransformerModel, y: Sequence[str]):
    y = model.alphabet.check_string(y)
    dists = lm_prefix_distributions(model, y)
    prob = model.backend.one
    for sym, dist in zip(y, dists):
        prob *= dist[model.alphabet.eos_index(sym)]
    return prob * dists[-1][-1]


# -- serialization ---------------------------------------------------------

def _mat_to_list(m: Mat) -> list:
    return [[format_scalar(v) for v in row] for row in m.rows]


def _affine_to_dict(a: AffineMap) -> dict:
    return {"matrix": _mat_to_list(a.matrix), "bias": [format_scalar(v) for v in a.bias],
            "shape": [a.out_dim, a.in_dim]}


def _affine_from_dict(d: dict, backend: Backend) -> AffineMap:
    rows_n, cols_n = d["shape"]
    rows = tuple(tuple(parse_scalar(v, backend) for v in row) for row in d["matrix"])
    if len(rows) != rows_n:
        raise DimensionError(f"matrix declares {rows_n} rows but has {len(rows)}")
    return AffineMap(Mat(rows, cols_n), tuple(parse_scalar(v, backend) for v in d["bias"]))


def _mlp_to_dict(m: Optional[Mlp]):
    if m is None:
        return None
    return [{"affine": _affine_to_dict(a), "activation": act.value} for a, act in m.layers]


def _mlp_from_dict(d, backend: Backend) -> Optional[Mlp]:
    if d is None:
        return None
    return Mlp(tuple((_affine_from_dict(l["affine"], backend), Activation(l["activation"])) for l in d))


def model_to_dict(model: TransformerModel) -> dict:
    final = {"rescale": None, "mlp": _mlp_to_dict(model.final.mlp)}
    if model.final.rescale is not None:
        r = model.final.rescale
        final["rescale"] = {"in_dim": r.in_dim, "keep": r.keep, "scale": format_scalar(r.scale)}
    return {
        "construction": model.construction,
        "backend": model.backend.value,
        "order": model.order,
        "alphabet": list(model.alphabet.symbols),
        "bos": model.alphabet.bos,
        "eos": model.alphabet.eos,
        "max_position": model.max_position,
        "static": {
            "kind": model.static.kind.value,
            "width": model.static.width,
            "pad_blocks": model.static.pad_blocks,
            "offsets": list(model.static.offsets),
        },
        "layers": [
            {
                "heads": [
                    {
                        "query": _affine_to_dict(h.query),
                        "key": _affine_to_dict(h.key),
                        "value": _affine_to_dict(h.value),
                        "scoring": h.scoring.value,
                        "normalizer": h.normalizer.value,
                    }
                    for h in layer.heads
                ],
                "outputs": [_affine_to_dict(o) for o in layer.outputs],
                "combiner": _mlp_to_dict(layer.combiner),
            }
            for layer in model.layers
        ],
        "final": final,
        "output": [[e.to_text() for e in row] for row in model.output],
    }


def model_from_dict(d: dict) -> TransformerModel:
    try:
        backend = Backend(d["backend"])
        alphabet = Alphabet(tuple(d["alphabet"]), d.get("bos", "<bos>"), d.get("eos", "<eos>"))
        st = d["static"]
        static = StaticEncoding(EncodingKind(st["kind"]), st["width"], st.get("pad_blocks", 0), tuple(st.get("offsets", ())))
        layers = []
        for ld in d["layers"]:
            heads = tuple(
                Head(_affine_from_dict(h["query"], backend), _affine_from_dict(h["key"], backend),
                     _affine_from_dict(h["value"], backend), Scoring(h["scoring"]), Normalizer(h["normalizer"]))
                for h in ld["heads"]
            )
            outputs = tuple(_affine_from_dict(o, backend) for o in ld["outputs"])
            layers.append(Layer(heads, outputs, _mlp_from_dict(ld.get("combiner"), backend)))
        fd = d["final"]
        rescale = None
        if fd.get("rescale") is not None:
            r = fd["rescale"]
            rescale = L1Rescale(r["in_dim"], r["keep"], parse_scalar(r["scale"], backend))
        final = FinalTransform(rescale, _mlp_from_dict(fd.get("mlp"), backend))
        output = tuple(tuple(ExtReal.from_text(e) for e in row) for row in d["output"])
        return TransformerModel(backend, d["order"], alphabet, static, tuple(layers), final, output,
                                d.get("construction", "custom"), d.get("max_position"))
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model file: {exc!r}") from exc
    except NGramError as exc:
        raise ModelError(str(exc)) from exc


def dumps_model(model: TransformerModel) -> str:
    return json.dumps(model_to_dict(model), indent=1) + "\n"


def loads_model(text: str) -> TransformerModel:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"malformed model file: {exc}") from exc
    return model_from_dict(data)


def save_model(model: TransformerModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_model(model))


def load_model(path) -> TransformerModel:
    with open(path, encoding="utf-8") as f:
        return loads_model(f.read())
