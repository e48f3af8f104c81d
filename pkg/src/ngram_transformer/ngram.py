"""Exact n-gram language models.

All probabilities are :class:`fractions.Fraction`. A history is a tuple of
``order - 1`` symbols from the alphabet plus BOS; BOS may only appear as a
contiguous prefix ("reachable" histories), and only reachable histories get
a row in the table.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import random
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence

from .numeric import format_rational, parse_rational

DEFAULT_BOS = "<bos>"
DEFAULT_EOS = "<eos>"


class NGramError(ValueError):
    pass


@dataclass(frozen=True)
class Alphabet:
    """Ordered symbol set with reserved BOS/EOS markers.

    The order of ``symbols`` fixes every one-hot index. BOS is index 0 of
    ``bos_symbols``; EOS is the last index of ``eos_symbols``.
    """

    symbols: tuple
    bos: str = DEFAULT_BOS
    eos: str = DEFAULT_EOS

    def __post_init__(self):
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if not symbols:
            raise NGramError("alphabet must contain at least one symbol")
        if len(set(symbols)) != len(symbols):
            raise NGramError(f"duplicate symbols in alphabet {symbols}")
        for s in (*symbols, self.bos, self.eos):
            if not isinstance(s, str) or not s or any(c.isspace() for c in s):
                raise NGramError(f"symbols must be nonempty strings without whitespace, got {s!r}")
        if self.bos == self.eos:
            raise NGramError("BOS and EOS markers must differ")
        if self.bos in symbols or self.eos in symbols:
            raise NGramError("BOS/EOS markers must not be alphabet symbols")

    @property
    def bos_symbols(self) -> tuple:
        return (self.bos, *self.symbols)

    @property
    def eos_symbols(self) -> tuple:
        return (*self.symbols, self.eos)

    def __len__(self) -> int:
        return len(self.symbols)

    def bos_index(self, symbol: str) -> int:
        try:
            return self.bos_symbols.index(symbol)
        except ValueError:
            raise NGramError(f"unknown symbol {symbol!r}") from None

    def eos_index(self, symbol: str) -> int:
        try:
            return self.eos_symbols.index(symbol)
        except ValueError:
            raise NGramError(f"unknown symbol {symbol!r}") from None

    def check_string(self, y: Sequence[str]) -> tuple:
        y = tuple(y)
        for s in y:
            if s not in self.symbols:
                raise NGramError(f"unknown symbol {s!r}")
        return y

    def tokenize(self, text: str) -> tuple:
        """Split user text into symbols.

        Whitespace-separated when the text contains whitespace, otherwise one
        symbol per character (requires single-character symbols).
        """
        if any(c.isspace() for c in text):
            return self.check_string(text.split())
        if text == "":
            return ()
        if text in self.symbols:
            return (text,)
        if all(len(s) == 1 for s in self.symbols):
            return self.check_string(tuple(text))
        raise NGramError(f"cannot split {text!r}; separate multi-character symbols with spaces")


def is_reachable(history: Sequence[str], alphabet: Alphabet) -> bool:
    seen_symbol = False
    for s in history:
        if s == alphabet.bos:
            if seen_symbol:
                return False
        elif s in alphabet.symbols:
            seen_symbol = True
        else:
            return False
    return True


def reachable_histories(alphabet: Alphabet, order: int) -> list:
    """All reachable histories, BOS-heavy first, then lexicographic in symbol order."""
    out = []
    for k in range(order - 1, -1, -1):
        for rest in itertools.product(alphabet.symbols, repeat=order - 1 - k):
            out.append((alphabet.bos,) * k + rest)
    return out


def pad(y: Sequence[str], order: int, bos: str = DEFAULT_BOS) -> list:
    """Prefix ``order - 1`` BOS markers; padded positions are numbered from 1."""
    return [bos] * (order - 1) + list(y)


def history_before(padded: Sequence[str], position: int, order: int) -> tuple:
    """The history conditioning the symbol after 1-based padded ``position``."""
    return tuple(padded[position - order + 1:position])


@dataclass(frozen=True)
class NGramLM:
    order: int
    alphabet: Alphabet
    table: Mapping  # history tuple -> tuple of Fractions indexed by alphabet.eos_symbols

    def __post_init__(self):
        if not isinstance(self.order, int) or self.order < 2:
            raise NGramError(f"order must be an integer >= 2, got {self.order!r}")
        table = {}
        width = len(self.alphabet.eos_symbols)
        for h, row in self.table.items():
            h = tuple(h)
            if len(h) != self.order - 1:
                raise NGramError(f"history {h} has length {len(h)}, expected {self.order - 1}")
            if not is_reachable(h, self.alphabet):
                raise NGramError(f"history {h} is unreachable or uses unknown symbols")
            if isinstance(row, Mapping):
                unknown = set(row) - set(self.alphabet.eos_symbols)
                if unknown:
                    raise NGramError(f"unknown symbols {sorted(unknown)} in row {h}")
                row = tuple(Fraction(row.get(s, 0)) for s in self.alphabet.eos_symbols)
            row = tuple(Fraction(p) for p in row)
            if len(row) != width:
                raise NGramError(f"row {h} has {len(row)} entries, expected {width}")
            if any(p < 0 or p > 1 for p in row):
                raise NGramError(f"row {h} has an entry outside [0, 1]")
            if sum(row) != 1:
                raise NGramError(f"row not normalized: {' '.join(h)} sums to {sum(row)}")
            table[h] = row
        missing = [h for h in reachable_histories(self.alphabet, self.order) if h not in table]
        if missing:
            raise NGramError(f"missing rows for histories {missing[:3]}{'...' if len(missing) > 3 else ''}")
        object.__setattr__(self, "table", table)

    def row(self, history: Sequence[str]) -> tuple:
        h = tuple(history)
        if len(h) != self.order - 1 or not is_reachable(h, self.alphabet):
            raise NGramError(f"unreachable or malformed history {h}")
        try:
            return self.table[h]
        except KeyError:
            raise NGramError(f"missing history {h}") from None

    def conditional(self, y: str, history: Sequence[str]) -> Fraction:
        return self.row(history)[self.alphabet.eos_index(y)]

    def string_prob(self, y: Sequence[str]) -> Fraction:
        y = self.alphabet.check_string(y)
        padded = pad(y, self.order, self.alphabet.bos)
        prob = Fraction(1)
        for p in range(self.order - 1, len(padded) + 1):
            nxt = padded[p] if p < len(padded) else self.alphabet.eos
            prob *= self.conditional(nxt, history_before(padded, p, self.order))
            if prob == 0:
                break
        return prob

    def prefix_prob(self, y: Sequence[str]) -> Fraction:
        """Probability that a sampled string starts with ``y``."""
        y = self.alphabet.check_string(y)
        padded = pad(y, self.order, self.alphabet.bos)
        prob = Fraction(1)
        for p in range(self.order - 1, len(padded)):
            prob *= self.conditional(padded[p], history_before(padded, p, self.order))
        return prob

    def fingerprint(self) -> str:
        return hashlib.sha256(dumps_lm(self).encode()).hexdigest()[:12]


def string_prob(lm: NGramLM, y: Sequence[str]) -> Fraction:
    return lm.string_prob(y)


def random_lm(order: int, alphabet: Alphabet, seed: int, max_denominator: int = 1000,
              zero_fraction: float = 0.0) -> NGramLM:
    """A random LM with rational rows, deterministic in ``seed``.

    Each outcome gets a weight drawn uniformly from ``1..max_denominator``;
    with probability ``zero_fraction`` the weight is set to zero instead
    (each row keeps at least one positive entry).
    """
    if order < 2:
        raise NGramError("order must be >= 2")
    width = len(alphabet.eos_symbols)
    if max_denominator < width:
        raise NGramError(f"max_denominator must be at least |alphabet| + 1 = {width}")
    rng = random.Random(seed)
    table = {}
    for h in reachable_histories(alphabet, order):
        weights = [rng.randint(1, max_denominator) for _ in range(width)]
        if zero_fraction > 0:
            keep = rng.randrange(width)
            weights = [w if i == keep or rng.random() >= zero_fraction else 0
                       for i, w in enumerate(weights)]
        total = sum(weights)
        table[h] = tuple(Fraction(w, total) for w in weights)
    return NGramLM(order, alphabet, table)


def estimate_mle(corpus: Iterable[Sequence[str]], order: int, alphabet: Alphabet,
                 add_lambda=Fraction(0)) -> NGramLM:
    """Additively smoothed maximum-likelihood estimate.

    ``p(y | h) = (c(h, y) + lambda) / (c(h) + lambda |alphabet + EOS|)``; rows
    with a zero denominator fall back to uniform.
    """
    lam = Fraction(add_lambda)
    if lam < 0:
        raise NGramError("add_lambda must be nonnegative")
    counts: Counter = Counter()
    for y in corpus:
        y = alphabet.check_string(y)
        padded = pad(y, order, alphabet.bos) + [alphabet.eos]
        for p in range(order - 1, len(padded)):
            counts[history_before(padded, p, order), padded[p]] += 1
    width = len(alphabet.eos_symbols)
    table = {}
    for h in reachable_histories(alphabet, order):
        row = [counts[h, s] for s in alphabet.eos_symbols]
        denom = sum(row) + lam * width
        if denom == 0:
            table[h] = (Fraction(1, width),) * width
        else:
            table[h] = tuple((c + lam) / denom for c in row)
    return NGramLM(order, alphabet, table)


def enumerate_strings(alphabet: Alphabet, max_len: int) -> Iterator[tuple]:
    """Every string of length <= ``max_len``, shorter first, then lexicographic."""
    if max_len < 0:
        raise ValueError("max_len must be nonnegative")
    for length in range(max_len + 1):
        yield from itertools.product(alphabet.symbols, repeat=length)


def lm_to_dict(lm: NGramLM) -> dict:
    rows = {}
    for h in sorted(lm.table, key=lambda h: " ".join(h)):
        rows[" ".join(h)] = {s: format_rational(p) for s, p in zip(lm.alphabet.eos_symbols, lm.table[h])}
    return {
        "order": lm.order,
        "alphabet": list(lm.alphabet.symbols),
        "bos": lm.alphabet.bos,
        "eos": lm.alphabet.eos,
        "rows": rows,
    }


def dumps_lm(lm: NGramLM) -> str:
    return json.dumps(lm_to_dict(lm), indent=2, ensure_ascii=False) + "\n"


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise NGramError(f"duplicate key {k!r}")
        out[k] = v
    return out


def lm_from_dict(data: Mapping) -> NGramLM:
    try:
        alphabet = Alphabet(tuple(data["alphabet"]), data.get("bos", DEFAULT_BOS), data.get("eos", DEFAULT_EOS))
        order = data["order"]
        rows = data["rows"]
    except (KeyError, TypeError) as exc:
        raise NGramError(f"malformed LM file: {exc}") from exc
    if not isinstance(rows, Mapping):
        raise NGramError("malformed LM file: 'rows' must be an object")
    table = {}
    for key, row in rows.items():
        h = tuple(key.split(" ")) if key else ()
        for s in h:
            if s not in alphabet.bos_symbols:
                raise NGramError(f"unknown symbol {s!r} in history {key!r}")
        if not isinstance(row, Mapping):
            raise NGramError(f"row {key!r} must be an object")
        try:
            table[h] = {s: parse_rational(v) for s, v in row.items()}
        except ValueError as exc:
            raise NGramError(str(exc)) from exc
    return NGramLM(order, alphabet, table)


def loads_lm(text: str) -> NGramLM:
    try:
        data = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise NGramError(f"malformed LM file: {exc}") from exc
    return lm_from_dict(data)


def save_lm(lm: NGramLM, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_lm(lm))


def load_lm(path) -> NGramLM:
    with open(path, encoding="utf-8") as f:
        return loads_lm(f.read())
