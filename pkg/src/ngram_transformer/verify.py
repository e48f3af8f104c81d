"""Brute-force weak-equivalence checks and structural audits of compiled models.

A finite ``max_len`` is only a proxy for equality over all strings; the
real guarantee is exact per-string agreement plus the exactness of the
construction itself.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

from .compiler import Construction, HistoryIndexer, expected_model_dim, sqrt_score_margin, FLOAT_SCORE_MARGIN
from .ngram import NGramLM, enumerate_strings, history_before, pad
from .numeric import Backend, format_scalar, hardmax, sparsemax
from .transformer import ForwardTrace, PrefixEvaluator, TransformerModel, transformer_forward

EXACT = "exact"
TOL = "tol"
DEFAULT_TOL = 1e-9
FLOAT_SUM_TOL = 1e-12


@dataclass
class AuditResult:
    name: str
    passed: bool = True
    checked: int = 0
    violations: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def fail(self, message: str, limit: int = 20) -> None:
        self.passed = False
        if len(self.violations) < limit:
            self.violations.append(message)

    def merge(self, other: AuditResult) -> None:
        self.passed = self.passed and other.passed
        self.checked += other.checked
        self.violations.extend(other.violations[: max(0, 20 - len(self.violations))])
        self.notes.extend(other.notes)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{self.name}: {status} ({self.checked} checks)"
        if self.violations:
            text += f"; first violation: {self.violations[0]}"
        return text


@dataclass
class EquivalenceReport:
    construction: str
    backend: str
    fingerprint: str
    max_len: int
    mode: str
    tolerance: Optional[float] = None
    per_length: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    distribution_check: Optional[AuditResult] = None
    attention_audit: Optional[AuditResult] = None
    dimension_audit: Optional[AuditResult] = None
    extra_audits: list = field(default_factory=list)

    @property
    def strings_checked(self) -> int:
        return sum(row["count"] for row in self.per_length)

    @property
    def strings_passed(self) -> int:
        return sum(row["passed"] for row in self.per_length)

    @property
    def equivalent(self) -> bool:
        return not self.failures

    @property
    def audits(self) -> list:
        return [a for a in (self.distribution_check, self.attention_audit, self.dimension_audit, *self.extra_audits)
                if a is not None]

    @property
    def passed(self) -> bool:
        return self.equivalent and all(a.passed for a in self.audits)

    def to_dict(self) -> dict:
        d = {
            "construction": self.construction,
            "backend": self.backend,
            "lm_fingerprint": self.fingerprint,
            "max_len": self.max_len,
            "mode": self.mode,
            "verdict": "pass" if self.passed else "fail",
            "equivalent": self.equivalent,
            "strings_checked": self.strings_checked,
            "strings_passed": self.strings_passed,
            "per_length": self.per_length,
            "failures": self.failures,
            "audits": [asdict(a) for a in self.audits],
            "note": "equality is checked on every string up to max_len only",
        }
        if self.mode == TOL:
            d["tolerance"] = self.tolerance
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def summary(self) -> str:
        lines = [
            f"construction {self.construction} ({self.backend}), lm {self.fingerprint}, max_len {self.max_len}",
            f"{self.mode}: {self.strings_passed}/{self.strings_checked}",
            f"{'len':>4} {'strings':>8} {'passed':>7}  {'max |dlog p|' if self.mode == TOL else 'all equal':>12}",
        ]
        for row in self.per_length:
            last = f"{row['max_log_deviation']:.3e}" if self.mode == TOL else str(row["all_equal"])
            lines.append(f"{row['length']:>4} {row['count']:>8} {row['passed']:>7}  {last:>12}")
        for f in self.failures:
            lines.append(f"failing string {' '.join(f['string']) or '(empty)'}: lm {f['lm_prob']} vs model {f['model_prob']}")
        for a in self.audits:
            lines.append(a.summary())
        lines.append("verdict: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def _log(x) -> float:
    if isinstance(x, Fraction):
        return math.log(x.numerator) - math.log(x.denominator)
    return math.log(x)


def _string_probs(model: TransformerModel, alphabet_strings: Sequence[tuple], dist_check: AuditResult) -> dict:
    """Model probability of every string, walking prefixes through one shared cache."""
    evaluator = PrefixEvaluator(model)
    eos = len(model.alphabet.symbols)
    prefix_mass = {(): model.backend.one}
    out = {}
    for y in alphabet_strings:
        dist = evaluator.distribution(y)
        total = sum(dist, model.backend.zero)
        dist_check.checked += 1
        bad_sum = total != 1 if model.backend is Backend.RATIONAL else abs(total - 1) > FLOAT_SUM_TOL
        if bad_sum or any(p < 0 or p > 1 for p in dist):
            dist_check.fail(f"prefix {' '.join(y) or '(empty)'}: conditional sums to {total}")
        mass = prefix_mass[y]
        out[y] = mass * dist[eos]
        for i, sym in enumerate(model.alphabet.symbols):
            prefix_mass[y + (sym,)] = mass * dist[i]
    return out


def check_weak_equivalence(lm: NGramLM, model: TransformerModel, max_len: int, mode: Optional[str] = None,
                           tol: float = DEFAULT_TOL) -> EquivalenceReport:
    """Compare string probabilities of ``lm`` and ``model`` on every string up to ``max_len``.

    ``exact`` mode demands rational equality; ``tol`` mode demands
    ``|log p_model - log p_lm| <= tol`` with zero probabilities matching
    exactly. The first failure of each length is reported.
    """
    if lm.alphabet != model.alphabet or lm.order != model.order:
        raise ValueError("model and LM disagree on alphabet or order")
    if max_len < 0:
        raise ValueError("max_len must be nonnegative")
    if mode is None:
        mode = EXACT if model.backend is Backend.RATIONAL else TOL
    if mode not in (EXACT, TOL):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == EXACT and model.backend is not Backend.RATIONAL:
        raise ValueError("exact mode needs a rational-backend model")
    report = EquivalenceReport(model.construction, model.backend.value, lm.fingerprint(), max_len, mode,
                               tol if mode == TOL else None)
    report.distribution_check = AuditResult("conditionals sum to one")
    strings = list(enumerate_strings(lm.alphabet, max_len))
    model_probs = _string_probs(model, strings, report.distribution_check)
    rows = {}
    mass = Fraction(0)
    for y in strings:
        row = rows.setdefault(len(y), {"length": len(y), "count": 0, "passed": 0,
                                       **({"max_log_deviation": 0.0} if mode == TOL else {"all_equal": True})})
        p_lm, p_tf = lm.string_prob(y), model_probs[y]
        mass += p_lm
        row["count"] += 1
        if mode == EXACT:
            ok = p_lm == p_tf
            if not ok:
                row["all_equal"] = False
        else:
            if p_lm == 0 or p_tf == 0:
                ok = p_lm == 0 and p_tf == 0
                dev = 0.0 if ok else math.inf
            else:
                dev = abs(_log(p_tf) - _log(p_lm))
                ok = dev <= tol
            row["max_log_deviation"] = max(row["max_log_deviation"], dev)
        if ok:
            row["passed"] += 1
        elif not any(f["length"] == len(y) for f in report.failures):
            report.failures.append({"string": list(y), "length": len(y),
                                    "lm_prob": format_scalar(p_lm), "model_prob": format_scalar(p_tf)})
    if mass > 1:
        report.distribution_check.fail(f"n-gram mass up to length {max_len} is {mass} > 1")
    report.per_length = [rows[k] for k in sorted(rows)]
    return report


# -- attention and structure audits ----------------------------------------

def expected_attention(construction: str, order: int) -> Callable:
    """``(layer, head, p) -> {position: weight}`` for each construction's design."""
    construction = Construction(construction)
    if construction in (Construction.MULTIHEAD, Construction.SPARSE):
        return lambda layer, head, p: {p - head: Fraction(1)}
    if construction is Construction.MULTILAYER:
        return lambda layer, head, p: {max(p - 1, 1): Fraction(1)}
    w = Fraction(1, order - 1)
    return lambda layer, head, p: {j: w for j in range(p - order + 2, p + 1)}


def check_attention_pattern(model: TransformerModel, y: Sequence[str], expectations: Optional[Callable] = None,
                            first_query: Optional[int] = None) -> AuditResult:
    """Check every head's attention at query positions ``first_query..len(padded)``.

    Rational models must match exactly; float models must match within the
    float tie tolerance and, for hardmax heads, keep the runner-up score at
    least the float score margin below the maximum.
    """
    result = AuditResult("attention pattern")
    if expectations is None:
        expectations = expected_attention(model.construction, model.order)
    if first_query is None:
        first_query = model.order - 1
    trace = ForwardTrace()
    transformer_forward(model, y, trace)
    exact = model.backend is Backend.RATIONAL
    for li, (layer_scores, layer_weights) in enumerate(zip(trace.scores, trace.weights), start=1):
        for h, (h_scores, h_weights) in enumerate(zip(layer_scores, layer_weights)):
            for p in range(first_query, len(h_weights) + 1):
                want = expectations(li, h, p)
                got = h_weights[p - 1]
                result.checked += 1
                for j in range(1, p + 1):
                    target = want.get(j, 0)
                    if (got[j - 1] != target) if exact else abs(got[j - 1] - float(target)) > FLOAT_SUM_TOL:
                        result.fail(f"layer {li} head {h} query {p}: weight {got[j - 1]} at {j}, expected {target}")
                        break
                if not exact and len(want) == 1 and p > 1:
                    scores = sorted(h_scores[p - 1], reverse=True)
                    if scores[0] - scores[1] < FLOAT_SCORE_MARGIN:
                        result.fail(f"layer {li} head {h} query {p}: score margin {scores[0] - scores[1]:.3e}")
    return result


def check_layer_stack(model: TransformerModel, y: Sequence[str]) -> AuditResult:
    """After layer ``l``, block ``b <= l`` at position ``p`` is ``onehot(padded[p - b])``.

    Positions before the first one read as BOS. Blocks above ``l`` must still
    be zero. The stack has ``n - 1`` blocks, so block indices stop at ``n - 2``.
    """
    result = AuditResult("layer stack")
    B = len(model.alphabet.bos_symbols)
    blocks = model.order - 1
    padded = pad(model.alphabet.check_string(y), model.order, model.alphabet.bos)
    trace = ForwardTrace()
    transformer_forward(model, y, trace)
    for l, states in enumerate(trace.states):
        for p, x in enumerate(states, start=1):
            for b in range(blocks):
                block = x[b * B:(b + 1) * B]
                if b <= l:
                    sym = padded[p - b - 1] if p - b >= 1 else model.alphabet.bos
                    want = [1 if i == model.alphabet.bos_index(sym) else 0 for i in range(B)]
                else:
                    want = [0] * B
                result.checked += 1
                if list(block) != want:
                    result.fail(f"after layer {l}, position {p}, block {b}: {[format_scalar(v) for v in block]}")
                    return result
    return result


def check_history_recovery(model: TransformerModel, y: Sequence[str]) -> AuditResult:
    """F applied to the last contextual vector is the one-hot of the true history."""
    result = AuditResult("history recovery")
    indexer = HistoryIndexer(model.alphabet, model.order - 1)
    padded = pad(model.alphabet.check_string(y), model.order, model.alphabet.bos)
    xs = transformer_forward(model, y)
    for p in range(model.order - 1, len(xs) + 1):
        enc = model.final.apply(xs[p - 1])
        idx = indexer.index(history_before(padded, p, model.order))
        result.checked += 1
        if any(v != (1 if i == idx else 0) for i, v in enumerate(enc)):
            result.fail(f"position {p}: representation is not the one-hot of history index {idx}")
    return result


def check_dims(model: TransformerModel) -> AuditResult:
    """Residual width per construction and representation size ``|Σ_bos|^(n-1)``."""
    result = AuditResult("dimensions")
    B = len(model.alphabet.bos_symbols)
    want_enc = B ** (model.order - 1)
    result.checked += 1
    if model.enc_dim != want_enc:
        result.fail(f"representation dimension {model.enc_dim}, expected {want_enc}")
    try:
        want = expected_model_dim(model.construction, model.order, len(model.alphabet))
    except ValueError:
        result.notes.append(f"no width formula for construction {model.construction!r}")
        return result
    result.checked += 1
    if model.model_dim != want:
        result.fail(f"contextual dimension {model.model_dim}, expected {want}")
    result.notes.append(f"contextual dim {model.model_dim}, representation dim {model.enc_dim}")
    return result


def float_margin_note(model: TransformerModel) -> Optional[str]:
    if model.backend is not Backend.FLOAT or model.max_position is None:
        return None
    return (f"square-root score margin at max position {model.max_position}: "
            f"{sqrt_score_margin(model.max_position):.3e} (required >= {FLOAT_SCORE_MARGIN:.0e})")


def check_sparsemax_gap(trials: int, seed: int, min_dim: int = 2, max_dim: int = 8) -> AuditResult:
    """Random rational vectors with a gap of at least 1 below the maximum map to hardmax.

    Vectors without the gap are only checked for simplex membership.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = random.Random(seed)
    result = AuditResult("sparsemax equals hardmax under a unit gap")

    def rat() -> Fraction:
        return Fraction(rng.randint(-1000, 1000), rng.randint(1, 50))

    for t in range(trials):
        d = rng.randint(min_dim, max_dim)
        top = rat()
        ties = 1 + (rng.random() < 0.2) * rng.randint(1, d - 1)
        rest = [top - 1 - abs(rat()) / 10 for _ in range(d - ties)]
        x = [top] * ties + rest
        rng.shuffle(x)
        result.checked += 1
        if sparsemax(x) != hardmax(x):
            result.fail(f"trial {t}: sparsemax {sparsemax(x)} != hardmax {hardmax(x)} for {x}")
        # no gap: nothing claimed beyond landing on the simplex
        y = [top - Fraction(rng.randint(0, 99), 100) for _ in range(d)]
        s = sparsemax(y)
        if sum(s) != 1 or any(v < 0 for v in s):
            result.fail(f"trial {t}: sparsemax {s} of {y} is off the simplex")
    return result


def verify_model(lm: NGramLM, model: TransformerModel, max_len: int, mode: Optional[str] = None,
                 tol: float = DEFAULT_TOL, audit_len: Optional[int] = None) -> EquivalenceReport:
    """Weak equivalence plus every structural audit that applies to the model."""
    report = check_weak_equivalence(lm, model, max_len, mode, tol)
    report.dimension_audit = check_dims(model)
    note = float_margin_note(model)
    if note:
        report.dimension_audit.notes.append(note)
    known = model.construction in {c.value for c in Construction}
    audit_len = max_len if audit_len is None else audit_len
    probes = list(enumerate_strings(lm.alphabet, min(audit_len, 3)))
    if audit_len > 3:
        probes += _long_probes(lm, audit_len)
    if known:
        attention = AuditResult("attention pattern")
        recovery = AuditResult("history recovery")
        stack = AuditResult("layer stack") if model.construction == Construction.MULTILAYER.value else None
        for y in probes:
            attention.merge(check_attention_pattern(model, y))
            recovery.merge(check_history_recovery(model, y))
            if stack is not None:
                stack.merge(check_layer_stack(model, y))
        report.attention_audit = attention
        report.extra_audits.append(recovery)
        if stack is not None:
            report.extra_audits.append(stack)
    return report


def _long_probes(lm: NGramLM, length: int) -> list:
    """A few deterministic long strings: each constant string and a cyclic one."""
    syms = lm.alphabet.symbols
    out = [(s,) * length for s in syms]
    out.append(tuple(syms[i % len(syms)] for i in range(length)))
    return out
