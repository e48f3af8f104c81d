import json
from dataclasses import replace
from fractions import Fraction as F

import pytest

from ngram_transformer.compiler import compile_lm
from ngram_transformer.ngram import Alphabet, random_lm
from ngram_transformer.numeric import ExtReal, hardmax, sparsemax
from ngram_transformer.transformer import AffineMap, Head, Layer
from ngram_transformer.verify import (
    check_attention_pattern,
    check_dims,
    check_history_recovery,
    check_layer_stack,
    check_sparsemax_gap,
    check_weak_equivalence,
    verify_model,
)


def corrupt_output(model, row, col, value):
    E = [list(r) for r in model.output]
    E[row][col] = value
    return replace(model, output=tuple(tuple(r) for r in E))


class TestWeakEquivalence:
    def test_sparse_fixture(self, bigram):
        report = check_weak_equivalence(bigram, compile_lm(bigram, "sparse"), 6, "exact")
        assert report.passed
        assert report.strings_checked == 127 == report.strings_passed
        assert "exact: 127/127" in report.summary()

    def test_zero_strings(self, bigram):
        model = compile_lm(bigram, "sparse")
        report = check_weak_equivalence(bigram, model, 3, "exact")
        assert report.passed
        from ngram_transformer.transformer import lm_string_prob
        for y in [("b", "a"), ("b", "a", "a"), ("b", "a", "b")]:
            assert bigram.string_prob(y) == 0 == lm_string_prob(model, y)

    def test_exact_report_has_no_tolerance(self, bigram):
        d = check_weak_equivalence(bigram, compile_lm(bigram, "sparse"), 2).to_dict()
        assert "tolerance" not in d and d["mode"] == "exact"
        assert all("max_log_deviation" not in row for row in d["per_length"])

    def test_corrupted_output_fails_with_minimal_string(self, bigram):
        model = compile_lm(bigram, "sparse")
        # column of history (a,); softmax renormalizes it, so p(eos | a) moves too
        bad = corrupt_output(model, 1, 1, ExtReal(F(1, 2)))
        report = check_weak_equivalence(bigram, bad, 4)
        assert not report.passed
        assert report.failures[0]["string"] == ["a"]
        assert [f["length"] for f in report.failures] == [1, 2, 3, 4]

    def test_tolerance_mode(self, bigram):
        report = check_weak_equivalence(bigram, compile_lm(bigram, "multihead"), 6)
        assert report.mode == "tol" and report.passed
        d = report.to_dict()
        assert d["tolerance"] == 1e-9
        assert max(row["max_log_deviation"] for row in d["per_length"]) <= 1e-9

    def test_tolerance_mode_detects_zero_mismatch(self, bigram):
        model = compile_lm(bigram, "multihead")
        bad = corrupt_output(model, 0, 2, ExtReal(F(1, 100)))
        report = check_weak_equivalence(bigram, bad, 3)
        assert report.failures[0]["string"] == ["b"]

    def test_exact_mode_needs_rational(self, bigram):
        with pytest.raises(ValueError):
            check_weak_equivalence(bigram, compile_lm(bigram, "multihead"), 2, "exact")

    def test_alphabet_mismatch(self, bigram):
        other = random_lm(2, Alphabet(("a", "c")), seed=0)
        with pytest.raises(ValueError):
            check_weak_equivalence(other, compile_lm(bigram, "sparse"), 2)

    def test_max_len_zero(self, bigram):
        report = check_weak_equivalence(bigram, compile_lm(bigram, "sparse"), 0)
        assert report.strings_checked == 1 and report.passed


class TestAttentionAudit:
    def test_multihead(self):
        lm = random_lm(4, Alphabet(("a", "b")), seed=3)
        result = check_attention_pattern(compile_lm(lm, "multihead"), ("a", "b", "a", "a", "b", "b"))
        assert result.passed and result.checked == 3 * 7

    def test_singlehead_window(self):
        lm = random_lm(4, Alphabet(("a", "b")), seed=3)
        model = compile_lm(lm, "singlehead")
        result = check_attention_pattern(model, ("a", "b", "a", "a", "b", "b"))
        assert result.passed
        strict = check_attention_pattern(model, ("a",) * 6, lambda l, h, p: {p: F(1)})
        assert not strict.passed

    def test_sparse_support_size_one(self):
        lm = random_lm(3, Alphabet(("a", "b", "c")), seed=3)
        model = compile_lm(lm, "sparse")
        result = check_attention_pattern(model, ("c", "a", "b", "c"))
        assert result.passed

    def test_wrong_expectation_is_reported(self, bigram):
        result = check_attention_pattern(compile_lm(bigram, "sparse"), ("a", "b"), lambda l, h, p: {1: F(1)})
        assert not result.passed and "expected" in result.violations[0]


class TestLayerStack:
    def test_passes(self):
        lm = random_lm(4, Alphabet(("a", "b")), seed=4)
        assert check_layer_stack(compile_lm(lm, "multilayer"), ("a", "b", "b", "a")).passed

    def test_tampered_shift(self):
        lm = random_lm(4, Alphabet(("a", "b")), seed=4)
        model = compile_lm(lm, "multilayer")
        layer = model.layers[1]
        h = layer.heads[0]
        D, B = model.model_dim, 3
        # copy block 0 instead of block 1 into block 2
        wrong = AffineMap.from_entries(D, D, {(2 * B + s, s): 1 for s in range(B)}, model.backend)
        tampered = replace(model, layers=(model.layers[0], Layer((Head(h.query, h.key, wrong, h.scoring, h.normalizer),),
                                                                 layer.outputs), model.layers[2]))
        result = check_layer_stack(tampered, ("a", "b", "b", "a"))
        assert not result.passed
        assert result.violations[0].startswith("after layer 2")


class TestDims:
    def test_examples(self):
        lm = random_lm(3, Alphabet(("a", "b")), seed=0)
        mh = compile_lm(lm, "multihead")
        assert check_dims(mh).passed and mh.model_dim == 12 and mh.enc_dim == 9
        assert compile_lm(lm, "multilayer").model_dim == 10
        assert compile_lm(lm, "singlehead").model_dim == 5
        assert compile_lm(lm, "sparse").model_dim == 8


class TestSparsemaxGap:
    def test_examples(self):
        assert sparsemax([F(0), F(-1), F(-5)]) == hardmax([F(0), F(-1), F(-5)]) == (1, 0, 0)
        assert sparsemax([F(0), F(-1, 2)]) == (F(3, 4), F(1, 4))

    def test_trials(self):
        result = check_sparsemax_gap(1000, seed=0)
        assert result.passed and result.checked == 1000

    def test_bad_trials(self):
        with pytest.raises(ValueError):
            check_sparsemax_gap(0, seed=0)


class TestFullRun:
    @pytest.mark.parametrize("construction", ["multihead", "multilayer", "singlehead", "sparse"])
    def test_all_audits_pass(self, construction, trigram):
        report = verify_model(trigram, compile_lm(trigram, construction), 4, audit_len=8)
        assert report.passed, report.summary()
        names = {a.name for a in report.audits}
        assert {"attention pattern", "dimensions", "history recovery", "conditionals sum to one"} <= names
        json.loads(report.to_json())

    def test_history_recovery_detects_wrong_combiner(self, trigram):
        model = compile_lm(trigram, "sparse")
        layer = model.layers[0]
        swapped = replace(model, layers=(Layer(tuple(reversed(layer.heads)), layer.outputs, layer.combiner),))
        assert not check_history_recovery(swapped, ("a", "b")).passed
