import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ngram_transformer.numeric import (
    Backend,
    DimensionError,
    ExtReal,
    Mat,
    dot,
    format_rational,
    hardmax,
    parse_rational,
    relu,
    softmax,
    softmax_logdomain,
    sparsemax,
    vadd,
)
from oracles import sparsemax_by_supports, sparsemax_projected_gradient

rationals = st.fractions(min_value=-20, max_value=20, max_denominator=30)
rat_vectors = st.lists(rationals, min_size=1, max_size=7)


class TestHardmax:
    def test_two_way_tie(self):
        assert hardmax([F(3), F(1), F(3)]) == (F(1, 2), 0, F(1, 2))

    def test_unique_max(self):
        assert hardmax([F(0), F(-1), F(-2)]) == (1, 0, 0)

    def test_singleton(self):
        assert hardmax([F(5)]) == (1,)

    def test_float_tie_eps(self):
        assert hardmax([1.0, 1.0 - 1e-12, 0.5], 1e-9) == (0.5, 0.5, 0.0)
        assert hardmax([1.0, 1.0 - 1e-6, 0.5], 1e-9) == (1.0, 0.0, 0.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            hardmax([])
        with pytest.raises(ValueError):
            hardmax([1.0], -1e-9)
        with pytest.raises(ValueError):
            hardmax([F(1), F(2)], F(1, 10))

    @given(rat_vectors)
    def test_entries_are_zero_or_one_over_m(self, x):
        p = hardmax(x)
        m = sum(1 for v in x if v == max(x))
        assert all(v in (0, F(1, m)) for v in p)
        assert sum(p) == 1


class TestSparsemax:
    def test_gap_case(self):
        assert sparsemax([F(0), F(-1)]) == (1, 0)

    def test_on_simplex_already(self):
        assert sparsemax([F(1, 2), F(1, 2)]) == (F(1, 2), F(1, 2))

    def test_hand_example(self):
        assert sparsemax([F(1, 5), F(0)]) == (F(3, 5), F(2, 5))

    def test_hand_example_against_grid_search(self):
        # minimize (p - 1/5)^2 + (1 - p - 0)^2 over a 1/1000 grid
        best = min((F(i, 1000) for i in range(1001)),
                   key=lambda p: (p - F(1, 5)) ** 2 + (1 - p) ** 2)
        assert best == F(3, 5)

    def test_gap_example(self):
        assert sparsemax([F(0), F(-1, 2)]) == (F(3, 4), F(1, 4))

    def test_empty(self):
        with pytest.raises(ValueError):
            sparsemax([])

    def test_float_input_gives_floats(self):
        out = sparsemax([0.3, 0.1])
        assert all(isinstance(v, float) for v in out)
        assert math.isclose(sum(out), 1.0)

    @given(rat_vectors)
    def test_on_simplex_exactly(self, x):
        p = sparsemax(x)
        assert all(v >= 0 for v in p) and sum(p) == 1

    @given(rat_vectors, rationals)
    def test_shift_invariance(self, x, c):
        assert sparsemax(x) == sparsemax([v + c for v in x])

    @given(rat_vectors)
    def test_matches_support_enumeration(self, x):
        assert sparsemax(x) == sparsemax_by_supports(x)

    @given(st.lists(st.fractions(min_value=-3, max_value=3, max_denominator=20), min_size=1, max_size=6),
           st.integers(min_value=1, max_value=4))
    def test_gap_implies_hardmax(self, rest, gap):
        top = max(rest) + gap
        x = rest + [top]
        assert sparsemax(x) == hardmax(x)

    def test_projected_gradient_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            x = rng.normal(size=rng.integers(2, 6))
            ours = sparsemax([float(v) for v in x])
            assert np.allclose(ours, sparsemax_projected_gradient(x), atol=1e-9)


class TestSoftmax:
    def test_symmetric(self):
        assert softmax_logdomain([ExtReal.log(F(1, 2)), ExtReal.log(F(1, 2))]) == (F(1, 2), F(1, 2))

    def test_identity_on_distributions(self):
        assert softmax_logdomain([ExtReal.log(F(1, 3)), ExtReal.log(F(2, 3))]) == (F(1, 3), F(2, 3))

    def test_neg_inf(self):
        assert softmax_logdomain([ExtReal.log(1), ExtReal.neg_inf()]) == (1, 0)

    def test_all_neg_inf(self):
        with pytest.raises(ValueError):
            softmax_logdomain([ExtReal.neg_inf(), ExtReal.neg_inf()])

    @given(st.lists(st.fractions(min_value=0, max_value=5, max_denominator=40), min_size=1, max_size=6),
           st.fractions(min_value=F(1, 100), max_value=100))
    def test_sums_to_one_and_scale_invariant(self, ps, c):
        if not any(ps):
            ps = ps + [F(1)]
        out = softmax_logdomain([ExtReal.log(p) for p in ps])
        assert sum(out) == 1
        assert out == softmax_logdomain([ExtReal.log(p * c) for p in ps])

    def test_float_softmax_matches_closed_form(self):
        out = softmax([0.0, math.log(3.0)])
        assert math.isclose(out[0], 0.25) and math.isclose(out[1], 0.75)

    def test_float_softmax_rejects_rationals(self):
        with pytest.raises(ValueError):
            softmax([F(1), F(2)])


class TestExtReal:
    def test_neg_inf_absorbs(self):
        assert (ExtReal.neg_inf() + ExtReal.log(F(1, 2))).is_neg_inf
        assert ExtReal.neg_inf().exp() == 0

    def test_scale(self):
        assert ExtReal.log(F(1, 2)).scale(3) == ExtReal.log(F(1, 8))
        assert ExtReal.neg_inf().scale(0) == ExtReal.log(1)
        with pytest.raises(ValueError):
            ExtReal.neg_inf().scale(-1)
        with pytest.raises(ValueError):
            ExtReal.log(F(1, 2)).scale(F(1, 2))

    def test_text_round_trip(self):
        for e in (ExtReal.log(F(3, 7)), ExtReal.neg_inf(), ExtReal.log(1)):
            assert ExtReal.from_text(e.to_text()) == e
        assert ExtReal.neg_inf().to_text() == "neg_inf"
        assert ExtReal.log(F(2, 4)).to_text() == "log:1/2"

    def test_float_value(self):
        assert float(ExtReal.neg_inf()) == -math.inf
        assert math.isclose(float(ExtReal.log(F(1, 2))), math.log(0.5))


class TestVectors:
    def test_relu(self):
        assert relu([F(-1), F(0), F(2)]) == (0, 0, 2)
        assert relu([F(0)]) == (0,)
        assert relu([F(-1, 3)]) == (0,)

    def test_relu_keeps_float_type(self):
        assert all(isinstance(v, float) for v in relu([-1.0, 2.0]))

    def test_dimension_checks(self):
        with pytest.raises(DimensionError):
            vadd((F(1),), (F(1), F(2)))
        with pytest.raises(DimensionError):
            dot((F(1),), ())
        with pytest.raises(DimensionError):
            Mat.identity(2).matvec((F(1),))
        with pytest.raises(DimensionError):
            Mat.identity(2).matmul(Mat.identity(3))
        with pytest.raises(DimensionError):
            Mat(((F(1), F(2)), (F(1),)), 2)

    def test_matmul_matches_matvec(self):
        a = Mat.from_entries(2, 3, {(0, 0): 1, (0, 2): F(1, 2), (1, 1): -3})
        b = Mat.from_entries(3, 2, {(0, 1): 2, (2, 0): 5, (1, 1): F(1, 3)})
        x = (F(2), F(-1))
        assert a.matmul(b).matvec(x) == a.matvec(b.matvec(x))

    def test_backend_coercion(self):
        assert Backend.RATIONAL.coerce(3) == F(3)
        with pytest.raises(TypeError):
            Backend.RATIONAL.coerce(0.5)
        assert Backend.FLOAT.coerce(F(1, 2)) == 0.5

    def test_float_backend_results_stay_float(self):
        m = Mat.zeros(2, 2, Backend.FLOAT)
        assert all(isinstance(v, float) for v in m.matvec((1.0, 2.0)))


class TestRationalText:
    def test_canonical(self):
        assert format_rational(F(6, 4)) == "3/2"
        assert format_rational(F(-2)) == "-2/1"
        assert parse_rational("6/4") == F(3, 2)
        assert parse_rational("5") == F(5)

    @pytest.mark.parametrize("bad", ["1/0", "a/b", "0.5", 3])
    def test_malformed(self, bad):
        with pytest.raises(ValueError):
            parse_rational(bad)
