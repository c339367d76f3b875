import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multislot.core import (
    PROB_EPS,
    CandidateList,
    Item,
    ItemTypes,
    RerankedList,
    ResponseKind,
    Slot,
    clamp_probability,
    contributions_label,
    contributions_score,
    is_permutation_of,
    logistic,
    logit,
)

# Reference values evaluated with 50-digit mpmath arithmetic.
LOGIT_OF_0_73105857863 = 0.99999999999997518334
LOGIT_OF_EPS = -13.815509557963774104
ONE_MINUS_LOGISTIC_50 = 1.9287498479639177830e-22


def make_item(i, score=0.5, creator="c", item_type=0, dim=2):
    return Item(i, creator, item_type, np.zeros(dim), {ResponseKind.CLICK: score})


class TestLogit:
    def test_symmetry_point(self):
        assert logit(0.5) == 0.0

    def test_inverse_of_logistic_one(self):
        assert logit(0.73105857863) == pytest.approx(LOGIT_OF_0_73105857863, abs=1e-12)
        assert logit(0.73105857863) == pytest.approx(1.0, abs=1e-10)

    def test_clamps_tiny_probability(self):
        assert logit(1e-9) == pytest.approx(LOGIT_OF_EPS, rel=1e-14)
        assert logit(0.0) == logit(PROB_EPS)
        assert logit(1.0) == pytest.approx(-logit(0.0), rel=1e-9)

    @pytest.mark.parametrize("p", [-0.1, 1.5, float("nan")])
    def test_out_of_range_is_corrupt_data(self, p):
        with pytest.raises(ValueError):
            logit(p)

    def test_array_input(self):
        out = logit(np.array([0.5, 1e-9]))
        np.testing.assert_allclose(out, [0.0, LOGIT_OF_EPS], rtol=1e-14)
        with pytest.raises(ValueError):
            logit(np.array([0.2, 2.0]))

    @given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-12, 0.5))
    def test_strictly_increasing(self, p, gap):
        q = p + gap
        if q <= 1 - 1e-6:
            assert logit(p) < logit(q)


class TestLogistic:
    def test_symmetry_point(self):
        assert logistic(0.0) == 0.5

    def test_saturation(self):
        # 1 - logistic(50) is about 1.9e-22, below double resolution near 1,
        # so the computed value lies in [1 - 1e-20, 1].
        v = logistic(50.0)
        assert v <= 1.0
        assert 0.0 <= 1.0 - v < 1e-20
        assert ONE_MINUS_LOGISTIC_50 < 1e-20
        assert logistic(-50.0) == pytest.approx(ONE_MINUS_LOGISTIC_50, rel=1e-12)

    def test_no_overflow(self):
        assert logistic(-1000.0) == 0.0
        assert logistic(1000.0) == 1.0
        np.testing.assert_array_equal(logistic(np.array([-1000.0, 1000.0])), [0.0, 1.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            logistic(float("inf"))
        with pytest.raises(ValueError):
            logistic(np.array([0.0, np.nan]))

    @given(st.floats(-700, 700))
    def test_reflection(self, x):
        assert logistic(-x) == pytest.approx(1.0 - logistic(x), abs=1e-15)

    @given(st.floats(-20, 20), st.floats(1e-3, 10))
    def test_strictly_increasing(self, x, gap):
        assert logistic(x) < logistic(x + gap)

    @given(st.floats(1e-6, 1 - 1e-6))
    def test_round_trip(self, p):
        assert abs(logistic(logit(p)) - p) <= 1e-12

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=20))
    def test_scalar_and_array_paths_agree(self, xs):
        arr = logistic(np.array(xs))
        for x, a in zip(xs, arr):
            assert a == pytest.approx(logistic(x), rel=1e-12, abs=1e-300)


class TestClamp:
    def test_scalar(self):
        assert clamp_probability(0.0) == PROB_EPS
        assert clamp_probability(1.0) == 1.0 - PROB_EPS
        assert clamp_probability(0.3) == 0.3

    def test_rejects_outside_unit_interval(self):
        with pytest.raises(ValueError):
            clamp_probability(1.0000001)


class TestItem:
    def test_scores_are_clamped(self):
        it = Item("a", "c", 0, [0.0], {"click": 0.0, ResponseKind.LIKE: 1.0})
        assert it.spr_scores[ResponseKind.CLICK] == PROB_EPS
        assert it.spr_scores[ResponseKind.LIKE] == 1.0 - PROB_EPS
        assert 0.0 < it.spr_scores[ResponseKind.CLICK] < 1.0

    def test_embedding_is_read_only(self):
        it = make_item(1)
        with pytest.raises(ValueError):
            it.embedding[0] = 1.0

    def test_rejects_bad_type_and_scores(self):
        with pytest.raises(ValueError):
            Item(1, "c", -1, [0.0], {ResponseKind.CLICK: 0.5})
        with pytest.raises(ValueError):
            Item(1, "c", 0, [0.0], {ResponseKind.CLICK: 1.2})

    def test_dict_round_trip(self):
        it = Item("x", 7, 3, [0.25, -1.0], {ResponseKind.CLICK: 0.2, ResponseKind.SKIP: 0.1})
        back = Item.from_dict(it.to_dict())
        assert back.to_dict() == it.to_dict()


class TestItemTypes:
    def test_configurable(self):
        types = ItemTypes(("A", "B"))
        assert len(types) == 2
        assert types.index("B") == 1

    def test_rejects_duplicates_and_empty(self):
        with pytest.raises(ValueError):
            ItemTypes(("A", "A"))
        with pytest.raises(ValueError):
            ItemTypes(())


class TestCandidateList:
    def test_requires_sorted_input(self):
        with pytest.raises(ValueError, match="sorted"):
            CandidateList((make_item(0, 0.2), make_item(1, 0.3)))

    def test_from_unsorted_is_stable(self):
        items = [make_item(0, 0.2), make_item(1, 0.3), make_item(2, 0.2)]
        cl = CandidateList.from_unsorted(items)
        assert [it.id for it in cl] == [1, 0, 2]

    def test_primary_score_is_configurable(self):
        a = Item(0, "c", 0, [0.0], {ResponseKind.CLICK: 0.1, ResponseKind.LIKE: 0.9})
        b = Item(1, "c", 0, [0.0], {ResponseKind.CLICK: 0.9, ResponseKind.LIKE: 0.1})
        assert [it.id for it in CandidateList.from_unsorted([a, b], ResponseKind.LIKE)] == [0, 1]

    def test_validation(self):
        with pytest.raises(ValueError):
            CandidateList(())
        with pytest.raises(ValueError, match="duplicate"):
            CandidateList((make_item(0), make_item(0)))
        with pytest.raises(ValueError, match="embedding"):
            CandidateList((make_item(0, dim=2), make_item(1, dim=3)))


class TestRerankedList:
    def test_permutation_required(self):
        a, b = make_item(0), make_item(1)
        ok = RerankedList((Slot(0, b, {}, 1), Slot(1, a, {}, 0)))
        assert ok.ids == [1, 0]
        assert is_permutation_of(ok, [a, b])
        with pytest.raises(ValueError, match="permutation"):
            RerankedList((Slot(0, a, {}, 0), Slot(1, a, {}, 0)))

    def test_contiguous_indices(self):
        with pytest.raises(ValueError, match="contiguous"):
            RerankedList((Slot(1, make_item(0), {}, 0),))


class TestContributions:
    def test_label_is_any_contribution(self):
        assert contributions_label({ResponseKind.CLICK: 1, ResponseKind.LIKE: 0}) == 0
        assert contributions_label({ResponseKind.SKIP: 1}) == 1
        assert ResponseKind.CONTRIBUTIONS.is_derived

    def test_score_assumes_independence(self):
        s = contributions_score({ResponseKind.LIKE: 0.5, ResponseKind.SHARE: 0.5, ResponseKind.CLICK: 0.9})
        assert s == pytest.approx(0.75)
        assert math.isclose(contributions_score({}), 0.0)
