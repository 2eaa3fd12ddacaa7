from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from chartforge.metrics import EmptySequenceError, MeteorParams, meteor
from chartforge.metrics.meteor import _align, _count_chunks


class TestClosedForms:
    def test_identical_four_token_sequences(self):
        tokens = ["plt", ".", "plot", "("]
        # m=4, chunks=1: 1 * (1 - 0.5 * (1/4)**3)
        assert meteor(tokens, tokens) == pytest.approx(0.9921875, abs=1e-12)

    def test_single_shared_token(self):
        # m=1, chunks=1: 1 * (1 - 0.5 * 1**3)
        assert meteor(["x"], ["x"]) == pytest.approx(0.5, abs=1e-12)

    def test_disjoint_sequences_score_zero(self):
        assert meteor(["a", "b"], ["c", "d"]) == 0.0

    def test_two_chunk_alignment(self):
        # cand = c3 c4 c1 c2 reordered: m=4, chunks=2
        # fmean=1, penalty = 0.5 * (2/4)**3 = 0.0625
        score = meteor(["a", "b", "c", "d"], ["c", "d", "a", "b"])
        assert score == pytest.approx(0.9375, abs=1e-12)

    def test_precision_recall_asymmetry(self):
        # cand ["a"], ref ["a","b"]: m=1, P=1, R=0.5
        # fmean = 0.5 / (0.9 + 0.1*0.5) = 0.5/0.95; penalty = 0.5
        expected = (0.5 / 0.95) * 0.5
        assert meteor(["a"], ["a", "b"]) == pytest.approx(expected, rel=1e-12)


class TestAlignment:
    def test_longest_fragment_preferred(self):
        pairs = _align(["x", "a", "b", "y"], ["a", "b", "x", "y"])
        assert len(pairs) == 4
        assert _count_chunks(pairs) == 3  # "a b" run plus two singles

    def test_duplicates_matched_once_each(self):
        pairs = _align(["a", "a"], ["a"])
        assert len(pairs) == 1

    def test_match_count_equals_multiset_minimum(self):
        cand = ["a", "b", "a", "c", "a"]
        ref = ["a", "a", "d", "b"]
        pairs = _align(cand, ref)
        assert len(pairs) == 3  # min counts: a->2, b->1


class TestErrorsAndParams:
    def test_empty_candidate_rejected(self):
        with pytest.raises(EmptySequenceError):
            meteor([], ["a"])

    def test_empty_reference_rejected(self):
        with pytest.raises(EmptySequenceError):
            meteor(["a"], [])

    @pytest.mark.parametrize("kwargs", [
        {"alpha": 0.0}, {"alpha": 1.0}, {"beta": 0}, {"gamma": 1.5},
    ])
    def test_bad_params_rejected(self, kwargs):
        with pytest.raises(ValueError):
            MeteorParams(**kwargs)


token = st.sampled_from(["a", "b", "c", "plt", "plot", "0", "("])


class TestProperties:
    @given(cand=st.lists(token, min_size=1, max_size=12),
           ref=st.lists(token, min_size=1, max_size=12))
    def test_score_bounded_and_deterministic(self, cand, ref):
        first = meteor(cand, ref)
        assert 0.0 <= first <= 1.0
        assert meteor(cand, ref) == first

    @given(tokens=st.lists(token, min_size=1, max_size=12))
    def test_identity_scores_with_single_chunk(self, tokens):
        m = len(tokens)
        expected = 1.0 * (1 - 0.5 * (1 / m) ** 3)
        assert meteor(tokens, tokens) == pytest.approx(expected, rel=1e-12)

    @given(cand=st.lists(token, min_size=1, max_size=10),
           ref=st.lists(token, min_size=1, max_size=10))
    def test_chunks_never_exceed_matches(self, cand, ref):
        pairs = _align(cand, ref)
        if pairs:
            assert _count_chunks(pairs) <= len(pairs)
