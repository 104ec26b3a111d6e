from __future__ import annotations

from datetime import datetime

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairlist.calllog import InteractionLabel, Key, ListenEvent, Source
from fairlist.users import (
    KL_EPSILON,
    EmptyStageError,
    FilterThresholds,
    PreferenceVector,
    UserActivity,
    build_preference_vector,
    centroid_of,
    cluster_centroid,
    elbow_select_k,
    filter_engaged_users,
    k_prototypes,
    kl_divergence,
    preference_score,
)

from oracles import kl

PAIRS = [("User", "A"), ("User", "B"), ("Studio", "A"), ("Studio", "B")]


def _vec(*scores, heard=None):
    heard = heard if heard is not None else [True] * len(scores)
    return PreferenceVector.from_arrays(PAIRS[: len(scores)], scores, heard)


def _labeled(source, topic, label):
    e = ListenEvent("c", "u", "i", "p", 10.0, 5.0, Source(source), topic, "x", 3, Key.NONE, datetime(2017, 1, 1))
    return e, label


class TestPreferenceScore:
    @pytest.mark.parametrize("args,expected", [((3, 1, 5), 0.4), ((0, 0, 7), 0.0), ((0, 4, 4), -1.0)])
    def test_examples(self, args, expected):
        assert preference_score(*args) == pytest.approx(expected)

    @pytest.mark.parametrize("args", [(0, 0, 0), (3, 3, 5), (-1, 0, 2)])
    def test_errors(self, args):
        with pytest.raises(ValueError):
            preference_score(*args)

    @given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
    def test_range(self, p, n, extra):
        if p + n + extra == 0:
            return
        s = preference_score(p, n, p + n + extra)
        assert -1 <= s <= 1
        if p == n:
            assert s == 0


class TestPreferenceVector:
    def test_single_pair(self):
        L = InteractionLabel
        v = build_preference_vector([_labeled("User", "MDD", L.POSITIVE), _labeled("User", "MDD", L.POSITIVE),
                                     _labeled("User", "MDD", L.NEGATIVE)])
        assert v.scores == {("User", "MDD"): pytest.approx(1 / 3)} and v.heard == {("User", "MDD"): True}
        assert v.numeric([("Studio", "CF")])[0] == 0 and not v.categorical([("Studio", "CF")])[0]

    def test_neutral_counts_as_heard(self):
        L = InteractionLabel
        v = build_preference_vector([_labeled("User", "T", L.POSITIVE), _labeled("User", "T", L.NEUTRAL)])
        assert v.scores[("User", "T")] == 0.5


class TestKL:
    def test_identity(self):
        v = _vec(0.3, -0.2, 1.0)
        assert kl_divergence(v, v) == 0.0

    def test_concentrated_vs_uniform(self):
        p, q = _vec(1, -1, -1, -1), _vec(0, 0, 0, 0)
        pd = np.array([2, 0, 0, 0]) + KL_EPSILON
        expected = kl(pd / pd.sum(), [0.25] * 4)
        assert kl_divergence(p, q) == pytest.approx(expected, rel=1e-12)
        assert kl_divergence(p, q) == pytest.approx(1.386271, abs=1e-6)

    def test_asymmetric(self):
        p, q = _vec(1, -1, -1, -1), _vec(0, 0, 0, 0)
        assert kl_divergence(q, p) > 5 * kl_divergence(p, q)

    @given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=4))
    def test_gibbs(self, pairs):
        p, q = _vec(*[a for a, _ in pairs]), _vec(*[b for _, b in pairs])
        assert kl_divergence(p, q) >= 0
        assert kl_divergence(p, p) == 0


def _activity(calls, keys, seconds, score):
    return UserActivity(calls, keys, seconds, _vec(score, -score))


class TestFilter:
    def test_seven_calls_excluded(self):
        users = {"a": _activity(7, 100, 100, 0.5), "b": _activity(8, 100, 100, 0.5)}
        assert filter_engaged_users(users, FilterThresholds(divergence_keep_fraction=1.0), _vec(0.0, 0.0)) == ["b"]

    def test_no_keys_excluded(self):
        users = {"a": _activity(20, 0, 600, 0.5), "b": _activity(20, 3, 600, 0.5)}
        assert filter_engaged_users(users, FilterThresholds(divergence_keep_fraction=1.0), _vec(0.0, 0.0)) == ["b"]

    def test_keep_fraction(self):
        users = {f"u{k}": _activity(10, 10, 100, k / 10) for k in range(10)}
        kept = filter_engaged_users(users, FilterThresholds(), _vec(0.0, 0.0))
        assert kept == [f"u{k}" for k in range(4, 10)]

    def test_empty_stage_named(self):
        with pytest.raises(EmptyStageError, match="min_keys_per_second"):
            filter_engaged_users({"a": _activity(10, 0, 10, 0)}, FilterThresholds(), _vec(0.0, 0.0))

    @given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 30), st.floats(-1, 1)), min_size=1, max_size=15))
    def test_cascade_subset(self, specs):
        users = {f"u{k}": _activity(c, keys, 600, s) for k, (c, keys, s) in enumerate(specs)}
        try:
            kept = filter_engaged_users(users, FilterThresholds(), _vec(0.0, 0.0))
        except EmptyStageError:
            return
        assert set(kept) <= {u for u, a in users.items() if a.call_count > 7 and a.keys_pressed / 600 >= 1 / 240}


def _blobs(centers, per, seed=0, spread=0.03):
    rng = np.random.default_rng(seed)
    vecs = []
    for c in centers:
        for _ in range(per):
            vecs.append(_vec(*np.clip(np.asarray(c) + rng.normal(0, spread, len(c)), -1, 1)))
    return vecs


class TestKPrototypes:
    @pytest.mark.parametrize("seed", range(5))
    def test_two_groups(self, seed):
        vecs = [_vec(0.9, -0.9, 0.5)] * 6 + [_vec(-0.8, 0.7, -0.5, heard=[True, True, False])] * 4
        res = k_prototypes(vecs, 2, seed=seed)
        labels = [res.assignment[i] for i in range(10)]
        assert len(set(labels[:6])) == 1 and len(set(labels[6:])) == 1 and labels[0] != labels[6]

    def test_k_one(self):
        vecs = [_vec(0.2, 1.0), _vec(0.6, 0.0, heard=[True, False]), _vec(1.0, -1.0, heard=[False, False])]
        res = k_prototypes(vecs, 1)
        np.testing.assert_allclose(res.centroids[0].numeric(PAIRS[:2]), [0.6, 0.0])
        assert list(res.centroids[0].categorical(PAIRS[:2])) == [True, False]

    def test_deterministic(self):
        vecs = _blobs([(0.5, 0.5, 0.5), (-0.5, -0.5, 0.5), (0, 0, -0.8)], 8, spread=0.3)
        a, b = k_prototypes(vecs, 3, seed=4), k_prototypes(vecs, 3, seed=4)
        assert a.assignment == b.assignment and a.cost_history == b.cost_history

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            k_prototypes([_vec(0.1)], 2)

    @given(st.integers(0, 10**6), st.integers(2, 5))
    def test_cost_non_increasing(self, seed, k):
        vecs = _blobs([(0.5, 0.5, 0.5), (-0.5, -0.5, 0.5), (0, 0, -0.8)], 5, seed=seed, spread=0.4)
        res = k_prototypes(vecs, k, seed=seed)
        assert np.all(np.diff(res.cost_history) <= 1e-9)
        assert set(res.assignment.values()) == set(range(k))


class TestElbow:
    def test_three_blobs(self):
        vecs = _blobs([(0.8, 0.8, -0.8), (-0.8, 0.8, 0.8), (0.0, -0.8, 0.0)], 10)
        res = elbow_select_k(vecs, range(2, 7))
        assert res.k == 3 and res.ks == [2, 3, 4, 5, 6] and len(res.costs) == 5

    def test_rejects_one(self):
        with pytest.raises(ValueError):
            elbow_select_k([_vec(0.1)] * 3, range(1, 3))


class TestCentroid:
    def test_single(self):
        v = _vec(0.3, -0.4)
        res = k_prototypes([v], 1)
        assert cluster_centroid(res, 0) == v

    def test_mean_and_tie(self):
        c = centroid_of([_vec(0.2, heard=[True]), _vec(0.6, heard=[False])])
        assert c.scores[PAIRS[0]] == pytest.approx(0.4) and c.heard[PAIRS[0]] is True

    def test_bad_index(self):
        with pytest.raises(IndexError):
            cluster_centroid(k_prototypes([_vec(0.1)], 1), 1)
