from __future__ import annotations

import io
import random
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairlist.calllog import InteractionLabel, Key, ListenEvent, Source
from fairlist.recommender import (
    EmptyPoolError,
    EnsembleConfig,
    FeatureVector,
    Item,
    ItemLabel,
    OracleModel,
    load_model,
    label_item_for_cluster,
    oversample_minority,
    pool_from_liked,
    predict,
    read_catalog,
    read_pool,
    recommended_pool,
    save_model,
    shared_context,
    train,
    write_catalog,
    write_pool,
)
from fairlist.users import PreferenceVector

from toydata import separable_task

PAIRS = [("User", "A"), ("User", "B")]
SMALL = EnsembleConfig(n_trees=15, max_depth=4)


def _pv(scores, heard=(False, False)):
    return PreferenceVector.from_arrays(PAIRS, scores, heard)


def _ev(user, item="x"):
    return ListenEvent("c", user, item, "p", 10.0, 5.0, Source.USER, "T", "A", 3, Key.NONE, datetime(2017, 1, 1))


class TestSharedContext:
    def test_identical(self):
        assert shared_context(_pv([0.5, -0.2]), _pv([0.5, -0.2])) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert shared_context(_pv([1.0, 0.0]), _pv([0.0, 1.0])) == 0.0

    def test_opposite(self):
        assert shared_context(_pv([0.3, -0.4]), _pv([-0.3, 0.4])) == pytest.approx(-1.0)

    def test_zero_norm(self):
        assert shared_context(_pv([0.0, 0.0]), _pv([0.3, 0.1])) == 0.0
        assert shared_context(None, _pv([0.3, 0.1])) == 0.0

    def test_indicators_join_vector(self):
        # [1, 0, 1, 0] against [0, 0, 1, 0]
        assert shared_context(_pv([1.0, 0.0], (True, False)), _pv([0.0, 0.0], (True, False))) == pytest.approx(2 ** -0.5)


class TestItemLabel:
    ITEM = Item("x", "T", frozenset({"A"}), 3)

    def test_net_share(self):
        P, N = InteractionLabel.POSITIVE, InteractionLabel.NEGATIVE
        events = [(_ev(f"u{k}"), P) for k in range(4)] + [(_ev("u9"), N)]
        assert label_item_for_cluster(self.ITEM, events) == ItemLabel(pytest.approx(0.6), True)

    def test_unheard(self):
        assert label_item_for_cluster(self.ITEM, [(_ev("u", item="other"), InteractionLabel.POSITIVE)]) is None

    def test_tie_negative(self):
        P, N = InteractionLabel.POSITIVE, InteractionLabel.NEGATIVE
        events = [(_ev("a"), P), (_ev("b"), P), (_ev("c"), N), (_ev("d"), N)]
        assert label_item_for_cluster(self.ITEM, events) == ItemLabel(0.0, False)


class TestTrain:
    def test_separable_small(self):
        feats, labels = separable_task(40, seed=3)
        model = train(feats, labels, SMALL, seed=0)
        assert model.validation_accuracy >= 0.9

    def test_deterministic_and_order_invariant(self):
        feats, labels = separable_task(60, seed=1)
        a = train(feats, labels, SMALL, seed=5)
        pairs = list(zip(feats, labels))
        random.Random(0).shuffle(pairs)
        b = train([f for f, _ in pairs], [l for _, l in pairs], SMALL, seed=5)
        probe = np.array([f.as_array() for f in separable_task(30, seed=9)[0]])
        np.testing.assert_array_equal(a.predict_proba(probe), b.predict_proba(probe))

    def test_single_class(self):
        feats, _ = separable_task(10, seed=0)
        with pytest.raises(ValueError):
            train(feats, [True] * 10)

    def test_predict(self):
        feats, labels = separable_task(80, seed=2)
        model = train(feats, labels, SMALL, seed=0)
        p, lab = predict(model, FeatureVector((1, 0, 0, 0), 5, 0.0))
        assert 0 <= p <= 1 and lab
        with pytest.raises(ValueError):
            predict(model, FeatureVector((1, 0), 5, 0.0))

    def test_degenerate_tree_constant(self):
        feats = [FeatureVector((1,), 3, 0.0)] * 6
        model = train(feats, [True, True, True, True, False, False], EnsembleConfig(n_trees=3), seed=0)
        probs = model.predict_proba(np.array([[1, 1, -1], [0, 5, 1.0]]))
        assert probs[0] == probs[1]

    def test_oversample_parity(self):
        X = np.arange(10, dtype=float)[:, None]
        y = np.array([1, 0, 0, 0, 0, 0, 0, 0, 1, 0])
        Xb, yb = oversample_minority(X, y, np.random.default_rng(0))
        assert (yb == 1).sum() == (yb == 0).sum() == 8
        assert set(Xb[yb == 1, 0]) == {0.0, 8.0}

    def test_model_round_trip(self):
        feats, labels = separable_task(50, seed=4)
        model = train(feats, labels, SMALL, seed=2)
        buf = io.StringIO()
        save_model(model, buf)
        back = load_model(io.StringIO(buf.getvalue()))
        probe = np.array([f.as_array() for f in feats])
        np.testing.assert_array_equal(back.predict_proba(probe), model.predict_proba(probe))
        assert back.validation_accuracy == model.validation_accuracy


def _items(spec):
    return [Item(f"{a}{k}", "T", frozenset({a}), 3) for a, n in spec.items() for k in range(n)]


class TestPool:
    def test_beta_ratio(self):
        items = _items({"A": 7, "B": 3})
        liked = {i.item_id: i.item_id in {"A0", "A1", "A2", "A3", "A4", "A5", "B0", "B1"} for i in items}
        pool = pool_from_liked("T", 0, items, liked)
        assert pool.beta == {"A": 0.75, "B": 0.25}

    def test_like_everything(self):
        items = _items({"A": 3, "B": 1, "C": 4})
        oracle = OracleModel({i.item_id: ItemLabel(1.0, True) for i in items}, 5)
        pool = recommended_pool(oracle, items, _pv([0, 0]), {})
        assert pool.beta == {"A": 3 / 8, "B": 1 / 8, "C": 4 / 8}

    def test_single_aspect(self):
        pool = pool_from_liked("T", 0, _items({"A": 2}), {"A0": True})
        assert pool.beta == {"A": 1.0}

    def test_empty(self):
        with pytest.raises(EmptyPoolError):
            pool_from_liked("T", 0, _items({"A": 2}), {})

    def test_mixed_topics(self):
        items = [Item("a", "T", frozenset({"A"}), 3), Item("b", "U", frozenset({"A"}), 3)]
        with pytest.raises(ValueError):
            recommended_pool(OracleModel({}, 3), items, _pv([0, 0]), {})

    def test_multi_aspect_counts_once_per_aspect(self):
        items = [Item("x", "T", frozenset({"A", "B"}), 3), Item("y", "T", frozenset({"A"}), 3)]
        pool = pool_from_liked("T", 0, items, {"x": True, "y": True})
        assert pool.beta == {"A": 2 / 3, "B": 1 / 3}

    @given(st.dictionaries(st.sampled_from("ABCDE"), st.integers(1, 6), min_size=1),
           st.lists(st.booleans(), min_size=30, max_size=30))
    def test_oracle_pool_equals_positive_set(self, spec, flags):
        items = _items(spec)
        labels = {i.item_id: ItemLabel(0.5 if f else -0.5, f) for i, f in zip(items, flags)}
        positives = {i for i, lab in labels.items() if lab.label}
        oracle = OracleModel(labels, len(spec) + 2)
        if not positives:
            with pytest.raises(EmptyPoolError):
                recommended_pool(oracle, items, _pv([0, 0]), {})
            return
        pool = recommended_pool(oracle, items, _pv([0, 0]), {})
        assert set(pool.item_ids()) == positives
        assert sum(pool.beta.values()) == pytest.approx(1.0, abs=1e-9)
        assert all(0 <= b <= 1 for b in pool.beta.values())

    def test_pool_and_catalog_files(self):
        items = _items({"A": 2, "B": 2})
        pool = pool_from_liked("T", 1, items, {"A0": True, "B1": True}, {"A0": 0.75, "B1": 0.5, "A1": 0.25})
        rows, betas = io.StringIO(), io.StringIO()
        write_pool(pool, items, rows, betas)
        back = read_pool(io.StringIO(rows.getvalue()), "T", 1)
        assert back == pool
        cat = io.StringIO()
        write_catalog(items, cat)
        assert read_catalog(io.StringIO(cat.getvalue())) == {i.item_id: i for i in items}
