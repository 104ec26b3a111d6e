"""Per-cluster item recommendation: features, labels, classifiers and pools."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Protocol, Sequence, TextIO

import numpy as np

from .calllog import ASPECT_SEP, InteractionLabel, ListenEvent
from .users import PreferenceVector, common_index


@dataclass(frozen=True)
class Item:
    item_id: str
    topic: str
    aspects: frozenset[str]
    rating: int
    contributor_id: str = ""
    created_at: datetime | None = None

    def __post_init__(self):
        if not self.aspects:
            raise ValueError(f"item {self.item_id} has no aspect")
        if self.rating not in (1, 2, 3, 4, 5):
            raise ValueError(f"item {self.item_id}: rating {self.rating} outside 1..5")


def items_from_events(events: Iterable[ListenEvent]) -> dict[str, Item]:
    """Item catalog implied by the logs; creation time is the first listen."""
    first: dict[str, ListenEvent] = {}
    for e in events:
        if e.item_id not in first or e.timestamp < first[e.item_id].timestamp:
            first[e.item_id] = e
    return {
        i: Item(i, e.topic, e.aspects, e.rating, e.contributor_id, e.timestamp)
        for i, e in sorted(first.items())
    }


@dataclass(frozen=True)
class FeatureVector:
    aspect_indicators: tuple[int, ...]
    rating: int
    shared_context: float
    item_id: str | None = None

    def as_array(self) -> np.ndarray:
        return np.array([*self.aspect_indicators, self.rating, self.shared_context], dtype=float)


def shared_context(contributor_vector: PreferenceVector | None, centroid: PreferenceVector) -> float:
    """Cosine similarity of [scores, indicators] between contributor and cluster."""
    if contributor_vector is None:
        return 0.0
    index = common_index([contributor_vector, centroid])
    a = np.concatenate([contributor_vector.numeric(index), contributor_vector.categorical(index)])
    b = np.concatenate([centroid.numeric(index), centroid.categorical(index)])
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def item_features(
    item: Item,
    topic_aspects: Sequence[str],
    centroid: PreferenceVector,
    contributor_vectors: Mapping[str, PreferenceVector],
) -> FeatureVector:
    return FeatureVector(
        tuple(int(a in item.aspects) for a in topic_aspects),
        item.rating,
        shared_context(contributor_vectors.get(item.contributor_id), centroid),
        item.item_id,
    )


@dataclass(frozen=True)
class ItemLabel:
    score: float
    label: bool


def label_item_for_cluster(
    item: Item, cluster_events: Iterable[tuple[ListenEvent, InteractionLabel]]
) -> ItemLabel | None:
    """Net share of cluster users who liked the item; ``None`` if nobody heard it.

    Each user counts once: positive if their positive listens outnumber
    the negative ones, negative in the opposite case.
    """
    per_user: dict[str, int] = defaultdict(int)
    for event, label in cluster_events:
        if event.item_id != item.item_id:
            continue
        delta = {InteractionLabel.POSITIVE: 1, InteractionLabel.NEGATIVE: -1}.get(label, 0)
        per_user[event.caller_id] += delta
    if not per_user:
        return None
    pos = sum(v > 0 for v in per_user.values())
    neg = sum(v < 0 for v in per_user.values())
    score = (pos - neg) / len(per_user)
    return ItemLabel(score, score > 0)


# -- classifiers --------------------------------------------------------------


class Model(Protocol):
    n_features: int

    def predict_proba(self, X: np.ndarray, item_ids: Sequence[str | None] | None = None) -> np.ndarray: ...


@dataclass(frozen=True)
class EnsembleConfig:
    n_trees: int = 50
    max_depth: int = 6
    max_features: int | None = None  # None: ceil(sqrt(d))
    min_samples_split: int = 2
    validation_fraction: float = 0.25


@dataclass
class DecisionTree:
    """Flat-array CART classifier; leaves hold the positive-class fraction."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def _add(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def fit(self, X: np.ndarray, y: np.ndarray, max_depth: int, max_features: int, min_samples_split: int, rng):
        self.__init__()
        self._grow(X, y, 0, max_depth, max_features, min_samples_split, rng)
        return self

    def _grow(self, X, y, depth, max_depth, max_features, min_split, rng) -> int:
        node = self._add(float(y.mean()))
        if depth >= max_depth or len(y) < min_split or y.min() == y.max():
            return node
        d = X.shape[1]
        feats = np.sort(rng.choice(d, size=min(max_features, d), replace=False))
        best = _best_split(X, y, feats)
        if best is None:
            return node
        f, t = best
        mask = X[:, f] <= t
        self.feature[node] = int(f)
        self.threshold[node] = float(t)
        self.left[node] = self._grow(X[mask], y[mask], depth + 1, max_depth, max_features, min_split, rng)
        self.right[node] = self._grow(X[~mask], y[~mask], depth + 1, max_depth, max_features, min_split, rng)
        return node

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        for r, x in enumerate(X):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[r] = self.value[node]
        return out


def _best_split(X: np.ndarray, y: np.ndarray, feats: np.ndarray):
    """Lowest weighted Gini impurity split over ``feats``; ties keep the first found."""
    n = len(y)
    best, best_score = None, None
    parent = 1.0 - (y.mean() ** 2 + (1 - y.mean()) ** 2)
    for f in feats:
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        pos_left = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n)
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        n_right = n - n_left
        pos_right = ys.sum() - pos_left
        p_l, p_r = pos_left / n_left, pos_right / n_right
        gini = (n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)) / n
        gini = np.where(valid, gini, np.inf)
        i = int(np.argmin(gini))
        if best_score is None or gini[i] < best_score - 1e-15:
            best_score = gini[i]
            best = (int(f), float((xs[i] + xs[i + 1]) / 2))
    if best is None or best_score >= parent - 1e-15:
        return None
    return best


@dataclass
class TreeEnsemble:
    """Bagged decision trees with per-split feature subsampling."""

    config: EnsembleConfig
    seed: int
    n_features: int
    trees: list[DecisionTree] = field(default_factory=list)
    validation_accuracy: float | None = None
    baseline_accuracy: float | None = None

    def predict_proba(self, X: np.ndarray, item_ids=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)

    def to_dict(self) -> dict:
        return {
            "kind": "tree_ensemble",
            "config": asdict(self.config),
            "seed": self.seed,
            "n_features": self.n_features,
            "validation_accuracy": self.validation_accuracy,
            "baseline_accuracy": self.baseline_accuracy,
            "trees": [asdict(t) for t in self.trees],
        }


@dataclass
class OracleModel:
    """Replays logged per-item labels instead of learning them."""

    labels: Mapping[str, ItemLabel]
    n_features: int

    def predict_proba(self, X: np.ndarray, item_ids=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if item_ids is None:
            raise ValueError("OracleModel needs item ids")
        return np.array([(1.0 + self.labels[i].score) / 2.0 if i in self.labels else 0.0 for i in item_ids])

    def predict_labels(self, item_ids: Sequence[str]) -> np.ndarray:
        return np.array([i in self.labels and self.labels[i].label for i in item_ids])

    def to_dict(self) -> dict:
        return {
            "kind": "oracle",
            "n_features": self.n_features,
            "labels": {i: [lab.score, lab.label] for i, lab in sorted(self.labels.items())},
        }


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.lexsort(np.column_stack([X, y]).T)


def _stratified_split(y: np.ndarray, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    train, valid = [], []
    for cls in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == cls))
        n_valid = int(round(fraction * len(idx)))
        n_valid = min(max(n_valid, 1 if len(idx) > 2 else 0), len(idx) - 2)
        valid.extend(idx[:n_valid])
        train.extend(idx[n_valid:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(valid, dtype=int))


def oversample_minority(X: np.ndarray, y: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    """Duplicate random minority rows (with replacement) up to class parity."""
    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    minority, majority = (pos, neg) if len(pos) < len(neg) else (neg, pos)
    extra = rng.choice(minority, size=len(majority) - len(minority), replace=True)
    idx = np.concatenate([np.arange(len(y)), extra])
    return X[idx], y[idx]


def train(
    features: Sequence[FeatureVector],
    labels: Sequence[bool],
    config: EnsembleConfig | None = None,
    seed: int = 0,
) -> TreeEnsemble:
    """Fit the reference ensemble and record held-out accuracy.

    Rows are put in a canonical order before any seeded shuffling, so the
    result does not depend on input order. A stratified fraction is held
    out, the rest is rebalanced by minority oversampling and fitted.
    """
    config = config or EnsembleConfig()
    X = np.array([f.as_array() for f in features], dtype=float)
    y = np.array(labels, dtype=int)
    if len(X) != len(y) or len(y) == 0:
        raise ValueError("features and labels must be non-empty and aligned")
    if y.min() == y.max():
        raise ValueError("training data contains a single class")
    order = _canonical_order(X, y)
    X, y = X[order], y[order]
    rng = np.random.default_rng(seed)
    tr, va = _stratified_split(y, config.validation_fraction, rng)
    if min((y[tr] == 1).sum(), (y[tr] == 0).sum()) < 1:
        raise ValueError("need examples of both classes to train")
    Xb, yb = oversample_minority(X[tr], y[tr], rng)
    if min((yb == 1).sum(), (yb == 0).sum()) < 2:
        raise ValueError("need at least 2 examples per class after rebalancing")
    d = X.shape[1]
    max_features = config.max_features or math.ceil(math.sqrt(d))
    model = TreeEnsemble(config, seed, d)
    for _ in range(config.n_trees):
        boot = rng.integers(0, len(yb), size=len(yb))
        tree = DecisionTree().fit(Xb[boot], yb[boot], config.max_depth, max_features, config.min_samples_split, rng)
        model.trees.append(tree)
    if len(va):
        pred = model.predict_proba(X[va]) >= 0.5
        model.validation_accuracy = float((pred == y[va]).mean())
        majority = int(y[tr].mean() >= 0.5)
        model.baseline_accuracy = float((y[va] == majority).mean())
    return model


def predict(model: Model, feature: FeatureVector) -> tuple[float, bool]:
    """Probability of being liked and the thresholded label (ties to positive)."""
    p = float(model.predict_proba(feature.as_array()[None, :], [feature.item_id])[0])
    if isinstance(model, OracleModel):
        return p, bool(model.predict_labels([feature.item_id])[0])
    return p, p >= 0.5


def save_model(model: TreeEnsemble | OracleModel, stream: TextIO) -> None:
    json.dump(model.to_dict(), stream, indent=1, sort_keys=True)
    stream.write("\n")


def load_model(stream: TextIO) -> TreeEnsemble | OracleModel:
    data = json.load(stream)
    if data["kind"] == "oracle":
        labels = {i: ItemLabel(float(s), bool(lab)) for i, (s, lab) in data["labels"].items()}
        return OracleModel(labels, int(data["n_features"]))
    model = TreeEnsemble(EnsembleConfig(**data["config"]), int(data["seed"]), int(data["n_features"]))
    model.trees = [DecisionTree(**t) for t in data["trees"]]
    model.validation_accuracy = data["validation_accuracy"]
    model.baseline_accuracy = data["baseline_accuracy"]
    return model


# -- recommended pool -----------------------------------------------------------


class EmptyPoolError(ValueError):
    pass


@dataclass
class RecommendedPool:
    topic: str
    cluster: int
    items_by_aspect: dict[str, frozenset[str]]
    beta: dict[str, float]
    scores: dict[str, float] = field(default_factory=dict)

    def item_ids(self) -> list[str]:
        return sorted(set().union(*self.items_by_aspect.values())) if self.items_by_aspect else []

    def aspect_map(self) -> dict[str, frozenset[str]]:
        out: dict[str, set[str]] = defaultdict(set)
        for a, items in self.items_by_aspect.items():
            for i in items:
                out[i].add(a)
        return {i: frozenset(a) for i, a in out.items()}


def pool_from_liked(
    topic: str,
    cluster: int,
    items: Iterable[Item],
    liked: Mapping[str, bool],
    scores: Mapping[str, float] | None = None,
) -> RecommendedPool:
    """B_jk and normalized beta from per-item like decisions."""
    by_aspect: dict[str, set[str]] = defaultdict(set)
    for item in items:
        if liked.get(item.item_id, False):
            for a in item.aspects:
                by_aspect[a].add(item.item_id)
    if not by_aspect:
        raise EmptyPoolError(f"no item of topic {topic!r} is predicted liked by cluster {cluster}")
    total = sum(len(v) for v in by_aspect.values())
    beta = {a: len(by_aspect[a]) / total for a in sorted(by_aspect)}
    pool_ids = set().union(*by_aspect.values())
    kept_scores = {i: float(s) for i, s in (scores or {}).items() if i in pool_ids}
    return RecommendedPool(topic, cluster, {a: frozenset(by_aspect[a]) for a in sorted(by_aspect)}, beta, kept_scores)


def recommended_pool(
    model: Model,
    items: Sequence[Item],
    cluster_centroid: PreferenceVector,
    contributor_vectors: Mapping[str, PreferenceVector],
    cluster: int = 0,
    topic_aspects: Sequence[str] | None = None,
) -> RecommendedPool:
    """Classify every item of one topic and collect the liked ones per aspect."""
    topics = {i.topic for i in items}
    if len(topics) != 1:
        raise ValueError(f"items must share one topic, got {sorted(topics)}")
    topic = topics.pop()
    if topic_aspects is None:
        topic_aspects = sorted(set().union(*(i.aspects for i in items)))
    liked, scores = {}, {}
    for item in items:
        feat = item_features(item, topic_aspects, cluster_centroid, contributor_vectors)
        p, lab = predict(model, feat)
        liked[item.item_id], scores[item.item_id] = lab, p
    return pool_from_liked(topic, cluster, items, liked, scores)


def write_pool(pool: RecommendedPool, items: Iterable[Item], stream: TextIO, beta_stream: TextIO) -> None:
    """``item_id,aspect,liked`` rows plus an ``aspect,beta`` table."""
    pool_ids = set(pool.item_ids())
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["item_id", "aspect", "liked", "score"])
    for item in sorted(items, key=lambda i: i.item_id):
        for a in sorted(item.aspects):
            liked = item.item_id in pool_ids
            score = pool.scores.get(item.item_id, "")
            w.writerow([item.item_id, a, int(liked), repr(score) if score != "" else ""])
    b = csv.writer(beta_stream, lineterminator="\n")
    b.writerow(["aspect", "beta"])
    for a, v in pool.beta.items():
        b.writerow([a, repr(v)])


def read_pool(stream: TextIO, topic: str, cluster: int) -> RecommendedPool:
    by_aspect: dict[str, set[str]] = defaultdict(set)
    scores = {}
    for row in csv.DictReader(stream):
        if row["liked"] == "1":
            by_aspect[row["aspect"]].add(row["item_id"])
            if row.get("score"):
                scores[row["item_id"]] = float(row["score"])
    total = sum(len(v) for v in by_aspect.values())
    if total == 0:
        raise EmptyPoolError("pool file lists no liked item")
    beta = {a: len(by_aspect[a]) / total for a in sorted(by_aspect)}
    return RecommendedPool(topic, cluster, {a: frozenset(v) for a, v in sorted(by_aspect.items())}, beta, scores)


def item_aspect_string(item: Item) -> str:
    return ASPECT_SEP.join(sorted(item.aspects))


CATALOG_FIELDS = ("item_id", "topic", "aspect", "rating", "contributor_id", "created_at")


def write_catalog(items: Iterable[Item], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CATALOG_FIELDS)
    for it in sorted(items, key=lambda i: i.item_id):
        created = it.created_at.isoformat() if it.created_at else ""
        w.writerow([it.item_id, it.topic, item_aspect_string(it), it.rating, it.contributor_id, created])


def read_catalog(stream: TextIO) -> dict[str, Item]:
    out = {}
    for row in csv.DictReader(stream):
        created = datetime.fromisoformat(row["created_at"]) if row.get("created_at") else None
        aspects = frozenset(a for a in row["aspect"].split(ASPECT_SEP) if a)
        out[row["item_id"]] = Item(row["item_id"], row["topic"], aspects, int(row["rating"]), row.get("contributor_id", ""), created)
    return dict(sorted(out.items()))
