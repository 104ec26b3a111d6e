"""User preference vectors, engaged-user filtering and k-prototypes clustering."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .calllog import InteractionLabel, Key, ListenEvent

Pair = tuple[str, str]  # (source, topic)

KL_EPSILON = 1e-6
MAX_ITER = 100


@dataclass(frozen=True)
class PreferenceVector:
    """Signed preference per (source, topic) pair plus heard indicators.

    Pairs absent from ``scores`` read as score 0 with indicator false.
    """

    scores: Mapping[Pair, float] = field(default_factory=dict)
    heard: Mapping[Pair, bool] = field(default_factory=dict)

    def pairs(self) -> set[Pair]:
        return set(self.scores) | set(self.heard)

    def numeric(self, index: Sequence[Pair]) -> np.ndarray:
        return np.array([float(self.scores.get(p, 0.0)) for p in index])

    def categorical(self, index: Sequence[Pair]) -> np.ndarray:
        return np.array([bool(self.heard.get(p, False)) for p in index])

    @classmethod
    def from_arrays(cls, index: Sequence[Pair], scores, heard) -> "PreferenceVector":
        return cls(
            {p: float(s) for p, s in zip(index, scores)},
            {p: bool(h) for p, h in zip(index, heard)},
        )


def common_index(vectors: Iterable[PreferenceVector]) -> list[Pair]:
    pairs: set[Pair] = set()
    for v in vectors:
        pairs |= v.pairs()
    return sorted(pairs)


def preference_score(n_positive: int, n_negative: int, n_heard: int) -> float:
    if n_heard <= 0:
        raise ValueError("n_heard must be positive; mark the pair as unheard instead")
    if n_positive < 0 or n_negative < 0 or n_positive + n_negative > n_heard:
        raise ValueError("need n_heard >= n_positive + n_negative >= 0")
    return (n_positive - n_negative) / n_heard


def build_preference_vector(
    labeled: Iterable[tuple[ListenEvent, InteractionLabel]],
) -> PreferenceVector:
    """Per (source, topic) preference score over the labelled listens given."""
    counts: dict[Pair, list[int]] = defaultdict(lambda: [0, 0, 0])
    for event, label in labeled:
        c = counts[(event.source.value, event.topic)]
        c[2] += 1
        if label is InteractionLabel.POSITIVE:
            c[0] += 1
        elif label is InteractionLabel.NEGATIVE:
            c[1] += 1
    scores = {p: preference_score(*c) for p, c in counts.items()}
    return PreferenceVector(scores, {p: True for p in counts})


def _to_distribution(v: PreferenceVector, index: Sequence[Pair]) -> np.ndarray:
    x = v.numeric(index) + 1.0 + KL_EPSILON
    return x / x.sum()


def kl_divergence(p: PreferenceVector, q: PreferenceVector, index: Sequence[Pair] | None = None) -> float:
    """KL(p || q) after mapping both score vectors to distributions.

    Scores are shifted from [-1, 1] to [0, 2], offset by a small epsilon and
    normalized, so every component is strictly positive.
    """
    if index is None:
        index = common_index([p, q])
    if not index:
        return 0.0
    pd, qd = _to_distribution(p, index), _to_distribution(q, index)
    return float(max(np.sum(pd * np.log(pd / qd)), 0.0))


@dataclass(frozen=True)
class FilterThresholds:
    min_calls: int = 8
    min_keys_per_second: float = 1 / 240
    divergence_keep_fraction: float = 0.60

    def __post_init__(self):
        if self.min_calls <= 0 or self.min_keys_per_second <= 0:
            raise ValueError("filter thresholds must be strictly positive")
        if not 0 < self.divergence_keep_fraction <= 1:
            raise ValueError("divergence_keep_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class UserActivity:
    call_count: int
    keys_pressed: int
    total_call_seconds: float
    vector: PreferenceVector


class EmptyStageError(ValueError):
    """No user survived a stage of the engaged-user filter."""

    def __init__(self, stage: str):
        super().__init__(f"no users left after filter stage '{stage}'")
        self.stage = stage


def user_activity(sessions, labeled_by_user: Mapping[Hashable, list]) -> dict[Hashable, UserActivity]:
    """Collect per-caller call counts, key presses and listening time."""
    calls: dict[Hashable, int] = defaultdict(int)
    keys: dict[Hashable, int] = defaultdict(int)
    seconds: dict[Hashable, float] = defaultdict(float)
    for s in sessions:
        calls[s.caller_id] += 1
        for e in s.events:
            seconds[s.caller_id] += e.duration_heard
            if e.key_pressed is not Key.NONE:
                keys[s.caller_id] += 1
    return {
        u: UserActivity(calls[u], keys[u], seconds[u], build_preference_vector(labeled_by_user.get(u, [])))
        for u in calls
    }


def filter_engaged_users(
    users: Mapping[Hashable, UserActivity],
    thresholds: FilterThresholds,
    global_vector: PreferenceVector,
) -> list:
    """Three-stage cascade: frequent callers, active key pressers, divergent tastes.

    Stage three keeps the ``divergence_keep_fraction`` share of stage-two
    survivors with the largest KL divergence from ``global_vector``.
    """
    frequent = [u for u in sorted(users) if users[u].call_count >= thresholds.min_calls]
    if not frequent:
        raise EmptyStageError("min_calls")

    def rate(a: UserActivity) -> float:
        return a.keys_pressed / a.total_call_seconds if a.total_call_seconds > 0 else 0.0

    active = [u for u in frequent if rate(users[u]) >= thresholds.min_keys_per_second]
    if not active:
        raise EmptyStageError("min_keys_per_second")

    index = common_index([global_vector] + [users[u].vector for u in active])
    scored = [(kl_divergence(users[u].vector, global_vector, index), u) for u in active]
    scored.sort(key=lambda t: -t[0])  # stable: ties keep sorted-user order
    keep = int(math.floor(thresholds.divergence_keep_fraction * len(active) + 0.5))
    keep = max(1, min(keep, len(active)))
    return sorted(u for _, u in scored[:keep])


@dataclass
class ClusterAssignment:
    assignment: dict
    centroids: list[PreferenceVector]
    k: int
    gamma: float
    seed: int
    cost: float
    cost_history: list[float]
    index: list[Pair]

    def members(self, cluster: int) -> list:
        return [u for u, c in self.assignment.items() if c == cluster]


def default_gamma(numeric: np.ndarray) -> float:
    """Half the mean per-dimension variance of the numeric part."""
    if numeric.size == 0:
        return 0.0
    return 0.5 * float(np.mean(np.var(numeric, axis=0)))


def _dissimilarity(num, cat, cnum, ccat, gamma) -> np.ndarray:
    """Point-to-centroid costs, shape (n_points, n_centroids)."""
    d_num = ((num[:, None, :] - cnum[None, :, :]) ** 2).sum(axis=2)
    d_cat = (cat[:, None, :] != ccat[None, :, :]).sum(axis=2)
    return d_num + gamma * d_cat


def _mode(cat: np.ndarray) -> np.ndarray:
    # ties resolve to True
    return cat.mean(axis=0) >= 0.5


def _init_centroids(num, cat, k, gamma, rng):
    n = len(num)
    chosen = [int(rng.integers(n))]
    for _ in range(1, k):
        d = _dissimilarity(num, cat, num[chosen], cat[chosen], gamma).min(axis=1)
        d[chosen] = 0.0
        if d.sum() > 0:
            nxt = int(rng.choice(n, p=d / d.sum()))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
    return num[chosen].copy(), cat[chosen].copy()


def _as_users(vectors) -> tuple[list, list[PreferenceVector]]:
    if isinstance(vectors, Mapping):
        users = sorted(vectors)
        return users, [vectors[u] for u in users]
    vectors = list(vectors)
    return list(range(len(vectors))), vectors


def k_prototypes(
    vectors: Mapping[Hashable, PreferenceVector] | Sequence[PreferenceVector],
    k: int,
    gamma: float | None = None,
    seed: int = 0,
    max_iter: int = MAX_ITER,
) -> ClusterAssignment:
    """Cluster preference vectors with k-prototypes.

    Scores are compared by squared Euclidean distance against mean
    centroids, heard indicators by mismatch count (weighted by ``gamma``)
    against mode centroids. Lloyd iterations stop when the assignment is
    stable or after ``max_iter`` rounds. A cluster that empties is re-seeded
    with the point farthest from its current centroid.
    """
    users, vecs = _as_users(vectors)
    n = len(vecs)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in 1..{n}")
    index = common_index(vecs)
    num = np.array([v.numeric(index) for v in vecs]).reshape(n, len(index))
    cat = np.array([v.categorical(index) for v in vecs]).reshape(n, len(index))
    if gamma is None:
        gamma = default_gamma(num)
    if gamma < 0:
        raise ValueError("gamma must be >= 0")

    rng = np.random.default_rng(seed)
    cnum, ccat = _init_centroids(num, cat, k, gamma, rng)
    labels = np.full(n, -1)
    history: list[float] = []
    for _ in range(max_iter):
        dist = _dissimilarity(num, cat, cnum, ccat, gamma)
        new = dist.argmin(axis=1)
        for c in range(k):
            if not np.any(new == c):
                own = dist[np.arange(n), new]
                sizes = np.bincount(new, minlength=k)
                movable = sizes[new] > 1
                own = np.where(movable, own, -1.0)
                far = int(own.argmax())
                new[far] = c
                cnum[c], ccat[c] = num[far], cat[far]
        history.append(float(_dissimilarity(num, cat, cnum, ccat, gamma)[np.arange(n), new].sum()))
        changed = not np.array_equal(new, labels)
        labels = new
        for c in range(k):
            members = labels == c
            cnum[c] = num[members].mean(axis=0)
            ccat[c] = _mode(cat[members])
        if not changed:
            break
    cost = float(_dissimilarity(num, cat, cnum, ccat, gamma)[np.arange(n), labels].sum())
    history.append(cost)
    centroids = [PreferenceVector.from_arrays(index, cnum[c], ccat[c]) for c in range(k)]
    return ClusterAssignment(
        assignment={u: int(c) for u, c in zip(users, labels)},
        centroids=centroids,
        k=k,
        gamma=float(gamma),
        seed=seed,
        cost=cost,
        cost_history=history,
        index=index,
    )


def cluster_cost_ratio(vectors, result: ClusterAssignment) -> float:
    """Mean within-cluster dissimilarity over mean pairwise centroid dissimilarity."""
    users, vecs = _as_users(vectors)
    index = result.index
    num = np.array([v.numeric(index) for v in vecs]).reshape(len(vecs), len(index))
    cat = np.array([v.categorical(index) for v in vecs]).reshape(len(vecs), len(index))
    cnum = np.array([c.numeric(index) for c in result.centroids]).reshape(result.k, len(index))
    ccat = np.array([c.categorical(index) for c in result.centroids]).reshape(result.k, len(index))
    labels = np.array([result.assignment[u] for u in users])
    within = _dissimilarity(num, cat, cnum, ccat, result.gamma)[np.arange(len(vecs)), labels].mean()
    between = _dissimilarity(cnum, ccat, cnum, ccat, result.gamma)
    iu = np.triu_indices(result.k, 1)
    mean_between = between[iu].mean()
    if mean_between == 0:
        return math.inf
    return float(within / mean_between)


@dataclass
class ElbowResult:
    k: int
    ks: list[int]
    costs: list[float]
    fits: dict[int, ClusterAssignment]


def elbow_select_k(vectors, k_range: Sequence[int], seed: int = 0, gamma: float | None = None) -> ElbowResult:
    """Pick k at the largest second difference of the cost-ratio curve.

    With fewer than three candidate k values there is no interior point and
    the k with the lowest cost wins.
    """
    ks = list(k_range)
    if not ks or min(ks) < 2:
        raise ValueError("k_range must start at 2: the inter-centroid distance is undefined for k=1")
    _, vecs = _as_users(vectors)
    if max(ks) > len(vecs):
        raise ValueError("k_range exceeds the number of vectors")
    fits = {k: k_prototypes(vectors, k, gamma=gamma, seed=seed) for k in ks}
    costs = [cluster_cost_ratio(vectors, fits[k]) for k in ks]
    if len(ks) < 3:
        best = ks[int(np.argmin(costs))]
    else:
        c = np.array(costs)
        second = c[:-2] - 2 * c[1:-1] + c[2:]
        best = ks[1 + int(np.argmax(second))]
    return ElbowResult(best, ks, costs, fits)


def cluster_centroid(assignment: ClusterAssignment, cluster: int) -> PreferenceVector:
    if not 0 <= cluster < assignment.k:
        raise IndexError(f"cluster {cluster} out of range 0..{assignment.k - 1}")
    return assignment.centroids[cluster]


def centroid_of(vectors: Sequence[PreferenceVector]) -> PreferenceVector:
    """Mean scores and majority-vote indicators (ties to True)."""
    if not vectors:
        raise ValueError("centroid of an empty set")
    index = common_index(vectors)
    num = np.array([v.numeric(index) for v in vectors]).reshape(len(vectors), len(index))
    cat = np.array([v.categorical(index) for v in vectors]).reshape(len(vectors), len(index))
    return PreferenceVector.from_arrays(index, num.mean(axis=0), _mode(cat))
