"""Seeded replay of call-log workloads under each ranking model."""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Callable, Mapping, Sequence, TextIO

import numpy as np

from .calllog import Key, ListenEvent, Session, Source, TrafficProfile
from .exposure import (
    AspectRule,
    ExposureLedger,
    ExposurePlan,
    FairnessPolicy,
    ItemRule,
    SlotSchedule,
    build_plan,
)
from .ranker import (
    DiversityConstraints,
    RankedList,
    derive_constraints,
    long_term_fairness,
)
from .recommender import Item, ItemLabel, RecommendedPool, pool_from_liked

log = logging.getLogger(__name__)


class ModelVariant(str, enum.Enum):
    RANDOM = "random"
    MANUAL = "manual"
    USER_PREFERENCE = "user_pref"
    POLICY_3A = "3a"
    POLICY_3B = "3b"
    POLICY_3C = "3c"
    POLICY_3D = "3d"

    @property
    def is_policy(self) -> bool:
        return self in VARIANT_POLICIES


ALL_VARIANTS = tuple(ModelVariant)
POLICY_VARIANTS = (ModelVariant.POLICY_3A, ModelVariant.POLICY_3B, ModelVariant.POLICY_3C, ModelVariant.POLICY_3D)

# fixed per-variant stream codes: adding a variant never shifts another's randomness
_STREAM = {v: i for i, v in enumerate(ALL_VARIANTS)}
_DEPTH_STREAM = 101


def variant_policy(variant: ModelVariant, min_share: float = 0.05) -> FairnessPolicy:
    aspect_rule, item_rule = VARIANT_POLICIES[variant]
    return FairnessPolicy(aspect_rule, item_rule, min_share)


VARIANT_POLICIES = {
    ModelVariant.POLICY_3A: (AspectRule.MIN_GUARANTEE, ItemRule.EQUAL),
    ModelVariant.POLICY_3B: (AspectRule.MIN_GUARANTEE, ItemRule.RATING),
    ModelVariant.POLICY_3C: (AspectRule.EQUAL, ItemRule.EQUAL),
    ModelVariant.POLICY_3D: (AspectRule.EQUAL, ItemRule.RATING),
}


class DepthMode(str, enum.Enum):
    REPLAY = "replay"
    SAMPLE = "sample"


@dataclass(frozen=True)
class SimulationConfig:
    schedule: SlotSchedule
    depth_mode: DepthMode = DepthMode.REPLAY
    min_share: float = 0.05
    origin: date | None = None  # day 0 of the schedule; defaults to the first session's date


@dataclass
class ExposureOutcome:
    variant: ModelVariant
    cluster: int
    seed: int
    exposure_by_item: dict[str, int]
    exposure_by_aspect: dict[str, int]
    lists_generated: list[RankedList]
    listens: int
    plan: ExposurePlan | None = None
    constraints: DiversityConstraints | None = None
    skipped_sessions: int = 0
    item_aspects: dict[str, frozenset[str]] = field(default_factory=dict)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def sample_depths(n_sessions: int, reach: np.ndarray, seed: int) -> np.ndarray:
    """Depths with ``P(depth >= r) = reach[r - 1]``."""
    u = _rng(seed, _DEPTH_STREAM).random(n_sessions)
    reach = np.asarray(reach, dtype=float)
    # non-increasing reach: count ranks whose probability exceeds u
    return np.array([int(np.sum(reach > x)) for x in u], dtype=int)


@dataclass
class _Timeline:
    slot_starts: list[datetime]
    buckets: list[list[int]]  # session indices per slot
    skipped: int


def _timeline(sessions: Sequence[Session], schedule: SlotSchedule, origin: date | None) -> _Timeline:
    hours = schedule.hours()
    if origin is None:
        origin = min((s.start.date() for s in sessions), default=date(1970, 1, 1))
    base = datetime.combine(origin, datetime.min.time())
    step = max(1, int(round(schedule.regen_interval)))
    ordinal = {dh: i for i, dh in enumerate(hours)}
    n_slots = max(1, math.ceil(len(hours) / step)) if hours else 0
    starts = []
    for s in range(n_slots):
        day, hour = hours[s * step]
        starts.append(base + timedelta(days=day, hours=hour))
    buckets: list[list[int]] = [[] for _ in range(n_slots)]
    skipped = 0
    for idx, sess in enumerate(sessions):
        tz_naive = sess.start.replace(tzinfo=None)
        key = ((tz_naive.date() - origin).days, tz_naive.hour)
        if key not in ordinal:
            skipped += 1
            continue
        buckets[ordinal[key] // step].append(idx)
    if skipped:
        log.warning("skipped %d session(s) outside every scheduled slot", skipped)
    for b in buckets:
        b.sort(key=lambda i: (sessions[i].start, sessions[i].call_id))
    return _Timeline(starts, buckets, skipped)


def _available(items: Mapping[str, Item], ids, when: datetime) -> list[str]:
    out = []
    for i in ids:
        created = items[i].created_at if i in items else None
        if created is None or created.replace(tzinfo=None) <= when:
            out.append(i)
    return out


def replay(
    sessions: Sequence[Session],
    variant: ModelVariant | str,
    pool: RecommendedPool,
    traffic: TrafficProfile,
    schedule: SlotSchedule,
    seed: int,
    *,
    catalog: Mapping[str, Item] | None = None,
    depth_mode: DepthMode | str = DepthMode.REPLAY,
    min_share: float = 0.05,
    origin: date | None = None,
    cluster: int = 0,
) -> ExposureOutcome:
    """Replay sessions against one ranking model and count exposure.

    Lists are regenerated every ``schedule.regen_interval`` scheduled hours
    and every session in a slot listens down the current list, either to its
    logged depth or to a depth drawn from ``traffic.rank_reach_prob``. Each
    reached rank is one listen. ``manual`` skips ranking entirely and counts
    the logged listens. ``catalog`` supplies item metadata (aspects, ratings,
    creation times) and is the candidate set of the random baseline.
    """
    variant = ModelVariant(variant)
    depth_mode = DepthMode(depth_mode)
    pool_aspects = pool.aspect_map()
    if catalog is None:
        catalog = {}
    aspect_of: dict[str, frozenset[str]] = {i: it.aspects for i, it in catalog.items()}
    for i, a in pool_aspects.items():
        aspect_of.setdefault(i, a)
    if variant is not ModelVariant.MANUAL and not pool_aspects:
        raise ValueError("empty pool")

    tl = _timeline(sessions, schedule, origin)
    exposure: dict[str, int] = {i: 0 for i in aspect_of}
    lists: list[RankedList] = []
    listens = 0

    if variant is ModelVariant.MANUAL:
        for slot, bucket in enumerate(tl.buckets):
            for idx in bucket:
                heard = [e.item_id for e in sessions[idx].events]
                for e in sessions[idx].events:
                    aspect_of.setdefault(e.item_id, e.aspects)
                    exposure[e.item_id] = exposure.get(e.item_id, 0) + 1
                listens += len(heard)
                lists.append(RankedList(tuple(heard), slot))
        return _outcome(variant, cluster, seed, exposure, aspect_of, lists, listens, skipped=tl.skipped)

    if depth_mode is DepthMode.SAMPLE:
        depths = sample_depths(len(sessions), traffic.rank_reach_prob, seed)
    else:
        depths = np.array([s.depth for s in sessions], dtype=int)

    def feedback(slot: int, ranked: RankedList) -> list[str]:
        nonlocal listens
        heard = []
        for idx in tl.buckets[slot]:
            heard.extend(ranked.positions[: depths[idx]])
        for i in heard:
            exposure[i] += 1
        listens += len(heard)
        return heard

    n = schedule.list_length
    num_slots = len(tl.buckets)
    plan = constraints = None

    if variant.is_policy:
        plan = build_plan(variant_policy(variant, min_share), pool, traffic, schedule, _ratings(catalog, pool))
        constraints = derive_constraints(plan.aspect_shares, n)
        ledger = ExposureLedger.for_items(pool_aspects)
        if num_slots:
            lists = long_term_fairness(
                pool,
                plan,
                ledger,
                constraints,
                num_slots,
                feedback,
                eligible=lambda s: _available(catalog, sorted(pool_aspects), tl.slot_starts[s]),
            )
    else:
        generate: Callable[[int], RankedList]
        if variant is ModelVariant.RANDOM:
            candidates = sorted(catalog) if catalog else sorted(pool_aspects)

            def generate(slot: int) -> RankedList:
                avail = _available(catalog, candidates, tl.slot_starts[slot])
                rng = _rng(seed, cluster, _STREAM[variant], slot)
                picks = rng.permutation(len(avail))[:n] if avail else []
                return RankedList(tuple(avail[k] for k in picks), slot)
        else:
            scores = {i: pool.scores.get(i, 0.0) for i in pool_aspects}

            def generate(slot: int) -> RankedList:
                avail = _available(catalog, sorted(pool_aspects), tl.slot_starts[slot])
                ordered = sorted(avail, key=lambda i: (-scores[i], i))[:n]
                return RankedList(tuple(ordered), slot, frozenset(), tuple(scores[i] for i in ordered))

        for slot in range(num_slots):
            ranked = generate(slot)
            lists.append(ranked)
            feedback(slot, ranked)

    return _outcome(
        variant, cluster, seed, exposure, aspect_of, lists, listens, plan, constraints, tl.skipped
    )


def _ratings(catalog: Mapping[str, Item], pool: RecommendedPool) -> dict[str, int]:
    missing = [i for i in pool.item_ids() if i not in catalog]
    if missing:
        raise ValueError(f"catalog lacks ratings for pooled items {missing[:5]}")
    return {i: catalog[i].rating for i in pool.item_ids()}


def _outcome(variant, cluster, seed, exposure, aspect_of, lists, listens, plan=None, constraints=None, skipped=0):
    by_aspect: dict[str, int] = {a: 0 for i in aspect_of for a in aspect_of[i]}
    for i, x in exposure.items():
        for a in aspect_of[i]:
            by_aspect[a] += x
    return ExposureOutcome(
        variant,
        cluster,
        seed,
        dict(sorted(exposure.items())),
        dict(sorted(by_aspect.items())),
        lists,
        listens,
        plan,
        constraints,
        skipped,
        {i: aspect_of[i] for i in sorted(exposure)},
    )


def run_comparison(
    sessions: Mapping[int, Sequence[Session]],
    pools: Mapping[int, RecommendedPool],
    variants: Sequence[ModelVariant | str],
    config: SimulationConfig,
    seed: int,
    *,
    traffic: Mapping[int, TrafficProfile],
    catalog: Mapping[str, Item] | None = None,
) -> dict[tuple[int, ModelVariant], ExposureOutcome]:
    """Every variant on every cluster, each with its own ledger and sub-seeds."""
    if not variants:
        raise ValueError("no variants requested")
    out = {}
    for cluster in sorted(pools):
        for v in variants:
            v = ModelVariant(v)
            out[(cluster, v)] = replay(
                sessions.get(cluster, []),
                v,
                pools[cluster],
                traffic[cluster],
                config.schedule,
                seed,
                catalog=catalog,
                depth_mode=config.depth_mode,
                min_share=config.min_share,
                origin=config.origin,
                cluster=cluster,
            )
    return out


def write_outcomes(outcomes, stream: TextIO) -> None:
    """``variant,cluster,item_id,aspect,exposure``; multi-aspect items join labels with ``|``."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["variant", "cluster", "item_id", "aspect", "exposure"])
    for o in outcomes:
        for item, x in o.exposure_by_item.items():
            w.writerow([o.variant.value, o.cluster, item, "|".join(sorted(o.item_aspects[item])), x])


def read_outcomes(stream: TextIO, seed: int = 0) -> dict[tuple[int, ModelVariant], ExposureOutcome]:
    rows: dict[tuple[int, ModelVariant], dict[str, int]] = defaultdict(dict)
    aspects: dict[str, frozenset[str]] = {}
    for row in csv.DictReader(stream):
        key = (int(row["cluster"]), ModelVariant(row["variant"]))
        rows[key][row["item_id"]] = int(row["exposure"])
        aspects[row["item_id"]] = frozenset(a for a in row["aspect"].split("|") if a)
    out = {}
    for (cluster, variant), exposure in rows.items():
        out[(cluster, variant)] = _outcome(
            variant, cluster, seed, exposure, aspects, [], sum(exposure.values())
        )
    return out


def write_manifest(stream: TextIO, *, seed: int, config_hash: str, variants, clusters, outcomes) -> None:
    manifest = {
        "seed": seed,
        "config_hash": config_hash,
        "variants": [ModelVariant(v).value for v in variants],
        "clusters": sorted(clusters),
        "listens": {f"{c}:{v.value}": o.listens for (c, v), o in sorted(outcomes.items(), key=lambda t: (t[0][0], t[0][1].value))},
    }
    json.dump(manifest, stream, indent=1, sort_keys=True)
    stream.write("\n")


# -- synthetic workloads -----------------------------------------------------------


@dataclass(frozen=True)
class AspectSpec:
    name: str
    weight: float  # share of catalog items
    like_rate: float  # chance that the cluster likes an item of this aspect
    appeal: float  # scale of the appeal score of liked items, in (0, 1]
    rating_probs: tuple[float, ...] = (0.0, 0.1, 0.3, 0.35, 0.25)


DEFAULT_REACH = (1.0, 0.8, 0.64, 0.52, 0.42, 0.34, 0.28, 0.23, 0.19, 0.16)

# Catalog skewed harder than the liked pool: beta comes out near (0.5, 0.2, 0.15, 0.1, 0.05).
SKEWED_ASPECTS = (
    AspectSpec("basics", 0.60, 0.50, 0.95),
    AspectSpec("food_groups", 0.18, 0.65, 0.60),
    AspectSpec("myths", 0.10, 0.85, 0.50),
    AspectSpec("recipes", 0.08, 0.70, 0.40),
    AspectSpec("experiences", 0.04, 0.70, 0.30),
)


@dataclass(frozen=True)
class SyntheticWorkloadSpec:
    num_users: int = 200
    aspects: tuple[AspectSpec, ...] = SKEWED_ASPECTS
    initial_items: int = 150
    item_arrival_rate: float = 0.4  # new items per scheduled hour
    hours: int = 500  # scheduled slot-hours
    callers_per_hour: float = 20.0
    rank_reach_prob: tuple[float, ...] = DEFAULT_REACH
    slot_start_hour: int = 18
    slot_hours_per_day: int = 3
    num_clusters: int = 1
    topic: str = "MDD"
    origin: date = date(2021, 1, 1)

    def __post_init__(self):
        if self.num_users < 1 or self.num_clusters < 1 or self.initial_items < 0 or self.hours < 0:
            raise ValueError("counts must be positive")
        if not self.aspects or any(a.weight <= 0 for a in self.aspects):
            raise ValueError("aspect weights must be positive")
        reach = np.asarray(self.rank_reach_prob)
        if reach[0] != 1.0 or np.any(np.diff(reach) > 0) or np.any(reach < 0):
            raise ValueError("rank_reach_prob must start at 1 and be non-increasing")
        if not 0 <= self.slot_start_hour < self.slot_start_hour + self.slot_hours_per_day <= 24:
            raise ValueError("slot window must fit inside one day")


@dataclass
class SyntheticWorkload:
    items: dict[str, Item]
    sessions: list[Session]
    traffic: TrafficProfile
    schedule: SlotSchedule
    appeal: dict[int, dict[str, float]]  # cluster -> item -> score in [-1, 1]
    user_clusters: dict[str, int]
    origin: date

    def sessions_by_cluster(self) -> dict[int, list[Session]]:
        out: dict[int, list[Session]] = defaultdict(list)
        for s in self.sessions:
            out[self.user_clusters[s.caller_id]].append(s)
        return dict(out)

    def oracle_labels(self, cluster: int) -> dict[str, ItemLabel]:
        return {i: ItemLabel(a, a > 0) for i, a in self.appeal[cluster].items()}

    def oracle_pool(self, cluster: int) -> RecommendedPool:
        appeal = self.appeal[cluster]
        return pool_from_liked(
            next(iter(self.items.values())).topic if self.items else "",
            cluster,
            self.items.values(),
            {i: a > 0 for i, a in appeal.items()},
            {i: (1 + a) / 2 for i, a in appeal.items()},
        )


_SOURCES = (Source.USER, Source.STUDIO, Source.REPORTER)


def _schedule_for(spec: SyntheticWorkloadSpec) -> SlotSchedule:
    per_day = spec.slot_hours_per_day
    slots = []
    left, day = spec.hours, 0
    while left > 0:
        span = min(per_day, left)
        slots.append((spec.slot_start_hour, spec.slot_start_hour + span, day))
        left -= span
        day += 1
    if not slots:
        # zero hours: keep one nominal window so the schedule stays valid
        slots = [(spec.slot_start_hour, spec.slot_start_hour + per_day, 0)]
    return SlotSchedule(tuple(slots), horizon_hours=max(spec.hours, 1), list_length=len(spec.rank_reach_prob))


def generate_synthetic(spec: SyntheticWorkloadSpec, seed: int) -> SyntheticWorkload:
    """Build a seeded workload: catalog, per-cluster appeal, logged sessions, traffic.

    Logged sessions follow a manual-moderation list (highest rated, newest
    first, refreshed daily) down to a depth drawn from the reach profile;
    reactions depend on the caller's cluster appeal and source taste.
    """
    rng = np.random.default_rng(seed)
    base = datetime.combine(spec.origin, datetime.min.time())
    users = [f"u{k:04d}" for k in range(spec.num_users)]
    user_clusters = {u: k % spec.num_clusters for k, u in enumerate(users)}
    source_taste = {c: _SOURCES[c % len(_SOURCES)] for c in range(spec.num_clusters)}

    weights = np.array([a.weight for a in spec.aspects], dtype=float)
    weights /= weights.sum()
    items: dict[str, Item] = {}
    durations: dict[str, float] = {}
    sources: dict[str, Source] = {}
    appeal: dict[int, dict[str, float]] = {c: {} for c in range(spec.num_clusters)}

    def new_item(created: datetime) -> None:
        item_id = f"i{len(items):05d}"
        j = int(rng.choice(len(spec.aspects), p=weights))
        a = spec.aspects[j]
        probs = np.asarray(a.rating_probs, dtype=float)
        rating = int(rng.choice(5, p=probs / probs.sum())) + 1
        source = _SOURCES[int(rng.choice(3, p=[0.5, 0.3, 0.2]))]
        contributor = users[int(rng.integers(len(users)))] if source is Source.USER else source.value.lower()
        items[item_id] = Item(item_id, spec.topic, frozenset({a.name}), rating, contributor, created)
        durations[item_id] = float(rng.integers(60, 181))
        sources[item_id] = source
        for c in range(spec.num_clusters):
            if rng.random() < a.like_rate:
                score = a.appeal * (0.5 + 0.5 * rng.random()) + 0.02 * (rating - 3)
                appeal[c][item_id] = float(np.clip(score, 0.01, 1.0))
            else:
                appeal[c][item_id] = float(-(0.1 + 0.9 * rng.random()))

    for _ in range(spec.initial_items):
        new_item(base - timedelta(days=1))

    schedule = _schedule_for(spec)
    hours = schedule.hours()[: spec.hours]
    reach = np.asarray(spec.rank_reach_prob, dtype=float)
    n = len(reach)
    sessions: list[Session] = []
    manual: list[str] = []
    manual_day = None
    call_no = 0
    for t, (day, hour) in enumerate(hours):
        start = base + timedelta(days=day, hours=hour)
        for _ in range(int(rng.poisson(spec.item_arrival_rate))):
            new_item(start + timedelta(seconds=float(rng.uniform(0, 3600))))
        if manual_day != day:
            # moderators refresh the featured list once per day, at the slot start
            avail = [i for i in items if items[i].created_at <= start]
            manual = sorted(avail, key=lambda i: (-items[i].rating, -items[i].created_at.timestamp(), i))[:n]
            manual_day = day
        k = min(int(rng.poisson(spec.callers_per_hour)), len(users))
        callers = sorted(rng.choice(len(users), size=k, replace=False)) if k else []
        offsets = np.sort(rng.uniform(0, 3600, size=k))
        for ci, off in zip(callers, offsets):
            user = users[ci]
            depth = min(int(np.sum(reach > rng.random())), len(manual))
            if depth == 0:
                continue
            call_id = f"c{call_no:07d}"
            call_no += 1
            events = []
            clock = start + timedelta(seconds=float(off))
            for r in range(depth):
                item_id = manual[r]
                events.append(
                    _listen(rng, call_id, user, items[item_id], durations[item_id], sources[item_id],
                            appeal[user_clusters[user]][item_id], source_taste[user_clusters[user]],
                            clock, r + 1, r == depth - 1)
                )
                clock += timedelta(seconds=events[-1].duration_heard + 1)
            sessions.append(Session(call_id, user, tuple(events)))

    per_hour = np.zeros(24)
    per_hour[spec.slot_start_hour : spec.slot_start_hour + spec.slot_hours_per_day] = spec.callers_per_hour
    traffic = TrafficProfile(per_hour, reach)
    return SyntheticWorkload(items, sessions, traffic, schedule, appeal, user_clusters, spec.origin)


def _listen(rng, call_id, user, item: Item, duration, source, appeal, taste, clock, rank, last) -> ListenEvent:
    bias = 0.25 if source is taste else -0.15
    p_pos = float(np.clip(0.5 + 0.45 * appeal + bias, 0.02, 0.98))
    if rng.random() < p_pos:
        key = [Key.NONE, Key.LIKE, Key.FORWARD, Key.COMMENT][int(rng.choice(4, p=[0.55, 0.3, 0.1, 0.05]))]
        frac = rng.uniform(0.5, 1.0)
    else:
        key = Key.SKIP if (not last or rng.random() < 0.5) else Key.NONE
        frac = rng.uniform(0.02, 0.4)
    return ListenEvent(
        call_id=call_id,
        caller_id=user,
        item_id=item.item_id,
        contributor_id=item.contributor_id,
        item_duration=duration,
        duration_heard=float(round(frac * duration, 1)),
        source=source,
        topic=item.topic,
        aspect="|".join(sorted(item.aspects)),
        rating=item.rating,
        key_pressed=key,
        timestamp=clock.replace(microsecond=0),
        rank_position=rank,
    )
