"""Exposure inventory, fairness policies, per-item targets and the exposure ledger."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, TextIO

import numpy as np

from .calllog import TrafficProfile
from .recommender import RecommendedPool


class AspectRule(str, enum.Enum):
    USER_PREFERENCE = "user_pref"
    MIN_GUARANTEE = "min_guarantee"
    EQUAL = "equal"


class ItemRule(str, enum.Enum):
    EQUAL = "equal"
    RATING = "rating"


@dataclass(frozen=True)
class FairnessPolicy:
    aspect_rule: AspectRule = AspectRule.MIN_GUARANTEE
    item_rule: ItemRule = ItemRule.EQUAL
    min_share: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "aspect_rule", AspectRule(self.aspect_rule))
        object.__setattr__(self, "item_rule", ItemRule(self.item_rule))
        if self.aspect_rule is AspectRule.MIN_GUARANTEE and not 0 < self.min_share <= 1:
            raise ValueError("min_share must lie in (0, 1]")

    @classmethod
    def from_mapping(cls, section: Mapping[str, str]) -> "FairnessPolicy":
        return cls(
            AspectRule(section.get("aspect_rule", "min_guarantee")),
            ItemRule(section.get("item_rule", "equal")),
            float(section.get("min_share", 0.05)),
        )


@dataclass(frozen=True)
class SlotSchedule:
    """Topic slots as ``(start_hour, end_hour, day)`` windows, end exclusive."""

    slots: tuple[tuple[int, int, int], ...]
    horizon_hours: float = 100
    regen_interval: float = 1
    list_length: int = 10

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(tuple(int(v) for v in s) for s in self.slots))
        if self.horizon_hours <= 0 or self.regen_interval <= 0 or self.list_length < 1:
            raise ValueError("horizon_hours and regen_interval must be > 0, list_length >= 1")
        for start, end, day in self.slots:
            if not 0 <= start < end <= 24 or day < 0:
                raise ValueError(f"invalid slot ({start}, {end}, {day})")

    @classmethod
    def daily(cls, start_hour: int, end_hour: int, days: int, **kwargs) -> "SlotSchedule":
        return cls(tuple((start_hour, end_hour, d) for d in range(days)), **kwargs)

    def hours(self) -> list[tuple[int, int]]:
        """Every scheduled ``(day, hour)`` in time order."""
        out = {(day, h) for start, end, day in self.slots for h in range(start, end)}
        return sorted(out)

    def horizon(self) -> list[tuple[int, int]]:
        """Scheduled hours falling inside the planning horizon."""
        return self.hours()[: int(self.horizon_hours)]


def total_inventory(traffic: TrafficProfile, schedule: SlotSchedule) -> float:
    """Expected listens over the horizon: callers per slot-hour times expected list depth."""
    if not schedule.slots:
        raise ValueError("schedule has no slots")
    n = schedule.list_length
    if n > len(traffic.rank_reach_prob):
        raise ValueError(f"list_length {n} exceeds the rank-reach profile ({len(traffic.rank_reach_prob)} ranks)")
    depth = float(np.sum(traffic.rank_reach_prob[:n]))
    return float(sum(traffic.users_per_hour[h] for _, h in schedule.horizon()) * depth)


def aspect_shares(policy: FairnessPolicy, beta: Mapping[str, float]) -> dict[str, float]:
    """Per-aspect exposure shares after applying the aspect rule to ``beta``.

    Under a minimum guarantee every aspect below the minimum is lifted to it
    and the remaining mass is spread over the others in proportion to their
    beta, repeating until no aspect is below the minimum.
    """
    if not beta:
        raise ValueError("beta is empty")
    if abs(sum(beta.values()) - 1.0) > 1e-9:
        raise ValueError("beta must sum to 1")
    aspects = list(beta)
    if policy.aspect_rule is AspectRule.USER_PREFERENCE:
        return dict(beta)
    if policy.aspect_rule is AspectRule.EQUAL:
        return {a: 1.0 / len(aspects) for a in aspects}

    m = policy.min_share
    if m * len(aspects) > 1 + 1e-12:
        raise ValueError(f"min_share {m} is infeasible for {len(aspects)} aspects")
    raised: set[str] = set()
    shares = dict(beta)
    while True:
        low = {a for a in aspects if a not in raised and shares[a] < m - 1e-15}
        if not low:
            return shares
        raised |= low
        free = [a for a in aspects if a not in raised]
        rest = 1.0 - m * len(raised)
        base = sum(beta[a] for a in free)
        for a in raised:
            shares[a] = m
        for a in free:
            shares[a] = beta[a] * rest / base if base > 0 else rest / len(free)


@dataclass
class ExposurePlan:
    targets: dict[str, float]
    aspect_shares: dict[str, float]
    inventory: float


def item_targets(
    shares: Mapping[str, float],
    pool: RecommendedPool,
    item_rule: ItemRule,
    inventory: float,
    ratings: Mapping[str, int],
) -> ExposurePlan:
    """Split each aspect's budget over its pooled items.

    Items carrying several aspects collect a target from each of them.
    """
    item_rule = ItemRule(item_rule)
    targets = {i: 0.0 for i in pool.item_ids()}
    for aspect, share in shares.items():
        items = sorted(pool.items_by_aspect.get(aspect, ()))
        if not items:
            if share > 0:
                raise ValueError(f"aspect {aspect!r} has share {share} but no pooled item")
            continue
        budget = share * inventory
        if item_rule is ItemRule.EQUAL:
            for i in items:
                targets[i] += budget / len(items)
        else:
            total = sum(ratings[i] for i in items)
            for i in items:
                targets[i] += budget * ratings[i] / total
    return ExposurePlan(targets, dict(shares), inventory)


def build_plan(
    policy: FairnessPolicy,
    pool: RecommendedPool,
    traffic: TrafficProfile,
    schedule: SlotSchedule,
    ratings: Mapping[str, int],
) -> ExposurePlan:
    shares = aspect_shares(policy, pool.beta)
    return item_targets(shares, pool, policy.item_rule, total_inventory(traffic, schedule), ratings)


class UnknownItemError(KeyError):
    pass


@dataclass
class ExposureLedger:
    """Achieved listens per item; only :meth:`record_listen` mutates it."""

    achieved: dict[str, int] = field(default_factory=dict)

    @classmethod
    def for_items(cls, items: Iterable[str]) -> "ExposureLedger":
        return cls({i: 0 for i in items})

    def record_listen(self, item: str) -> "ExposureLedger":
        if item not in self.achieved:
            raise UnknownItemError(item)
        self.achieved[item] += 1
        return self

    def get(self, item: str) -> int:
        if item not in self.achieved:
            raise UnknownItemError(item)
        return self.achieved[item]

    def snapshot(self) -> dict[str, int]:
        return dict(self.achieved)

    def write_checkpoint(self, stream: TextIO) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["item_id", "achieved_exposure"])
        for item in sorted(self.achieved):
            w.writerow([item, self.achieved[item]])

    @classmethod
    def read_checkpoint(cls, stream: TextIO) -> "ExposureLedger":
        return cls({row["item_id"]: int(row["achieved_exposure"]) for row in csv.DictReader(stream)})


def record_listen(ledger: ExposureLedger, item: str) -> ExposureLedger:
    return ledger.record_listen(item)


def remaining_exposure(plan: ExposurePlan, ledger: ExposureLedger, item: str) -> float:
    """``D - E``; negative once an item is over-served."""
    if item not in plan.targets:
        raise UnknownItemError(item)
    return plan.targets[item] - ledger.achieved.get(item, 0)
