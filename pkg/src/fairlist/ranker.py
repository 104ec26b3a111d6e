"""Greedy prefix-constrained ranking and the slot-by-slot exposure loop."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Collection, Iterable, Mapping, Sequence, TextIO

from .exposure import ExposureLedger, ExposurePlan, UnknownItemError
from .recommender import RecommendedPool

# guards ceil() against products like 10 * 0.3 = 3.0000000000000004
_CEIL_SLACK = 1e-9


@dataclass(frozen=True)
class DiversityConstraints:
    """Upper bounds ``ceil(p * share)`` on aspect counts in every top-p prefix."""

    shares: Mapping[str, float]
    n: int

    def upper_bound(self, aspect: str, p: int) -> int:
        share = self.shares.get(aspect, 0.0)
        return max(0, math.ceil(p * share - _CEIL_SLACK))


def derive_constraints(shares: Mapping[str, float], n: int) -> DiversityConstraints:
    if abs(sum(shares.values()) - 1.0) > 1e-9:
        raise ValueError("shares must sum to 1")
    return DiversityConstraints(dict(shares), n)


@dataclass(frozen=True)
class RankedList:
    positions: tuple[str, ...]
    generated_at: int = 0
    fallback: frozenset[int] = frozenset()  # 1-based positions filled by the fallback rule
    utilities: tuple[float, ...] = ()

    def __len__(self) -> int:
        return len(self.positions)


def sort_by_utility(
    items: Iterable[str], utility: Mapping[str, float], desired: Mapping[str, float] | None = None
) -> list[str]:
    """Utility descending; ties go to the larger target, then the smaller id."""
    desired = desired or {}
    return sorted(items, key=lambda i: (-utility[i], -desired.get(i, 0.0), i))


def short_term_diversity(
    pool: Sequence[str],
    aspects: Mapping[str, Collection[str]],
    constraints: DiversityConstraints | None,
    n: int | None = None,
    utility: Mapping[str, float] | None = None,
    generated_at: int = 0,
) -> RankedList:
    """Fill ranks 1..n greedily from a utility-sorted pool.

    Each rank takes the first unpicked item whose aspects all stay within
    their bound for the prefix ending there; since bounds never decrease in
    p, that prefix is the binding one. When nothing fits, the first unpicked
    item is taken anyway and the position is recorded as a fallback.
    """
    if not pool:
        raise ValueError("empty pool")
    if n is None:
        n = constraints.n if constraints is not None else len(pool)
    n = min(n, len(pool))
    remaining = list(pool)
    counts: dict[str, int] = defaultdict(int)
    picked: list[str] = []
    fallback = set()
    for j in range(1, n + 1):
        choice = None
        if constraints is None:
            choice = 0
        else:
            for idx, item in enumerate(remaining):
                if all(counts[a] + 1 <= constraints.upper_bound(a, j) for a in aspects[item]):
                    choice = idx
                    break
            if choice is None:
                choice = 0
                fallback.add(j)
        item = remaining.pop(choice)
        picked.append(item)
        for a in aspects[item]:
            counts[a] += 1
    utils = tuple(float(utility[i]) for i in picked) if utility is not None else ()
    return RankedList(tuple(picked), generated_at, frozenset(fallback), utils)


@dataclass(frozen=True)
class Violation:
    position: int
    aspect: str
    count: int
    bound: int


@dataclass
class ConstraintReport:
    violations: list[Violation] = field(default_factory=list)
    fallback_positions: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_constraints(
    ranked: RankedList, constraints: DiversityConstraints, aspect_map: Mapping[str, Collection[str]]
) -> ConstraintReport:
    """Recount every prefix and report bounds exceeded by non-fallback items.

    Items placed by the fallback rule are left out of the counts and listed
    separately.
    """
    report = ConstraintReport(fallback_positions=sorted(ranked.fallback))
    counts: dict[str, int] = defaultdict(int)
    for p, item in enumerate(ranked.positions, start=1):
        if item not in aspect_map:
            raise UnknownItemError(item)
        if p in ranked.fallback:
            continue
        for a in aspect_map[item]:
            counts[a] += 1
        for a in sorted(counts):
            bound = constraints.upper_bound(a, p)
            if counts[a] > bound:
                report.violations.append(Violation(p, a, counts[a], bound))
    return report


Feedback = Callable[[int, RankedList], Iterable[str]]


def long_term_fairness(
    pool: RecommendedPool,
    plan: ExposurePlan,
    ledger: ExposureLedger,
    constraints: DiversityConstraints | None,
    num_slots: int,
    exposure_feedback: Feedback,
    eligible: Callable[[int], Collection[str]] | None = None,
) -> list[RankedList]:
    """Regenerate one list per slot with utility = remaining exposure.

    Before every slot the pool is re-sorted by ``D - E`` and passed through
    :func:`short_term_diversity`. ``exposure_feedback(slot, ranked)`` reports
    the items heard during that slot; they are recorded in ``ledger`` before
    the next list is built. ``eligible(slot)`` optionally narrows the pool,
    e.g. to items that exist at that time.
    """
    if num_slots < 1:
        raise ValueError("num_slots must be >= 1")
    aspect_map = pool.aspect_map()
    missing = [i for i in aspect_map if i not in plan.targets]
    if missing:
        raise ValueError(f"plan does not cover pool items {missing[:5]}")
    n = constraints.n if constraints is not None else None
    lists = []
    for slot in range(num_slots):
        candidates = list(aspect_map) if eligible is None else [i for i in eligible(slot) if i in aspect_map]
        if candidates:
            utility = {i: plan.targets[i] - ledger.achieved.get(i, 0) for i in candidates}
            ordered = sort_by_utility(candidates, utility, plan.targets)
            ranked = short_term_diversity(ordered, aspect_map, constraints, n, utility, generated_at=slot)
        else:
            ranked = RankedList((), slot)
        lists.append(ranked)
        for item in exposure_feedback(slot, ranked):
            ledger.record_listen(item)
    return lists


def write_lists(lists: Iterable[RankedList], aspect_map: Mapping[str, Collection[str]], stream: TextIO) -> None:
    """``slot,rank,item_id,aspect_list,utility_at_selection`` rows."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["slot", "rank", "item_id", "aspect_list", "utility_at_selection"])
    for ranked in lists:
        for r, item in enumerate(ranked.positions, start=1):
            util = repr(ranked.utilities[r - 1]) if ranked.utilities else ""
            w.writerow([ranked.generated_at, r, item, "|".join(sorted(aspect_map[item])), util])


def read_lists(stream: TextIO) -> list[RankedList]:
    rows: dict[int, list] = defaultdict(list)
    for row in csv.DictReader(stream):
        rows[int(row["slot"])].append(row)
    out = []
    for slot in sorted(rows):
        entries = sorted(rows[slot], key=lambda r: int(r["rank"]))
        utils = tuple(float(r["utility_at_selection"]) for r in entries if r["utility_at_selection"])
        out.append(RankedList(tuple(r["item_id"] for r in entries), slot, frozenset(), utils))
    return out
