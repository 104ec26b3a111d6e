"""
From traffic to per-item exposure targets
=========================================

Inventory is the number of listens a topic can expect over the planning
horizon. A fairness policy splits it across aspects and then items.
"""

from __future__ import annotations

import numpy as np

from fairlist.calllog import TrafficProfile
from fairlist.exposure import AspectRule, FairnessPolicy, ItemRule, SlotSchedule, build_plan
from fairlist.recommender import RecommendedPool

users = np.zeros(24)
users[18:21] = [40, 55, 30]
reach = np.array([1.0, 0.8, 0.64, 0.52, 0.42, 0.34, 0.28, 0.23, 0.19, 0.16])
traffic = TrafficProfile(users, reach)
schedule = SlotSchedule.daily(18, 21, 34, horizon_hours=100, list_length=10)

items = {"basics": ["b1", "b2", "b3", "b4", "b5", "b6"], "myths": ["m1", "m2"], "recipes": ["r1"]}
total = sum(len(v) for v in items.values())
pool = RecommendedPool("MDD", 0, {a: frozenset(v) for a, v in items.items()},
                       {a: len(v) / total for a, v in items.items()})
ratings = {"b1": 5, "b2": 3, "b3": 4, "b4": 3, "b5": 5, "b6": 4, "m1": 5, "m2": 3, "r1": 4}
print("liked-pool shares:", {a: round(b, 3) for a, b in pool.beta.items()})

for name, policy in [
    ("user preference", FairnessPolicy(AspectRule.USER_PREFERENCE)),
    ("min guarantee 0.15, equal items", FairnessPolicy(AspectRule.MIN_GUARANTEE, ItemRule.EQUAL, 0.15)),
    ("equal aspects, rating-weighted items", FairnessPolicy(AspectRule.EQUAL, ItemRule.RATING)),
]:
    plan = build_plan(policy, pool, traffic, schedule, ratings)
    print(f"\n{name}: inventory {plan.inventory:.0f} listens")
    print("  aspect shares:", {a: round(s, 3) for a, s in plan.aspect_shares.items()})
    print("  targets:", {i: round(d) for i, d in sorted(plan.targets.items())})
