"""
Finding listener groups
=======================

Builds preference vectors from a synthetic call log, keeps the engaged
listeners and clusters them with k-prototypes, choosing k at the elbow of
the within/between cost ratio.
"""

from __future__ import annotations

from collections import defaultdict

from fairlist.calllog import label_sessions
from fairlist.simulator import SyntheticWorkloadSpec, generate_synthetic
from fairlist.users import FilterThresholds, build_preference_vector, elbow_select_k, filter_engaged_users, user_activity

w = generate_synthetic(SyntheticWorkloadSpec(num_users=150, hours=240, num_clusters=3, callers_per_hour=25), seed=2)
labeled = label_sessions(w.sessions)
by_user = defaultdict(list)
for event, label in labeled:
    by_user[event.caller_id].append((event, label))

activity = user_activity(w.sessions, by_user)
everyone = build_preference_vector(labeled)
engaged = filter_engaged_users(activity, FilterThresholds(), everyone)
print(f"{len(activity)} callers, {len(engaged)} kept by the engagement filter")

vectors = {u: activity[u].vector for u in engaged}
elbow = elbow_select_k(vectors, range(2, 8), seed=0)
for k, cost in zip(elbow.ks, elbow.costs):
    print(f"k={k}: cost ratio {cost:.3f}{'  <- elbow' if k == elbow.k else ''}")

fit = elbow.fits[elbow.k]
for c in range(fit.k):
    members = fit.members(c)
    true = defaultdict(int)
    for u in members:
        true[w.user_clusters[u]] += 1
    print(f"cluster {c}: {len(members)} users, generating groups {dict(sorted(true.items()))}")
