"""
Diversity-bounded ranking in a few lines
========================================

A pool of ten items, most of them about one aspect. A plain sort by
utility would fill the list with that aspect; the greedy ranker caps each
aspect at ceil(p * share) items in every top-p prefix.
"""

from __future__ import annotations

from fairlist.ranker import check_constraints, derive_constraints, short_term_diversity, sort_by_utility

aspects = {f"b{k}": {"basics"} for k in range(6)}
aspects.update({"m0": {"myths"}, "m1": {"myths"}, "r0": {"recipes"}, "r1": {"recipes"}})
utility = {i: 10 - k for k, i in enumerate(aspects)}

ordered = sort_by_utility(aspects, utility)
print("plain sort:   ", " ".join(ordered[:6]))

# equal shares over three aspects: at most 1 per aspect in the top 3, 2 in the top 6
constraints = derive_constraints({"basics": 1 / 3, "myths": 1 / 3, "recipes": 1 / 3}, 6)
ranked = short_term_diversity(ordered, aspects, constraints)
print("bounded list: ", " ".join(ranked.positions))
print("fallback positions:", sorted(ranked.fallback) or "none")

# with only two myths items and a list of 9, later ranks run out of options
tight = derive_constraints({"basics": 0.2, "myths": 0.4, "recipes": 0.4}, 9)
ranked = short_term_diversity(ordered, aspects, tight)
print("tight list:   ", " ".join(ranked.positions))
print("fallback positions:", sorted(ranked.fallback))
print("violations outside fallback:", check_constraints(ranked, tight, aspects).violations)
