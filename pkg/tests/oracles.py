"""Independent reference implementations used to freeze expected values."""

from __future__ import annotations

import math
from fractions import Fraction


def exact_bound(share: Fraction, p: int) -> int:
    """ceil(p * share) in exact integer arithmetic."""
    return -(-p * share.numerator // share.denominator)


def feasible_first(pool, aspects, shares, n):
    """Rank-by-rank scan: take the first unpicked item that keeps every prefix p >= j in bounds.

    ``shares`` maps aspect to a Fraction. Returns (order, fallback positions).
    """
    remaining = list(pool)
    order, fallback = [], set()
    n = min(n, len(pool))
    labels = set().union(*(set(aspects[i]) for i in pool))
    bound = {a: [exact_bound(shares.get(a, Fraction(0)), p) for p in range(n + 1)] for a in labels}
    for j in range(1, n + 1):
        chosen = None
        for item in remaining:
            trial = order + [item]
            ok = True
            for a in aspects[item]:
                count = sum(1 for x in trial if a in aspects[x])
                for p in range(j, n + 1):
                    if count > bound[a][p]:
                        ok = False
            if ok:
                chosen = item
                break
        if chosen is None:
            chosen = remaining[0]
            fallback.add(j)
        remaining.remove(chosen)
        order.append(chosen)
    return order, fallback


def pairwise_gini(x):
    """Sum over all ordered pairs |xi - xj| / (2 n^2 mean)."""
    x = [float(v) for v in x]
    n = len(x)
    mean = sum(x) / n
    return sum(abs(a - b) for a in x for b in x) / (2 * n * n * mean)


def hhi_from_counts(counts):
    total = sum(counts)
    return sum((c / total) ** 2 for c in counts)


def kl(p, q):
    return sum(a * math.log(a / b) for a, b in zip(p, q))


def iterative_min_guarantee(beta, m):
    """Lift shares below m to m and rescale the rest, repeating; plain-Python loop."""
    raised = set()
    while True:
        base = sum(b for k, b in beta.items() if k not in raised)
        rest = 1 - m * len(raised)
        shares = {k: (m if k in raised else b * rest / base) for k, b in beta.items()}
        low = {k for k, s in shares.items() if s < m and k not in raised}
        if not low:
            return shares
        raised |= low

