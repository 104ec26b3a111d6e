"""Fairness, diversity and satisfaction-deviation metrics, and report files."""

from __future__ import annotations

import csv
import enum
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Collection, Iterable, Mapping, Sequence

import numpy as np

from .ranker import RankedList
from .simulator import ExposureOutcome, ModelVariant


def gini(values: Sequence[float]) -> float:
    """Mean absolute difference over all ordered pairs, divided by twice the mean.

    Evaluated through the sorted-rank identity, which equals the pairwise
    sum ``sum_ij |x_i - x_j| / (2 n sum x)``.
    """
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise ValueError("gini of an empty sequence")
    if np.any(x < 0):
        raise ValueError("gini needs non-negative values")
    total = x.sum()
    if total == 0:
        raise ValueError("gini undefined when every value is zero")
    n = x.size
    ranks = np.arange(1, n + 1)
    return float(np.sum((2 * ranks - n - 1) * x) / (n * total))


def lorenz_points(values: Sequence[float]) -> list[tuple[float, float]]:
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0 or np.any(x < 0) or x.sum() == 0:
        raise ValueError("lorenz curve needs non-negative values, not all zero")
    cum = np.cumsum(x) / x.sum()
    n = x.size
    pts = [(0.0, 0.0)] + [((k + 1) / n, float(c)) for k, c in enumerate(cum)]
    pts[-1] = (1.0, 1.0)
    return pts


def hhi(ranked: RankedList | Sequence[str], aspect_map: Mapping[str, Collection[str]]) -> float:
    """Sum of squared aspect shares; each item contributes one slot per aspect."""
    items = ranked.positions if isinstance(ranked, RankedList) else tuple(ranked)
    if not items:
        raise ValueError("hhi of an empty list")
    slots = Counter(a for i in items for a in aspect_map[i])
    total = sum(slots.values())
    # integer numerator keeps uniform splits exact
    return sum(c * c for c in slots.values()) / (total * total)


def normalized_rmse(outcome: Mapping[str, float] | ExposureOutcome, reference: Mapping[str, float] | ExposureOutcome) -> float:
    """RMSE of per-item exposure against ``reference``, over the reference's mean.

    Items missing from one side count as zero exposure there.
    """
    a = outcome.exposure_by_item if isinstance(outcome, ExposureOutcome) else outcome
    b = reference.exposure_by_item if isinstance(reference, ExposureOutcome) else reference
    items = sorted(set(a) | set(b))
    x = np.array([a.get(i, 0) for i in items], dtype=float)
    r = np.array([b.get(i, 0) for i in items], dtype=float)
    if not items or r.mean() == 0:
        raise ValueError("reference mean exposure is zero")
    return float(np.sqrt(np.mean((x - r) ** 2)) / r.mean())


def rating_exposure_cdf(
    outcome: ExposureOutcome | Mapping[str, float], ratings: Mapping[str, int]
) -> dict[int, list[tuple[float, float]]]:
    """Per rating class: sorted item exposures with the cumulative item fraction."""
    exposure = outcome.exposure_by_item if isinstance(outcome, ExposureOutcome) else outcome
    by_rating: dict[int, list[float]] = defaultdict(list)
    for item, x in exposure.items():
        if item in ratings:
            by_rating[ratings[item]].append(float(x))
    out = {}
    for r in sorted(by_rating):
        xs = sorted(by_rating[r])
        out[r] = [(x, (k + 1) / len(xs)) for k, x in enumerate(xs)]
    return out


def quartiles(values: Sequence[float]) -> dict[str, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {}
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return dict(zip(("min", "q1", "median", "q3", "max"), (float(x) for x in q)))


@dataclass
class MetricsReport:
    gini_by_variant: dict[str, float] = field(default_factory=dict)
    lorenz_points: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    hhi_distribution: dict[str, list[float]] = field(default_factory=dict)
    nrmse_by_variant_cluster: dict[tuple[str, int], float] = field(default_factory=dict)
    rating_cdf: dict[tuple[str, int], list[tuple[float, float]]] = field(default_factory=dict)
    notices: list[str] = field(default_factory=list)

    def hhi_summary(self, variant: str) -> dict[str, float]:
        return quartiles(self.hhi_distribution.get(variant, []))


def _aspect_totals(outcomes: Iterable[ExposureOutcome]) -> dict[str, float]:
    totals: dict[str, float] = defaultdict(float)
    for o in outcomes:
        for a, x in o.exposure_by_aspect.items():
            totals[a] += x
    return dict(totals)


def build_report(
    outcomes: Mapping[tuple[int, ModelVariant], ExposureOutcome],
    ratings: Mapping[str, int],
    aspect_map: Mapping[str, Collection[str]],
    per_item_gini: bool = False,
) -> MetricsReport:
    """Aggregate comparison metrics over every simulated cluster.

    Gini and Lorenz use per-aspect exposure totals summed over clusters
    (per-item exposure with ``per_item_gini``). NRMSE is per cluster, against
    that cluster's ``user_pref`` outcome.
    """
    report = MetricsReport()
    by_variant: dict[ModelVariant, list[ExposureOutcome]] = defaultdict(list)
    for (_, v), o in sorted(outcomes.items(), key=lambda t: (t[0][0], t[0][1].value)):
        by_variant[v].append(o)

    for v in sorted(by_variant, key=lambda v: list(ModelVariant).index(v)):
        group = by_variant[v]
        name = v.value
        if per_item_gini:
            values: dict[str, float] = defaultdict(float)
            for o in group:
                for i, x in o.exposure_by_item.items():
                    values[i] += x
        else:
            values = _aspect_totals(group)
        vals = [values[k] for k in sorted(values)]
        if vals and sum(vals) > 0:
            report.gini_by_variant[name] = gini(vals)
            report.lorenz_points[name] = lorenz_points(vals)
        else:
            report.notices.append(f"{name}: no exposure recorded; gini skipped")
        report.hhi_distribution[name] = [hhi(l, aspect_map) for o in group for l in o.lists_generated if len(l)]
        combined: dict[str, float] = defaultdict(float)
        for o in group:
            for i, x in o.exposure_by_item.items():
                combined[i] += x
        for r, pts in rating_exposure_cdf(dict(combined), ratings).items():
            report.rating_cdf[(name, r)] = pts

    refs = {c: o for (c, v), o in outcomes.items() if v is ModelVariant.USER_PREFERENCE}
    if not refs:
        if outcomes:
            report.notices.append("user_pref outcome missing: normalized RMSE not computed")
    for (c, v), o in sorted(outcomes.items(), key=lambda t: (t[0][0], t[0][1].value)):
        if v is ModelVariant.USER_PREFERENCE or c not in refs:
            continue
        try:
            report.nrmse_by_variant_cluster[(v.value, c)] = normalized_rmse(o, refs[c])
        except ValueError as err:
            report.notices.append(f"{v.value}/cluster {c}: {err}")
    return report


# -- report files -----------------------------------------------------------------


class ReportFormat(str, enum.Enum):
    DELIMITED = "delimited"
    STRUCTURED = "structured"


_DESCRIPTIONS = {
    "random": "Random selection (baseline)",
    "manual": "Manual moderation",
    "user_pref": "User preferences",
    "3a": "Aspect(min guarantee), Item(equal exposure)",
    "3b": "Aspect(min guarantee), Item(exposure proportional to rating)",
    "3c": "Aspect(equal exposure), Item(equal exposure)",
    "3d": "Aspect(equal exposure), Item(exposure proportional to rating)",
}


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as err:
        raise OSError(f"cannot write report file {path}: {err}") from err
    return path


def _num(x: float) -> str:
    return repr(float(x))


def emit_report(
    report: MetricsReport,
    path: str | Path,
    fmt: ReportFormat | str = ReportFormat.DELIMITED,
    run_id: str = "run",
) -> list[Path]:
    """Write one file per metric family and variant plus a summary table.

    Files are named ``<run-id>.<metric>.<variant>.txt``; the summary uses
    ``all`` as its variant part.
    """
    fmt = ReportFormat(fmt)
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OSError(f"cannot create report directory {out}: {err}") from err
    written: list[Path] = []
    variants = sorted(
        set(report.gini_by_variant) | set(report.hhi_distribution) | {v for v, _ in report.nrmse_by_variant_cluster},
        key=lambda v: list(_DESCRIPTIONS).index(v) if v in _DESCRIPTIONS else 99,
    )

    if fmt is ReportFormat.STRUCTURED:
        data = {
            "gini": report.gini_by_variant,
            "lorenz": {v: [list(p) for p in pts] for v, pts in report.lorenz_points.items()},
            "hhi": {v: {"values": vals, "summary": quartiles(vals)} for v, vals in report.hhi_distribution.items()},
            "nrmse": [[v, c, x] for (v, c), x in sorted(report.nrmse_by_variant_cluster.items())],
            "rating_cdf": [[v, r, [list(p) for p in pts]] for (v, r), pts in sorted(report.rating_cdf.items())],
            "notices": report.notices,
        }
        target = out / f"{run_id}.report.all.txt"
        try:
            target.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
        except OSError as err:
            raise OSError(f"cannot write report file {target}: {err}") from err
        return [target]

    summary_rows = []
    for v in variants:
        hs = report.hhi_summary(v)
        nr = [x for (vv, _), x in sorted(report.nrmse_by_variant_cluster.items()) if vv == v]
        summary_rows.append(
            [
                v,
                _DESCRIPTIONS.get(v, v),
                _num(report.gini_by_variant[v]) if v in report.gini_by_variant else "",
                _num(hs["median"]) if hs else "",
                _num(float(np.mean(nr))) if nr else "",
            ]
        )
    written.append(
        _write_rows(out / f"{run_id}.summary.all.txt", ["model", "description", "gini", "hhi_median", "nrmse_mean"], summary_rows)
    )
    for v in variants:
        if v in report.lorenz_points:
            written.append(
                _write_rows(out / f"{run_id}.lorenz.{v}.txt", ["population_fraction", "exposure_fraction"],
                            ([_num(a), _num(b)] for a, b in report.lorenz_points[v]))
            )
        written.append(
            _write_rows(out / f"{run_id}.hhi.{v}.txt", ["list_index", "hhi"],
                        ([k, _num(x)] for k, x in enumerate(report.hhi_distribution.get(v, []))))
        )
        cdf_rows = [[r, _num(x), _num(f)] for (vv, r), pts in sorted(report.rating_cdf.items()) if vv == v for x, f in pts]
        written.append(_write_rows(out / f"{run_id}.rating_cdf.{v}.txt", ["rating", "exposure", "cumulative_fraction"], cdf_rows))
    written.append(
        _write_rows(out / f"{run_id}.gini.all.txt", ["model", "gini"],
                    ([v, _num(report.gini_by_variant[v])] for v in variants if v in report.gini_by_variant))
    )
    written.append(
        _write_rows(out / f"{run_id}.nrmse.all.txt", ["model", "cluster", "nrmse"],
                    ([v, c, _num(x)] for (v, c), x in sorted(report.nrmse_by_variant_cluster.items())))
    )
    if report.notices:
        (out / f"{run_id}.notices.all.txt").write_text("\n".join(report.notices) + "\n")
        written.append(out / f"{run_id}.notices.all.txt")
    return written


def _rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_report(path: str | Path, run_id: str = "run", fmt: ReportFormat | str = ReportFormat.DELIMITED) -> MetricsReport:
    """Load files written by :func:`emit_report` back into a report."""
    out = Path(path)
    fmt = ReportFormat(fmt)
    report = MetricsReport()
    if fmt is ReportFormat.STRUCTURED:
        data = json.loads((out / f"{run_id}.report.all.txt").read_text())
        report.gini_by_variant = dict(data["gini"])
        report.lorenz_points = {v: [tuple(p) for p in pts] for v, pts in data["lorenz"].items()}
        report.hhi_distribution = {v: d["values"] for v, d in data["hhi"].items()}
        report.nrmse_by_variant_cluster = {(v, c): x for v, c, x in data["nrmse"]}
        report.rating_cdf = {(v, r): [tuple(p) for p in pts] for v, r, pts in data["rating_cdf"]}
        report.notices = list(data["notices"])
        return report

    for row in _rows(out / f"{run_id}.gini.all.txt"):
        report.gini_by_variant[row["model"]] = float(row["gini"])
    for row in _rows(out / f"{run_id}.nrmse.all.txt"):
        report.nrmse_by_variant_cluster[(row["model"], int(row["cluster"]))] = float(row["nrmse"])
    for v in [r["model"] for r in _rows(out / f"{run_id}.summary.all.txt")]:
        lor = out / f"{run_id}.lorenz.{v}.txt"
        if lor.exists():
            report.lorenz_points[v] = [(float(r["population_fraction"]), float(r["exposure_fraction"])) for r in _rows(lor)]
        report.hhi_distribution[v] = [float(r["hhi"]) for r in _rows(out / f"{run_id}.hhi.{v}.txt")]
        for r in _rows(out / f"{run_id}.rating_cdf.{v}.txt"):
            report.rating_cdf.setdefault((v, int(r["rating"])), []).append(
                (float(r["exposure"]), float(r["cumulative_fraction"]))
            )
    notices = out / f"{run_id}.notices.all.txt"
    if notices.exists():
        report.notices = notices.read_text().splitlines()
    return report
