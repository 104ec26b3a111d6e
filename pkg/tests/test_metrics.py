from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairlist.metrics import (
    MetricsReport,
    ReportFormat,
    build_report,
    emit_report,
    gini,
    hhi,
    lorenz_points,
    normalized_rmse,
    quartiles,
    rating_exposure_cdf,
    read_report,
)
from fairlist.ranker import RankedList
from fairlist.simulator import ExposureOutcome, ModelVariant

from oracles import hhi_from_counts, pairwise_gini

nonneg = st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=40).filter(lambda v: sum(v) > 0)


class TestGini:
    def test_equal(self):
        assert gini([5, 5, 5, 5]) == 0.0

    def test_single_holder(self):
        assert gini([1, 0, 0, 0]) == 0.75

    @pytest.mark.parametrize("n", range(2, 11))
    def test_one_hot(self, n):
        x = np.zeros(n)
        x[n // 2] = 3.0
        assert gini(x) == pytest.approx((n - 1) / n, abs=1e-15)

    @pytest.mark.parametrize("bad", [[], [0, 0], [1, -1]])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            gini(bad)

    @given(nonneg)
    def test_matches_pairwise_sum(self, x):
        assert gini(x) == pytest.approx(pairwise_gini(x), abs=1e-9)

    @given(nonneg, st.floats(1e-3, 1e3))
    def test_scale_invariant(self, x, c):
        assert gini(np.asarray(x) * c) == pytest.approx(gini(x), abs=1e-12)

    @given(nonneg)
    def test_range(self, x):
        assert 0 <= gini(x) < 1 + 1e-12


class TestLorenz:
    def test_equal(self):
        assert lorenz_points([5, 5]) == [(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]

    def test_extreme(self):
        assert lorenz_points([1, 0]) == [(0.0, 0.0), (0.5, 0.0), (1.0, 1.0)]

    @given(nonneg)
    def test_shape(self, x):
        pts = lorenz_points(x)
        assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
        xs, ys = np.array(pts).T
        assert np.all(np.diff(xs) >= 0) and np.all(np.diff(ys) >= -1e-12)
        assert np.all(ys <= xs + 1e-12)


class TestHHI:
    def test_monopoly(self):
        assert hhi(RankedList(tuple(f"i{k}" for k in range(10))), {f"i{k}": {"A"} for k in range(10)}) == 1.0

    def test_uniform_five(self):
        amap = {f"i{k}": {"ABCDE"[k // 2]} for k in range(10)}
        assert hhi([f"i{k}" for k in range(10)], amap) == 0.2

    def test_seven_three(self):
        amap = {f"i{k}": {"A" if k < 7 else "B"} for k in range(10)}
        assert hhi(list(amap), amap) == pytest.approx(0.58)

    def test_multi_aspect_slots(self):
        # slots A, B, A -> (2/3)^2 + (1/3)^2
        assert hhi(["x", "y"], {"x": {"A", "B"}, "y": {"A"}}) == pytest.approx(5 / 9)

    def test_empty(self):
        with pytest.raises(ValueError):
            hhi([], {})

    @given(st.lists(st.integers(0, 4), min_size=1, max_size=30))
    def test_bounds(self, labels):
        amap = {f"i{k}": {a} for k, a in enumerate(labels)}
        counts = np.bincount(labels)
        counts = counts[counts > 0]
        value = hhi(list(amap), amap)
        assert value == pytest.approx(hhi_from_counts(counts))
        assert value >= 1 / len(counts) - 1e-12
        if len(set(counts)) == 1:
            assert value == pytest.approx(1 / len(counts))
        else:
            assert value > 1 / len(counts)


class TestNormalizedRMSE:
    def test_two_items(self):
        assert normalized_rmse({"a": 12, "b": 8}, {"a": 10, "b": 10}) == pytest.approx(0.2)

    def test_identical(self):
        assert normalized_rmse({"a": 3, "b": 1}, {"a": 3, "b": 1}) == 0.0

    def test_missing_item_counts_zero(self):
        # union (a, b): outcome (4, 0), reference (2, 2) -> rmse 2 / mean 2
        assert normalized_rmse({"a": 4}, {"a": 2, "b": 2}) == pytest.approx(1.0)

    def test_zero_reference(self):
        with pytest.raises(ValueError):
            normalized_rmse({"a": 1}, {"a": 0})

    @given(st.lists(st.integers(0, 100), min_size=2, max_size=10), st.floats(0.1, 100))
    def test_scale_invariant(self, x, c):
        ref = {f"i{k}": v + 1 for k, v in enumerate(x)}
        out = {f"i{k}": v for k, v in enumerate(reversed(x))}
        scaled = normalized_rmse({k: c * v for k, v in out.items()}, {k: c * v for k, v in ref.items()})
        assert scaled == pytest.approx(normalized_rmse(out, ref))
        assert normalized_rmse(out, ref) >= 0


class TestRatingCDF:
    def test_one_per_rating(self):
        assert rating_exposure_cdf({"a": 4, "b": 9}, {"a": 3, "b": 5}) == {3: [(4.0, 1.0)], 5: [(9.0, 1.0)]}

    def test_zero_step(self):
        assert rating_exposure_cdf({"a": 0, "b": 0}, {"a": 4, "b": 4}) == {4: [(0.0, 0.5), (0.0, 1.0)]}

    def test_sorted(self):
        cdf = rating_exposure_cdf({"a": 9, "b": 1, "c": 5}, {"a": 3, "b": 3, "c": 3})
        assert cdf[3] == [(1.0, 1 / 3), (5.0, 2 / 3), (9.0, 1.0)]


def test_quartiles():
    assert quartiles([1, 2, 3, 4, 5]) == {"min": 1.0, "q1": 2.0, "median": 3.0, "q3": 4.0, "max": 5.0}
    assert quartiles([]) == {}


def _outcome(variant, cluster, exposure, aspects, lists):
    by_aspect: dict[str, int] = {}
    for i, x in exposure.items():
        for a in aspects[i]:
            by_aspect[a] = by_aspect.get(a, 0) + x
    return ExposureOutcome(variant, cluster, 0, dict(exposure), by_aspect,
                           [RankedList(tuple(l)) for l in lists], sum(exposure.values()))


@pytest.fixture
def outcomes():
    aspects = {"a": frozenset({"A"}), "b": frozenset({"B"}), "c": frozenset({"B"})}
    return aspects, {
        (0, ModelVariant.USER_PREFERENCE): _outcome(ModelVariant.USER_PREFERENCE, 0, {"a": 10, "b": 10, "c": 0}, aspects, [["a", "b"]]),
        (0, ModelVariant.POLICY_3C): _outcome(ModelVariant.POLICY_3C, 0, {"a": 12, "b": 4, "c": 4}, aspects, [["a", "b"], ["a", "c"]]),
        (1, ModelVariant.POLICY_3C): _outcome(ModelVariant.POLICY_3C, 1, {"a": 0, "b": 3, "c": 5}, aspects, [["b", "c"]]),
    }


class TestBuildReport:
    def test_values(self, outcomes):
        aspects, outs = outcomes
        report = build_report(outs, {"a": 3, "b": 4, "c": 5}, aspects)
        # 3c aspect totals summed over clusters: A 12, B 16
        assert report.gini_by_variant["3c"] == pytest.approx(pairwise_gini([12, 16]))
        assert report.gini_by_variant["user_pref"] == 0.0
        assert report.hhi_distribution["3c"] == [0.5, 0.5, 1.0]
        # cluster 0 against user_pref: diffs (2, -6, 4), mean ref 20/3
        assert report.nrmse_by_variant_cluster == {("3c", 0): pytest.approx(np.sqrt(56 / 3) / (20 / 3))}
        assert report.rating_cdf[("3c", 5)] == [(9.0, 1.0)]
        assert report.notices == []

    def test_missing_reference_notice(self, outcomes):
        aspects, outs = outcomes
        del outs[(0, ModelVariant.USER_PREFERENCE)]
        report = build_report(outs, {}, aspects)
        assert report.nrmse_by_variant_cluster == {}
        assert any("user_pref" in n for n in report.notices)

    def test_per_item(self, outcomes):
        aspects, outs = outcomes
        report = build_report(outs, {}, aspects, per_item_gini=True)
        assert report.gini_by_variant["3c"] == pytest.approx(pairwise_gini([12, 7, 9]))


class TestEmitReport:
    @pytest.mark.parametrize("fmt", list(ReportFormat))
    def test_round_trip(self, outcomes, tmp_path, fmt):
        aspects, outs = outcomes
        report = build_report(outs, {"a": 3, "b": 4, "c": 5}, aspects)
        emit_report(report, tmp_path, fmt, run_id="r1")
        back = read_report(tmp_path, "r1", fmt)
        assert back.gini_by_variant == report.gini_by_variant
        assert back.nrmse_by_variant_cluster == report.nrmse_by_variant_cluster
        assert back.hhi_distribution == report.hhi_distribution
        assert back.lorenz_points == report.lorenz_points
        assert back.rating_cdf == report.rating_cdf

    def test_summary_one_row_per_variant(self, outcomes, tmp_path):
        aspects, outs = outcomes
        emit_report(build_report(outs, {}, aspects), tmp_path)
        lines = (tmp_path / "run.summary.all.txt").read_text().splitlines()
        assert lines[0] == "model,description,gini,hhi_median,nrmse_mean"
        assert [l.split(",")[0] for l in lines[1:]] == ["user_pref", "3c"]

    def test_empty_report_header_only(self, tmp_path):
        emit_report(MetricsReport(), tmp_path)
        assert (tmp_path / "run.gini.all.txt").read_text() == "model,gini\n"
        assert (tmp_path / "run.summary.all.txt").read_text().count("\n") == 1

    def test_unwritable_path_has_context(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="file"):
            emit_report(MetricsReport(), blocker / "sub")
