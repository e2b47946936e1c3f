from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from semalloc.allocator import AllocationResult, UserAllocation, dropped_allocation
from semalloc.metrics import (ALL_SERVED, SweepRow, average_similarity, fig1_csv, fig2_csv,
                              fig3_csv, per_user_report, read_csv_rows, satisfied_count)
from semalloc.scenario import UserProfile


def alloc(uid, xi, satisfied=True):
    return UserAllocation(uid, 1e6, 0.5, 0.5, xi, 1e3, 0.1, satisfied)


def result(*allocs, method="proposed"):
    return AllocationResult(tuple(allocs), (1.0,), 1, True, method)


def profile(uid, lo=0.6, hi=0.9):
    return UserProfile(uid, 10.0, 4e6, 100.0, lo, hi, 5e-4, 1e6)


class TestCounts:
    def test_all_satisfied(self):
        assert satisfied_count(result(*(alloc(i, 0.8) for i in range(10)))) == 10

    def test_empty_service(self):
        assert satisfied_count(result(*(dropped_allocation(i) for i in range(3)))) == 0

    @given(st.lists(st.booleans(), min_size=1, max_size=20), st.data())
    def test_flag_flip_adds_one(self, flags, data):
        res = result(*(alloc(i, 0.7, f) for i, f in enumerate(flags)))
        off = [i for i, f in enumerate(flags) if not f]
        if not off:
            return
        k = data.draw(st.sampled_from(off))
        per = list(res.per_user)
        per[k] = replace(per[k], satisfied=True)
        assert satisfied_count(replace(res, per_user=tuple(per))) == satisfied_count(res) + 1


class TestAverage:
    def test_mean(self):
        assert average_similarity(result(alloc(0, 0.8), alloc(1, 0.6))) == pytest.approx(0.7)

    def test_absent(self):
        assert average_similarity(result(alloc(0, 0.8, False))) is None

    def test_all_served_scope(self):
        res = result(alloc(0, 0.8), alloc(1, 0.4, False), dropped_allocation(2))
        assert average_similarity(res) == pytest.approx(0.8)
        assert average_similarity(res, ALL_SERVED) == pytest.approx(0.6)

    def test_bad_scope(self):
        with pytest.raises(ValueError):
            average_similarity(result(alloc(0, 0.8)), "everyone")

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=15))
    def test_bounded_by_extremes(self, xs):
        avg = average_similarity(result(*(alloc(i, x) for i, x in enumerate(xs))))
        assert min(xs) - 1e-12 <= avg <= max(xs) + 1e-12


class TestReport:
    def test_rows(self):
        res = result(alloc(0, 0.8), dropped_allocation(1))
        rows = per_user_report(res, [profile(0, 0.7, 0.85), profile(1)])
        assert len(rows) == 2
        assert rows[0] == (0, "proposed", 0.8, 0.7, 0.85, True)
        assert rows[1].xi == 0.0 and not rows[1].satisfied

    def test_id_mismatch(self):
        with pytest.raises(ValueError):
            per_user_report(result(alloc(0, 0.8)), [profile(1)])


class TestCsv:
    rows = [SweepRow(9e6, "strict", 1, 7, 0.81, 3.2, 12.0),
            SweepRow(8e6, "strict", 0, 6, None, 3.0, 11.0),
            SweepRow(8e6, "proposed", 0, None, None, None, 5.0, "infeasible:max_iterations")]

    def test_fig1_sorted(self):
        parsed = read_csv_rows(fig1_csv(self.rows))
        assert [(r["method"], r["bandwidth_hz"], r["seed"]) for r in parsed] == [
            ("proposed", "8000000.0", "0"), ("strict", "8000000.0", "0"), ("strict", "9000000.0", "1")]
        assert parsed[0]["satisfied_count"] == "" and parsed[0]["status"].startswith("infeasible")

    def test_fig3_blank_when_absent(self):
        parsed = read_csv_rows(fig3_csv(self.rows))
        assert parsed[1]["avg_similarity"] == "" and parsed[2]["avg_similarity"] == "0.81"

    def test_fig2(self):
        res = result(alloc(0, 0.8))
        text = fig2_csv(per_user_report(res, [profile(0)]))
        assert text.splitlines() == ["user_id,method,xi,xi_min,xi_max,satisfied", "0,proposed,0.8,0.6,0.9,1"]

    def test_runtime_not_written(self):
        assert "12.0" not in fig1_csv(self.rows) + fig3_csv(self.rows)
