import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semalloc.similarity import (INFINITE_PSNR, BelowTableRange, ImagePair, SimilarityTable,
                                 SurrogateParams, TableError, candidate_entries, generate_table,
                                 load_table, lookup_xi, make_grid, mse, psnr, psnr_to_similarity,
                                 save_table, surrogate_xi)

params_strategy = st.builds(
    SurrogateParams,
    compression_power=st.floats(0.2, 5),
    snr_midpoint_db=st.floats(-10, 30),
    snr_scale_db=st.floats(0.5, 10),
    floor=st.floats(0, 0.5),
)


class TestSurrogate:
    @pytest.mark.parametrize("snr_db", [-10.0, 5.0, 40.0])
    def test_full_compression_gives_floor(self, snr_db):
        assert surrogate_xi(1.0, snr_db) == pytest.approx(SurrogateParams().floor)

    def test_midpoint_oracle(self):
        p = SurrogateParams(compression_power=2, floor=0.0)
        assert surrogate_xi(0.316228, p.snr_midpoint_db, p) == pytest.approx(0.45, abs=1e-6)

    def test_high_snr_limit(self):
        p = SurrogateParams(compression_power=2, floor=0.0)
        far = p.snr_midpoint_db + 20 * p.snr_scale_db
        assert surrogate_xi(0.316228, far, p) == pytest.approx(0.9, abs=1e-4)

    @pytest.mark.parametrize("o", [0.0, -0.1, 1.1])
    def test_rejects_compression(self, o):
        with pytest.raises(ValueError):
            surrogate_xi(o, 10.0)

    @settings(max_examples=1000, deadline=None)
    @given(params_strategy, st.floats(0.01, 0.99), st.floats(0.01, 0.99),
           st.floats(-20, 50), st.floats(-20, 50))
    def test_monotone(self, params, o1, o2, s1, s2):
        o_lo, o_hi = sorted((o1, o2))
        s_lo, s_hi = sorted((s1, s2))
        assert surrogate_xi(o_hi, s_lo, params) <= surrogate_xi(o_lo, s_lo, params) + 1e-15
        assert surrogate_xi(o_lo, s_hi, params) >= surrogate_xi(o_lo, s_lo, params) - 1e-15
        assert 0 <= surrogate_xi(o_lo, s_lo, params) <= 1

    def test_params_validated(self):
        with pytest.raises(ValueError):
            SurrogateParams(floor=1.0)


class TestGrid:
    def test_default_grid_sizes(self):
        assert make_grid(-10, 40, 1).size == 51
        assert make_grid(-10, 40, 0.5).size == 101
        comp = make_grid(0.05, 1.0, 0.05)
        assert comp.size == 20 and comp[-1] == 1.0 and comp[2] == 0.15

    def test_bad_step(self):
        with pytest.raises(TableError):
            make_grid(0, 1, 0)


class TestTable:
    def test_default_shape_and_monotone(self):
        t = generate_table()
        assert t.shape == (51, 20)
        assert t.is_monotone()

    def test_small_grid_matches_pointwise(self):
        t = generate_table([0.0, 10.0], [0.5, 1.0])
        for i, s in enumerate([0.0, 10.0]):
            for j, o in enumerate([0.5, 1.0]):
                assert t.xi_values[i, j] == surrogate_xi(o, s)

    def test_roundtrip(self):
        t = generate_table()
        again = load_table(save_table(t))
        np.testing.assert_array_equal(again.snr_grid_db, t.snr_grid_db)
        np.testing.assert_array_equal(again.compression_grid, t.compression_grid)
        np.testing.assert_allclose(again.xi_values, t.xi_values, atol=5e-7)
        assert save_table(again) == save_table(t)

    def test_out_of_range_cell(self):
        with pytest.raises(TableError, match="similarity out of range"):
            SimilarityTable([0.0], [0.5], [[1.2]])

    def test_descending_snr(self):
        with pytest.raises(TableError, match="grid not ascending"):
            SimilarityTable([1.0, 0.0], [0.5], [[0.5], [0.4]])

    @pytest.mark.parametrize("text,msg", [
        ("snr_db\\O,0.5\n0,0.3,0.4\n", "ragged"),
        ("snr_db\\O,0.5\n0,abc\n", "non-numeric"),
        ("x,0.5\n0,0.3\n", "first cell"),
        ("snr_db\\O,0.5\n", "at least one row"),
    ])
    def test_load_errors(self, text, msg):
        with pytest.raises(TableError, match=msg):
            load_table(text)


class TestLookup:
    table = generate_table()

    def test_exact_grid_point(self):
        assert lookup_xi(self.table, 22.0, 0.4) == self.table.xi_values[32, 7]

    def test_floor_rule(self):
        assert self.table.row_index(22.7) == self.table.row_index(22.0)
        assert lookup_xi(self.table, 22.7, 0.4) == lookup_xi(self.table, 22.0, 0.4)

    def test_below_range(self):
        with pytest.raises(BelowTableRange):
            lookup_xi(self.table, -20.0, 0.5)

    def test_above_range_uses_top_row(self):
        assert self.table.row_index(80.0) == 50

    def test_nearest_column(self):
        assert self.table.column_index(0.41) == self.table.column_index(0.4)


class TestCandidates:
    table = SimilarityTable([0.0, 10.0], [0.2, 0.4, 0.6, 0.8],
                            [[0.5, 0.4, 0.3, 0.2], [0.95, 0.85, 0.70, 0.40]])

    def test_band_filter(self):
        assert candidate_entries(self.table, 10.0, 0.6, 0.9) == [(0.85, 0.4), (0.70, 0.6)]

    def test_empty_band(self):
        assert candidate_entries(self.table, 10.0, 0.99, 1.0) == []

    def test_whole_row(self):
        got = candidate_entries(self.table, 10.0, 0.0, 1.0)
        assert [x for x, _ in got] == [0.95, 0.85, 0.70, 0.40]

    @given(st.floats(-10, 40), st.floats(0, 1), st.floats(0, 1))
    def test_ordering(self, snr_db, a, b):
        lo, hi = sorted((a, b))
        got = candidate_entries(generate_table(), snr_db, lo, hi)
        assert all(lo <= x <= hi for x, _ in got)
        assert [x for x, _ in got] == sorted((x for x, _ in got), reverse=True)


class TestImageMetrics:
    def test_identical(self):
        img = np.full((4, 4), 100.0)
        pair = ImagePair(img, img.copy())
        assert mse(pair) == 0.0
        assert psnr(pair) == INFINITE_PSNR

    def test_all_differ(self):
        pair = ImagePair(np.zeros((3, 3)), np.full((3, 3), 255.0))
        assert mse(pair) == 65025.0
        assert psnr(pair) == 0.0

    def test_half_differ(self):
        src = np.zeros((2, 4))
        rec = src.copy()
        rec[0] = 10.0
        assert mse(ImagePair(src, rec)) == 50.0

    def test_forty_db(self):
        # MSE 6.5025: every pixel off by sqrt(6.5025) = 2.55
        pair = ImagePair(np.zeros((2, 2)), np.full((2, 2), 2.55))
        assert mse(pair) == pytest.approx(6.5025)
        assert psnr(pair) == pytest.approx(40.0, abs=1e-9)

    def test_shape_and_range(self):
        with pytest.raises(ValueError):
            ImagePair(np.zeros(3), np.zeros(4))
        with pytest.raises(ValueError):
            ImagePair(np.zeros(3), np.full(3, 300.0))

    @pytest.mark.parametrize("db,xi", [(25.0, 0.5), (60.0, 1.0), (0.0, 0.0), (INFINITE_PSNR, 1.0)])
    def test_psnr_to_similarity(self, db, xi):
        assert psnr_to_similarity(db, 50.0) == xi

    @given(st.floats(0.5, 10), st.floats(1.5, 10))
    def test_psnr_drops_twenty_db_per_error_decade(self, offset, k):
        src = np.full((2, 3), 100.0)
        a = psnr(ImagePair(src, src + offset))
        b = psnr(ImagePair(src, src + k * offset))
        assert a - b == pytest.approx(20 * math.log10(k))
