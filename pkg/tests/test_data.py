import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stkd.data import (TrafficSeries, generate_synthetic, load_readings_csv,
                       make_windows, save_readings_csv, zscore_fit_apply)
from stkd.errors import DataError, FormatError, ParameterError
from stkd.graph import Graph, erdos_renyi_geometric


def _ring(n):
    return Graph.from_edge_list(n, [(i, (i + 1) % n, 1.0) for i in range(n)])


class TestSyntheticGenerator:
    def test_same_seed_bitwise_identical(self):
        g = erdos_renyi_geometric(15, 0.5, 2)
        a = generate_synthetic(g, 300, 5, seed=9)
        b = generate_synthetic(g, 300, 5, seed=9)
        assert (a.values == b.values).all()

    def test_spatially_constant_fixed_point_on_regular_graph(self):
        # no diurnal, no noise, constant start: averaging on a regular graph
        # keeps every step spatially constant
        g = _ring(8)
        s = generate_synthetic(g, 50, 5, seed=1, beta_range=(0.0, 0.0), gamma=0.0,
                               x0=np.full(8, 2.0))
        spread = s.values.max(axis=1) - s.values.min(axis=1)
        assert spread.max() <= 1e-12

    def test_diurnal_autocorrelation_dominates_at_full_day_lag(self):
        g = erdos_renyi_geometric(20, 0.5, 4)
        s = generate_synthetic(g, 2016, 5, seed=4)
        spd = s.steps_per_day
        for node in range(s.n_nodes):
            x = s.values[:, node]
            x = x - x.mean()

            def acf(lag):
                return float(np.dot(x[:-lag], x[lag:]) / np.dot(x, x))

            assert acf(spd) > acf(spd // 2)

    def test_non_negative_everywhere(self):
        g = erdos_renyi_geometric(12, 0.5, 6)
        s = generate_synthetic(g, 500, 5, seed=6)
        assert (s.values >= 0.0).all()

    def test_bad_steps(self):
        g = _ring(4)
        with pytest.raises(ParameterError):
            generate_synthetic(g, 0, 5, seed=1)
        with pytest.raises(ParameterError):
            generate_synthetic(g, 10, 7, seed=1)  # 7 does not divide a day


class TestReadingsCsv:
    def test_well_formed_shape(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("timestamp,node_0,node_1\n0,1.0,2.0\n5,3.0,4.0\n10,5.0,6.0\n")
        s = load_readings_csv(path)
        assert s.values.shape == (3, 2)
        assert s.step_minutes == 5
        assert s.fill_count == 0

    def test_nan_forward_fill_counted(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("timestamp,node_0\n0,1.5\n5,nan\n10,2.0\n")
        s = load_readings_csv(path)
        assert s.values[:, 0].tolist() == [1.5, 1.5, 2.0]
        assert s.fill_count == 1

    def test_leading_nan_zero_filled(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("timestamp,node_0\n0,nan\n5,2.0\n")
        s = load_readings_csv(path)
        assert s.values[:, 0].tolist() == [0.0, 2.0]
        assert s.fill_count == 1

    def test_ragged_row_names_line_number(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("timestamp,node_0,node_1\n0,1.0,2.0\n5,3.0\n")
        with pytest.raises(FormatError, match="line 3"):
            load_readings_csv(path)

    def test_non_monotone_timestamps(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("timestamp,node_0\n10,1.0\n5,2.0\n")
        with pytest.raises(DataError, match="increasing"):
            load_readings_csv(path)

    def test_bad_node_names(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("timestamp,node_1,node_0\n0,1.0,2.0\n")
        with pytest.raises(FormatError):
            load_readings_csv(path)

    def test_round_trip_of_generated_series(self, tmp_path):
        g = erdos_renyi_geometric(10, 0.5, 8)
        s = generate_synthetic(g, 120, 5, seed=8)
        path = tmp_path / "r.csv"
        save_readings_csv(s, path)
        loaded = load_readings_csv(path)
        assert loaded.step_minutes == s.step_minutes
        assert np.abs(loaded.values - s.values).max() <= 1e-9


class TestWindows:
    def test_count_example(self):
        s = TrafficSeries(values=np.random.default_rng(0).random((100, 3)), step_minutes=5)
        ds = make_windows(s, 12, 3)
        assert ds.n_windows == 86

    def test_first_target_is_step_history(self):
        vals = np.arange(40, dtype=np.float64)[:, None]
        s = TrafficSeries(values=vals, step_minutes=5)
        ds = make_windows(s, 12, 3)
        assert ds.targets[0, 0, 0] == vals[12, 0]
        assert ds.target_start_step(0) == 12

    @given(st.integers(2, 50), st.integers(1, 6), st.integers(1, 6))
    @settings(max_examples=200, deadline=None)
    def test_count_formula_exhaustive(self, t_total, t_h, t_p):
        vals = np.random.default_rng(1).random((t_total, 2))
        s = TrafficSeries(values=vals, step_minutes=5)
        if t_total - t_h - t_p + 1 < 1:
            with pytest.raises(DataError):
                make_windows(s, t_h, t_p)
        else:
            ds = make_windows(s, t_h, t_p)
            assert ds.n_windows == t_total - t_h - t_p + 1

    def test_window_contents_and_split_membership(self):
        vals = np.arange(60, dtype=np.float64)[:, None]
        s = TrafficSeries(values=vals, step_minutes=5)
        ds = make_windows(s, 5, 2)
        tagged = set()
        for split in (ds.train_indices, ds.val_indices, ds.test_indices):
            for w in split:
                # exact index arithmetic for every window
                assert ds.inputs[w, :, 0].tolist() == list(range(w, w + 5))
                assert ds.targets[w, :, 0].tolist() == list(range(w + 5, w + 7))
                assert w not in tagged  # each window in exactly one split
                tagged.add(w)
        assert tagged == set(range(ds.n_windows))

    def test_splits_are_ordered_and_contiguous(self):
        s = TrafficSeries(values=np.random.default_rng(2).random((200, 2)), step_minutes=5)
        ds = make_windows(s, 12, 3)
        assert max(ds.train_indices) < min(ds.val_indices) < min(ds.test_indices)
        assert list(ds.train_indices) + list(ds.val_indices) + list(ds.test_indices) \
            == list(range(ds.n_windows))

    def test_windowing_is_lossless(self):
        rng = np.random.default_rng(3)
        vals = rng.random((50, 4))
        s = TrafficSeries(values=vals, step_minutes=5)
        ds = make_windows(s, 8, 2)
        # stride-1 inputs reconstruct the covered region exactly
        recon = np.vstack([ds.inputs[w, 0] for w in range(ds.n_windows)] +
                          [ds.inputs[-1, 1:]])
        assert (recon == vals[:ds.n_windows + 7]).all()

    def test_bad_splits(self):
        s = TrafficSeries(values=np.random.default_rng(4).random((50, 2)), step_minutes=5)
        with pytest.raises(ParameterError):
            make_windows(s, 5, 2, splits=(0.5, 0.2, 0.2))


class TestNormalizer:
    def test_train_split_becomes_standard(self):
        g = erdos_renyi_geometric(10, 0.5, 12)
        s = generate_synthetic(g, 300, 5, seed=12)
        ds = make_windows(s, 12, 3)
        nz, out = zscore_fit_apply(ds)
        train_vals = np.concatenate([out.inputs[:out.n_train].ravel(),
                                     out.targets[:out.n_train].ravel()])
        assert abs(train_vals.mean()) <= 1e-9
        assert abs(train_vals.std() - 1.0) <= 1e-9

    def test_round_trip_identity(self):
        g = erdos_renyi_geometric(10, 0.5, 13)
        s = generate_synthetic(g, 200, 5, seed=13)
        ds = make_windows(s, 12, 3)
        nz, out = zscore_fit_apply(ds)
        assert np.abs(nz.invert(nz.apply(ds.inputs)) - ds.inputs).max() <= 1e-12
        assert np.abs(nz.invert(out.inputs) - ds.inputs).max() <= 1e-12

    def test_constant_series_is_error(self):
        s = TrafficSeries(values=np.full((60, 2), 3.0), step_minutes=5)
        ds = make_windows(s, 5, 2)
        with pytest.raises(DataError):
            zscore_fit_apply(ds)

    @given(st.floats(0.1, 100.0), st.floats(-50.0, 50.0))
    @settings(max_examples=30, deadline=None)
    def test_apply_invert_identity_property(self, scale, shift):
        from stkd.data import Normalizer
        nz = Normalizer(mean=shift, std=scale)
        x = np.linspace(-5, 5, 23)
        assert np.abs(nz.invert(nz.apply(x)) - x).max() <= 1e-12
