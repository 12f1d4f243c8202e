"""Splits, scaling and windowing against hand values and the enumeration oracle."""

import math

import numpy as np
import pytest

from oracles import window_count_formula, windows_by_enumeration
from slice_forecast.datasetgen import (DatasetError, apply_scaler, build_splits,
                                       drop_train_constant_columns, export_csv,
                                       fit_scaler, import_csv, inverse_scaler,
                                       make_windows, time_split)
from slice_forecast.telemetry import TimeSeriesTable


def table_from(values: np.ndarray, target_last: bool = True) -> TimeSeriesTable:
    rows, cols = values.shape
    names = [f"f{j}" for j in range(cols - 1)] + ["target_latency_ms"]
    return TimeSeriesTable(np.arange(rows, dtype=np.int64), names,
                           np.asarray(values, float))


def random_table(rows: int, cols: int, seed: int = 0) -> TimeSeriesTable:
    rng = np.random.default_rng(seed)
    return table_from(rng.normal(size=(rows, cols)))


class TestTimeSplit:
    def test_80_20_exact(self):
        train, test = time_split(random_table(100, 3), 0.8)
        assert (train.n_rows, test.n_rows) == (80, 20)

    def test_ceiling_rounding(self):
        train, test = time_split(random_table(101, 3), 0.8)
        assert (train.n_rows, test.n_rows) == (81, 20)

    def test_strict_time_ordering(self):
        for rows in (10, 57, 100):
            train, test = time_split(random_table(rows, 3), 0.8)
            assert train.timestamps.max() < test.timestamps.min()

    def test_test_rows_knob(self):
        train, test = time_split(random_table(100, 3), train_frac=None,
                                 test_rows=30)
        assert (train.n_rows, test.n_rows) == (70, 30)

    def test_empty_side_rejected(self):
        with pytest.raises(DatasetError, match="empty side"):
            time_split(random_table(10, 3), train_frac=None, test_rows=10)


class TestScaler:
    def test_hand_values_population_std(self):
        table = table_from(np.column_stack([[1.0, 2.0, 3.0], [5.0, 6.0, 10.0]]))
        scaler = fit_scaler(table)
        assert scaler.feature_mean[0] == pytest.approx(2.0)
        assert scaler.feature_std[0] == pytest.approx(0.816496580927726)
        scaled = apply_scaler(scaler, table)
        assert scaled.column("f0") == pytest.approx(
            [-1.224744871391589, 0.0, 1.224744871391589])

    def test_train_stats_after_scaling(self):
        table = random_table(200, 5, seed=3)
        scaler = fit_scaler(table)
        scaled = apply_scaler(scaler, table)
        for name in scaled.feature_names():
            col = scaled.column(name)
            assert abs(col.mean()) < 1e-9
            assert abs(col.std() - 1.0) < 1e-9

    def test_no_refit_on_test(self):
        table = random_table(200, 5, seed=4)
        train, test = time_split(table, 0.8)
        scaler = fit_scaler(train)
        scaled_test = apply_scaler(scaler, test)
        means = [abs(scaled_test.column(n).mean())
                 for n in scaled_test.feature_names()]
        assert max(means) > 1e-6  # test statistics are not re-centered

    def test_inverse_round_trip(self):
        table = random_table(50, 4, seed=5)
        scaler = fit_scaler(table)
        back = inverse_scaler(scaler, apply_scaler(scaler, table))
        assert np.allclose(back.values, table.values, atol=1e-9)

    def test_zero_variance_rejected(self):
        values = np.column_stack([np.ones(10), np.arange(10.0)])
        with pytest.raises(DatasetError, match="zero variance"):
            fit_scaler(table_from(values))

    def test_unfitted_scaler_rejected(self):
        table = random_table(20, 3)
        scaler = fit_scaler(table)
        scaler.fitted = False
        with pytest.raises(DatasetError, match="not fitted"):
            apply_scaler(scaler, table)


class TestMakeWindows:
    def test_shapes_example(self):
        ds = make_windows(random_table(60, 5), window=50, stride=1)
        assert ds.X.shape == (10, 50, 4)
        assert ds.y.shape == (10, 1)

    def test_single_window_boundary(self):
        table = random_table(51, 3)
        ds = make_windows(table, window=50)
        assert ds.n_windows == 1
        assert ds.y[0, 0] == table.column(table.target)[-1]

    def test_stride_two(self):
        ds = make_windows(random_table(60, 3), window=50, stride=2)
        assert ds.n_windows == 5

    def test_insufficient_rows(self):
        with pytest.raises(DatasetError, match="insufficient rows"):
            make_windows(random_table(50, 3), window=50)

    def test_matches_enumeration_oracle_grid(self):
        for rows in range(8, 200, 13):
            for window in (1, 3, 7, 20, 50):
                if rows <= window:
                    continue
                for stride in (1, 2, 5):
                    table = random_table(rows, 4, seed=rows * 31 + stride)
                    ds = make_windows(table, window=window, stride=stride)
                    target_col = table.columns.index(table.target)
                    want_x, want_y = windows_by_enumeration(
                        table.values, target_col, window, stride, False)
                    assert ds.n_windows == window_count_formula(rows, window, stride)
                    assert np.array_equal(ds.X, want_x)
                    assert np.array_equal(ds.y, want_y)

    def test_lagged_target_channel(self):
        table = random_table(30, 3)
        ds = make_windows(table, window=5, include_lagged_target=True)
        assert ds.target_channel == ds.X.shape[2] - 1
        target_col = table.columns.index(table.target)
        assert np.array_equal(ds.X[:, :, ds.target_channel],
                              windows_by_enumeration(table.values, target_col,
                                                     5, 1, True)[0][:, :, -1])


class TestCsvRoundTrip:
    def test_bit_exact(self, tmp_path):
        table = random_table(40, 6, seed=9)
        path = tmp_path / "t.csv"
        export_csv(table, path)
        back = import_csv(path)
        assert back.columns == table.columns
        assert np.array_equal(back.timestamps, table.timestamps)
        assert np.array_equal(back.values, table.values)

    def test_decreasing_timestamps_named_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("timestamp_s,f0,target_latency_ms\n"
                        "3,1.0,2.0\n2,1.0,2.0\n")
        with pytest.raises(DatasetError, match="line 3"):
            import_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DatasetError, match="no header"):
            import_csv(path)

    def test_malformed_row_named_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("timestamp_s,f0,target_latency_ms\n1,2.0\n")
        with pytest.raises(DatasetError, match="line 2"):
            import_csv(path)


class TestBuildSplits:
    def test_no_window_crosses_boundary(self):
        table = random_table(120, 4, seed=11)
        train, test, _ = build_splits(table, window=20)
        n_train = math.ceil(0.8 * 120)
        boundary_t = table.timestamps[n_train]
        # every training row the windows can touch predates the boundary
        assert train.n_windows == n_train - 20
        assert test.n_windows == (120 - n_train) - 20

    def test_train_constant_columns_pruned(self):
        values = np.random.default_rng(2).normal(size=(50, 4))
        values[:40, 0] = 5.0  # constant on the train side only
        table = table_from(values)
        train_t, test_t = time_split(table, 0.8)
        train2, test2, dropped = drop_train_constant_columns(train_t, test_t)
        assert dropped == ["f0"]
        assert "f0" not in train2.columns and "f0" not in test2.columns
