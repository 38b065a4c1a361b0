import numpy as np
import pytest

from tessoc.errors import InvalidInputError
from tessoc.timeseries import DATASET_COLUMNS, TimeSeries, load_dataset


def write_dataset(path, rows, header=DATASET_COLUMNS):
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


class TestTimeSeries:
    def test_basic_construction(self):
        ts = TimeSeries(t=[0.0, 1.0, 2.0], channels={"a": [1.0, 2.0, 3.0]})
        assert len(ts) == 3
        np.testing.assert_array_equal(ts.channel("a"), [1.0, 2.0, 3.0])

    def test_non_monotone_rejected_with_row(self):
        with pytest.raises(InvalidInputError, match="row 2"):
            TimeSeries(t=[0.0, 1.0, 0.5], channels={})

    def test_channel_length_mismatch(self):
        with pytest.raises(InvalidInputError, match="'a'"):
            TimeSeries(t=[0.0, 1.0], channels={"a": [1.0]})

    def test_unknown_channel(self):
        ts = TimeSeries(t=[0.0], channels={"a": [1.0]})
        with pytest.raises(InvalidInputError, match="'b'"):
            ts.channel("b")

    def test_decimation(self):
        ts = TimeSeries(t=np.arange(10.0), channels={"a": np.arange(10.0) * 2})
        out = ts.decimate(3)
        np.testing.assert_array_equal(out.t, [0.0, 3.0, 6.0, 9.0])
        np.testing.assert_array_equal(out.channel("a"), [0.0, 6.0, 12.0, 18.0])

    def test_decimation_factor_validated(self):
        ts = TimeSeries(t=np.arange(4.0), channels={})
        with pytest.raises(InvalidInputError):
            ts.decimate(0)

    def test_decimation_rate_relationship(self):
        t = np.arange(0.0, 10.0, 0.0125)  # 80 S/s
        ts = TimeSeries(t=t, channels={"a": np.zeros_like(t)})
        out = ts.decimate(8)
        assert out.sample_rate() == pytest.approx(10.0, rel=1e-9)

    def test_sample_rate_jitter_guard(self):
        t = np.array([0.0, 1.0, 2.0, 3.5])
        ts = TimeSeries(t=t, channels={})
        with pytest.raises(InvalidInputError, match="jitter"):
            ts.sample_rate()

    def test_zoh_lookup(self):
        ts = TimeSeries(t=[0.0, 1.0, 2.0], channels={"a": [10.0, 20.0, 30.0]})
        f = ts.zoh("a")
        assert f(-0.5) == 10.0  # clamped before the first sample
        assert f(0.0) == 10.0
        assert f(0.99) == 10.0
        assert f(1.0) == 20.0
        assert f(5.0) == 30.0
        np.testing.assert_array_equal(ts.zoh_many("a", np.array([0.5, 1.5, 9.0])), [10.0, 20.0, 30.0])

    def test_round_trip_is_lossless(self, tmp_path, rng):
        t = np.cumsum(rng.uniform(0.01, 0.02, 200))
        values = rng.standard_normal(200) * np.pi * 1e4
        ts = TimeSeries(t=t, channels={"x_K": values})
        path = tmp_path / "ts.csv"
        ts.save_csv(path)
        back = TimeSeries.load_csv(path)
        np.testing.assert_array_equal(back.t, t)  # %.17g round-trips float64 exactly
        np.testing.assert_array_equal(back.channel("x_K"), values)

    def test_select_preserves_order(self):
        ts = TimeSeries(
            t=[0.0, 1.0],
            channels={"a": [1.0, 1.0], "b": [2.0, 2.0], "c": [3.0, 3.0]},
        )
        out = ts.select(["c", "a"])
        assert out.channel_names == ["c", "a"]
        np.testing.assert_array_equal(out.matrix(), [[3.0, 1.0], [3.0, 1.0]])


class TestLoadDataset:
    def test_well_formed_file_with_pair_averaging(self, tmp_path):
        rows = [
            [0.0, 0.1, 290.0, 291.0, 288.0, 289.0, 287.5, 286.0, 287.0],
            [0.0125, 0.1, 290.1, 291.1, 288.1, 289.1, 287.6, 286.1, 287.1],
            [0.025, 0.1, 290.2, 291.2, 288.2, 289.2, 287.7, 286.2, 287.2],
        ]
        path = tmp_path / "data.csv"
        write_dataset(path, rows)
        ts = load_dataset(path)
        assert len(ts) == 3
        np.testing.assert_allclose(ts.channel("tc2_K"), [288.5, 288.6, 288.7])
        np.testing.assert_allclose(ts.channel("tc4_K"), [286.5, 286.6, 286.7])

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "data.csv"
        header = [c for c in DATASET_COLUMNS if c != "tc3_K"]
        write_dataset(path, [[0.0] * 8], header=header)
        with pytest.raises(InvalidInputError, match="tc3_K"):
            load_dataset(path)

    def test_nan_cell_names_row(self, tmp_path):
        rows = [
            [0.0, 0.1, 290.0, 291.0, 288.0, 289.0, 287.5, 286.0, 287.0],
            [0.0125, 0.1, 290.0, "nan", 288.0, 289.0, 287.5, 286.0, 287.0],
        ]
        path = tmp_path / "data.csv"
        write_dataset(path, rows)
        with pytest.raises(InvalidInputError, match="row 3"):
            load_dataset(path)

    def test_reversed_timestamps_name_row(self, tmp_path):
        rows = [
            [0.0, 0.1, 290.0, 291.0, 288.0, 289.0, 287.5, 286.0, 287.0],
            [0.025, 0.1, 290.0, 291.0, 288.0, 289.0, 287.5, 286.0, 287.0],
            [0.0125, 0.1, 290.0, 291.0, 288.0, 289.0, 287.5, 286.0, 287.0],
        ]
        path = tmp_path / "data.csv"
        write_dataset(path, rows)
        with pytest.raises(InvalidInputError, match="row 4"):
            load_dataset(path)

    def test_unparseable_cell_names_row(self, tmp_path):
        rows = [[0.0, 0.1, 290.0, 291.0, 288.0, "oops", 287.5, 286.0, 287.0]]
        path = tmp_path / "data.csv"
        write_dataset(path, rows)
        with pytest.raises(InvalidInputError, match="row 2"):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidInputError, match="no such file"):
            load_dataset(tmp_path / "absent.csv")
