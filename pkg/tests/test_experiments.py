import json

import numpy as np
import pytest

from tessoc.config import build_setup, default_config
from tessoc.errors import InvalidConfigError
from tessoc.experiments import (
    REFERENCE_RESULTS,
    build_report,
    run_case_study,
    run_sweep,
    simulate_truth,
    write_raw_dataset,
    write_report,
)
from tessoc.timeseries import load_dataset


def tiny_config(mode="twin-sim"):
    """Small truth grid and a short profile so pipeline tests stay fast."""
    cfg = default_config()
    cfg["truth_grid"] = {"nx": 6, "ny": 12}  # partitions into 3x7 (ratio 2 in both)
    cfg["experiment"]["mode"] = mode
    cfg["experiment"]["profile"] = [
        {"duration_s": 8.0, "mdot_kg_s": 0.12, "t_in_K": 286.0, "t_in_end_K": 292.0},
        {"duration_s": 4.0, "mdot_kg_s": 0.0, "t_in_K": 292.0},
    ]
    return cfg


@pytest.fixture(scope="module")
def tiny_truth():
    setup = build_setup(tiny_config())
    return setup, simulate_truth(setup)


class TestSimulateTruth:
    def test_series_alignment(self, tiny_truth):
        setup, truth = tiny_truth
        n_rows = int(round(setup.duration / setup.schedule.dt_predict)) + 1
        assert truth.coarse_states.shape == (n_rows, 21)
        assert len(truth.inputs) == n_rows
        assert len(truth.soc) == n_rows
        assert truth.measurements.t[0] == 0.0
        assert truth.measurements.sample_rate() == pytest.approx(80.0)

    def test_soc_physically_sensible(self, tiny_truth):
        _, truth = tiny_truth
        assert np.all((truth.soc >= 0.0) & (truth.soc <= 1.0))
        # warming profile discharges the store (SOC convention: 1 = cold/full)
        assert truth.soc[-1] < truth.soc[0]

    def test_exact_model_twin_uses_same_grid(self):
        cfg = tiny_config()
        cfg["truth_grid"] = {"nx": 3, "ny": 7}
        setup = build_setup(cfg)
        truth = simulate_truth(setup)
        assert truth.coarse_states.shape[1] == 21

    def test_enthalpy_bounds_match_across_grids(self, tiny_truth):
        from tessoc.materials import SocParams

        setup, _ = tiny_truth
        truth_soc = SocParams.from_temperatures(
            setup.soc.t_min, setup.soc.t_max, setup.truth_grid, setup.pcm
        )
        assert truth_soc.h_min == pytest.approx(setup.soc.h_min, rel=1e-12)
        assert truth_soc.h_max == pytest.approx(setup.soc.h_max, rel=1e-12)


class TestRunCaseStudy:
    def test_twin_metrics_and_artifacts(self, tiny_truth, tmp_path):
        setup, truth = tiny_truth
        result = run_case_study(setup, out_dir=tmp_path / "run", truth=truth)
        m = result.metrics
        assert m["mode"] == "twin-sim"
        assert m["n_updates"] > 0
        assert m["e_rms_over_cells_max_K"] < 5.0
        assert 0.0 <= m["max_abs_soc_error"] <= 1.0
        assert set(m["e_rms_per_cell_K"]) == {f"cv{j}" for j in range(1, 22)}
        for name in ("estimate.csv", "truth_coarse.csv", "errors.csv", "manifest.json", "metrics.json"):
            assert (tmp_path / "run" / name).exists()
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["config_hash"] == setup.hash

    def test_same_seed_byte_identical_outputs(self, tmp_path):
        cfg = tiny_config()
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            setup = build_setup(cfg)
            run_case_study(setup, out_dir=out)
        for name in ("estimate.csv", "truth_coarse.csv", "errors.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_different_seed_changes_measurements(self, tmp_path):
        cfg = tiny_config()
        res_a = run_case_study(build_setup(cfg, seed=1))
        res_b = run_case_study(build_setup(cfg, seed=2))
        assert np.any(res_a.trajectory.x_hat != res_b.trajectory.x_hat)

    def test_withheld_sensor_never_reaches_filter(self, tiny_truth):
        setup_full, truth = tiny_truth
        setup = build_setup(tiny_config(), withhold=["tc3"])
        result = run_case_study(setup, truth=truth)
        assert setup.system.p == 3
        assert result.trajectory.innovations.shape[1] == 3
        assert "tc3" not in [s.name for s in setup.sensors]

    def test_replay_round_trip(self, tiny_truth, tmp_path):
        setup, truth = tiny_truth
        dataset_path = tmp_path / "dataset.csv"
        write_raw_dataset(truth, setup, dataset_path)
        ds = load_dataset(dataset_path)
        assert ds.sample_rate() == pytest.approx(80.0)

        cfg = tiny_config(mode="replay")
        replay_setup = build_setup(cfg, withhold=["tc1"])
        result = run_case_study(replay_setup, dataset_path=dataset_path, out_dir=tmp_path / "run")
        m = result.metrics
        assert "withheld_validation" in m
        assert m["withheld_validation"]["tc1"]["cell"] == "cv3"
        assert m["withheld_validation"]["tc1"]["e_rms_K"] < 2.0

    def test_replay_needs_dataset(self):
        cfg = tiny_config(mode="replay")
        cfg["experiment"]["dataset"] = None
        with pytest.raises(InvalidConfigError, match="dataset"):
            run_case_study(build_setup(cfg))


class TestSweepAndReport:
    def test_sweep_shares_truth_and_orders_rows(self, tmp_path):
        cfg = tiny_config()
        results = run_sweep(cfg, rates_hz=[10.0, 80.0], out_dir=tmp_path)
        assert len(results) == 2
        assert results[0].truth is results[1].truth
        report = build_report(results)
        rates = [row["rate_hz"] for row in report["rate_table"]]
        assert rates == sorted(rates, reverse=True)

    def test_report_schema_with_no_runs(self, tmp_path):
        report = write_report([], tmp_path / "metrics.json")
        assert report["schema"] == "tessoc-metrics-v1"
        assert report["runs"] == []
        assert report["rate_table"] == []
        on_disk = json.loads((tmp_path / "metrics.json").read_text())
        assert on_disk == report

    def test_reference_results_embedded_and_marked(self, tmp_path):
        report = write_report([], tmp_path / "metrics.json")
        ref = report["reference_results"]
        assert ref["e_rms_cv1_K_by_rate"] == {
            "80": 0.2436,
            "10": 0.2617,
            "1": 0.3811,
            "0.2": 0.7526,
        }
        assert ref["soc_error_band"] == 0.02
        assert "not reproducible" in ref["note"]
        assert REFERENCE_RESULTS["e_rms_cv3_K_by_rate"]["0.2"] == 1.3270
