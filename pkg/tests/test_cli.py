import json
from pathlib import Path

import numpy as np
import pytest

from merinda.cli import main
from merinda.dynamics import load_csv, LOTKA_VOLTERRA_THETA, lotka_volterra, solve
from merinda.scenario import (
    default_lv_scenario,
    load_scenario,
    rng_stream,
    save_scenario,
    true_library_coeffs,
)


def write_scenario(tmp_path, name="lv", n_samples=1200, epochs=3, seed=77,
                   noise_std=0.0, window=50, batch_size=4):
    data = {
        "name": name,
        "system": "lotka_volterra",
        "theta_true": [1.0, 0.5, 0.3, 1.0],
        "x0": [1.0, 2.0],
        "dt": 0.01,
        "n_samples": n_samples,
        "noise_std": noise_std,
        "seed": seed,
        "library": {"max_order": 2},
        "train": {"window": window, "batch_size": batch_size, "epochs": epochs,
                  "learning_rate": 0.01, "threshold": 0.05, "l1_weight": 1e-4,
                  "hidden_size": 16},
        "formats": {"activation": "Q2.6/8", "weight": "Q2.14/16"},
    }
    path = tmp_path / f"{name}.scenario.json"
    path.write_text(json.dumps(data, indent=2))
    return path


def primary_outputs(out_dir: Path) -> dict[str, bytes]:
    return {
        p.name: p.read_bytes()
        for p in sorted(out_dir.iterdir())
        if p.is_file() and not p.name.endswith(".meta.json")
    }


class TestScenario:
    def test_load_validates_required_fields(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"name": "x", "system": "lotka_volterra"}))
        with pytest.raises(ValueError, match="missing"):
            load_scenario(path)

    def test_round_trip(self, tmp_path):
        sc = default_lv_scenario()
        path = tmp_path / "sc.json"
        save_scenario(sc, path)
        back = load_scenario(path)
        assert back.name == sc.name
        assert back.train.window == sc.train.window
        assert back.activation_format == sc.activation_format

    def test_unknown_system_rejected(self, tmp_path):
        path = write_scenario(tmp_path)
        data = json.loads(path.read_text())
        data["system"] = "pendulum"
        path.write_text(json.dumps(data))
        with pytest.raises(ValueError):
            load_scenario(path)

    def test_rng_streams_are_independent(self):
        a = rng_stream(7, "noise").standard_normal(4)
        b = rng_stream(7, "train").standard_normal(4)
        c = rng_stream(7, "noise").standard_normal(4)
        assert np.array_equal(a, c)
        assert not np.array_equal(a, b)

    def test_unknown_stream(self):
        with pytest.raises(ValueError):
            rng_stream(7, "misc")

    def test_true_coeffs_lorenz(self):
        from merinda.recovery.library import build_library
        lib = build_library(3, 0, 2)
        a = true_library_coeffs("lorenz63", np.array([10.0, 28.0, 8.0 / 3.0]), lib)
        assert a.shape == (3, lib.size)
        assert (a != 0).sum(axis=1).tolist() == [2, 3, 2]


class TestGenerate:
    def test_byte_identical_reruns(self, tmp_path):
        sc_path = write_scenario(tmp_path, n_samples=300)
        out = tmp_path / "out"
        assert main(["generate", "--scenario", str(sc_path), "--out", str(out)]) == 0
        first = (out / "lv.csv").read_bytes()
        assert main(["generate", "--scenario", str(sc_path), "--out", str(out)]) == 0
        assert (out / "lv.csv").read_bytes() == first
        assert (out / "lv.csv.meta.json").exists()

    def test_noiseless_matches_solver(self, tmp_path):
        sc_path = write_scenario(tmp_path, n_samples=300)
        out = tmp_path / "out"
        main(["generate", "--scenario", str(sc_path), "--out", str(out)])
        traj = load_csv(out / "lv.csv")
        ref = solve(lotka_volterra(), np.array([1.0, 2.0]), LOTKA_VOLTERRA_THETA,
                    None, np.arange(300) * 0.01)
        assert np.array_equal(traj.y, ref.y)

    def test_header_and_row_count(self, tmp_path):
        sc_path = write_scenario(tmp_path, n_samples=250)
        out = tmp_path / "out"
        main(["generate", "--scenario", str(sc_path), "--out", str(out)])
        lines = (out / "lv.csv").read_text().splitlines()
        assert lines[0] == "t,y1,y2"
        assert len(lines) == 251


class TestRecover:
    def test_sindy_recovers_support(self, tmp_path):
        sc_path = write_scenario(tmp_path)
        out = tmp_path / "out"
        main(["generate", "--scenario", str(sc_path), "--out", str(out)])
        assert main(["recover", "--scenario", str(sc_path), "--method", "sindy",
                     "--out", str(out)]) == 0
        report = json.loads((out / "lv.sindy.report.json").read_text())
        assert report["metrics"]["support_match"] is True
        assert report["metrics"]["coefficient_mse"] < 1e-3
        assert report["library"]["size"] == 6

    def test_merinda_zero_epochs_emits_report(self, tmp_path):
        sc_path = write_scenario(tmp_path, n_samples=400, epochs=0)
        out = tmp_path / "out"
        main(["generate", "--scenario", str(sc_path), "--out", str(out)])
        assert main(["recover", "--scenario", str(sc_path), "--method", "merinda",
                     "--out", str(out)]) == 0
        report = json.loads((out / "lv.merinda.report.json").read_text())
        assert report["training_log"] == []
        assert "reconstruction_mse" in report["metrics"]
        assert (out / "lv.gru.json").exists()

    def test_missing_trajectory_is_io_error(self, tmp_path):
        sc_path = write_scenario(tmp_path)
        out = tmp_path / "out"
        assert main(["recover", "--scenario", str(sc_path), "--method", "sindy",
                     "--out", str(out)]) == 1

    def test_unknown_method_is_usage_error(self, tmp_path):
        sc_path = write_scenario(tmp_path)
        with pytest.raises(SystemExit) as err:
            main(["recover", "--scenario", str(sc_path), "--method", "magic",
                  "--out", str(tmp_path)])
        assert err.value.code == 2


class TestHwReport:
    def test_design_fixture_report(self, tmp_path, capsys):
        out = tmp_path / "hw"
        assert main(["hwreport", "--out", str(out)]) == 0
        lines = (out / "hwreport.designs.csv").read_text().splitlines()
        assert len(lines) == 5
        assert lines[0].startswith("config,cycles,interval,power_w,speedup_vs_prev")
        step_ratios = [float(line.split(",")[4]) for line in lines[2:]]
        assert step_ratios == pytest.approx([44.33, 1.869, 1.355], abs=0.01)
        gru_row = lines[2].split(",")
        assert float(gru_row[-2]) == pytest.approx(44.33, abs=0.01)
        assert float(gru_row[-1]) == pytest.approx(0.0209, abs=1e-4)

    def test_mapping_fixture_report(self, tmp_path, capsys):
        out = tmp_path / "hw"
        assert main(["hwreport", "--fixture", "mappings", "--out", str(out)]) == 0
        lines = (out / "hwreport.stage_mappings.csv").read_text().splitlines()
        assert len(lines) == 17
        assert "ordering checks passed: True" in capsys.readouterr().out

    def test_scenario_pipeline_config_field(self, tmp_path):
        cfg = {"configs": [
            {"name": "only", "stages": {"s2": {"reads_per_iter": 4}},
             "banks": {"s2": 1}},
        ]}
        (tmp_path / "pipe.json").write_text(json.dumps(cfg))
        sc_path = write_scenario(tmp_path)
        data = json.loads(sc_path.read_text())
        data["pipeline_config"] = "pipe.json"
        sc_path.write_text(json.dumps(data))
        out = tmp_path / "hw"
        assert main(["hwreport", "--scenario", str(sc_path), "--out", str(out)]) == 0
        lines = (out / "hwreport.pipeline.csv").read_text().splitlines()
        assert lines[1].split(",")[:2] == ["only", "2"]

    def test_scenario_missing_pipeline_config_rejected(self, tmp_path):
        sc_path = write_scenario(tmp_path)
        data = json.loads(sc_path.read_text())
        data["pipeline_config"] = "missing.json"
        sc_path.write_text(json.dumps(data))
        assert main(["hwreport", "--scenario", str(sc_path),
                     "--out", str(tmp_path / "hw")]) == 1

    def test_pipeline_config_path(self, tmp_path):
        cfg = {
            "configs": [
                {"name": "banked", "stages": {"s1": {"reads_per_iter": 1, "unroll": 4}},
                 "banks": {"s1": 2}, "fmax_mhz": 150.0},
                {"name": "single", "stages": {"s1": {"reads_per_iter": 1, "unroll": 4}},
                 "banks": {"s1": 1}, "fmax_mhz": 150.0},
            ]
        }
        cfg_path = tmp_path / "pipe.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "hw"
        assert main(["hwreport", "--pipeline-config", str(cfg_path),
                     "--out", str(out)]) == 0
        lines = (out / "hwreport.pipeline.csv").read_text().splitlines()
        assert lines[1].split(",")[1] == "1"
        assert lines[2].split(",")[1] == "2"


class TestQuantizeEval:
    def test_wide_formats_track_float(self, tmp_path):
        sc_path = write_scenario(tmp_path, n_samples=400, epochs=2)
        out = tmp_path / "out"
        main(["generate", "--scenario", str(sc_path), "--out", str(out)])
        main(["recover", "--scenario", str(sc_path), "--method", "merinda",
              "--out", str(out)])
        assert main(["quantize-eval", "--checkpoint", str(out / "lv.gru.json"),
                     "--scenario", str(sc_path), "--out", str(out),
                     "--formats", "Q8.23/32,Q8.23/32"]) == 0
        report = json.loads((out / "lv.gru.quantize.json").read_text())
        assert report["deviation"]["max_abs"] <= 1e-4
        assert report["formats"]["activation"] == "Q9.23/32"

    def test_missing_checkpoint_is_io_error(self, tmp_path):
        sc_path = write_scenario(tmp_path)
        assert main(["quantize-eval", "--checkpoint", str(tmp_path / "none.json"),
                     "--scenario", str(sc_path), "--out", str(tmp_path)]) == 1

    def test_window_longer_than_trajectory_rejected(self, tmp_path):
        sc_path = write_scenario(tmp_path, n_samples=400, epochs=0, window=40)
        out = tmp_path / "out"
        main(["generate", "--scenario", str(sc_path), "--out", str(out)])
        main(["recover", "--scenario", str(sc_path), "--method", "merinda",
              "--out", str(out)])
        data = json.loads(sc_path.read_text())
        data["n_samples"] = 30  # shorter than the evaluation window
        sc_path.write_text(json.dumps(data))
        assert main(["quantize-eval", "--checkpoint", str(out / "lv.gru.json"),
                     "--scenario", str(sc_path), "--out", str(out)]) == 1


class TestDeterminism:
    def test_all_commands_byte_identical(self, tmp_path):
        sc_path = write_scenario(tmp_path, n_samples=400, epochs=2)

        def run(out: Path):
            main(["generate", "--scenario", str(sc_path), "--out", str(out)])
            main(["recover", "--scenario", str(sc_path), "--method", "sindy",
                  "--out", str(out)])
            main(["recover", "--scenario", str(sc_path), "--method", "merinda",
                  "--out", str(out)])
            main(["hwreport", "--out", str(out)])
            main(["quantize-eval", "--checkpoint", str(out / "lv.gru.json"),
                  "--scenario", str(sc_path), "--out", str(out)])
            return primary_outputs(out)

        a = run(tmp_path / "run_a")
        b = run(tmp_path / "run_b")
        assert list(a) == list(b)
        for name in a:
            assert a[name] == b[name], name

    def test_seed_override_changes_noise(self, tmp_path):
        sc_path = write_scenario(tmp_path, n_samples=300, noise_std=0.05)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["generate", "--scenario", str(sc_path), "--out", str(out_a)])
        main(["generate", "--scenario", str(sc_path), "--out", str(out_b),
              "--seed", "123"])
        assert (out_a / "lv.csv").read_bytes() != (out_b / "lv.csv").read_bytes()
