import csv
import json

import numpy as np
import pytest

from conftest import narrow_config, write_config
from spinblockade import cli, io
from spinblockade.calibration import TemperatureSweep, transition_width
from spinblockade.funnel import simulate_funnel_map


def run(tmp_path, command, cfg, *extra, name="cfg.json"):
    path = write_config(tmp_path / name, cfg)
    return cli.main([command, "--config", str(path), *extra])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def out(tmp_path):
    d = tmp_path / "out"
    d.mkdir()
    return d


class TestSimulate:
    def test_row_count(self, tmp_path, out):
        cfg = narrow_config(out, shots=5000)
        cfg["sweep"]["detuning_grid"]["num"] = 7
        assert run(tmp_path, "simulate", cfg) == 0
        rows = read_csv(out / "shots.csv")
        assert len(rows) - 1 == 5000 * 7
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["records"] == 35000
        assert manifest["files"]["shots.csv"] == cli.file_hash(out / "shots.csv")

    def test_byte_identical_reruns(self, tmp_path, out):
        cfg = narrow_config(out, shots=50)
        run(tmp_path, "simulate", cfg)
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        for p in out.iterdir():
            p.unlink()
        run(tmp_path, "simulate", cfg)
        assert {p.name: p.read_bytes() for p in out.iterdir()} == first

    def test_seed_flag_overrides(self, tmp_path, out):
        cfg = narrow_config(out, shots=20)
        run(tmp_path, "simulate", cfg, "--seed", "7")
        assert json.loads((out / "manifest.json").read_text())["rng_seed"] == 7

    def test_workers_identical(self, tmp_path, out):
        cfg = narrow_config(out, shots=100)
        run(tmp_path, "simulate", cfg)
        serial = (out / "shots.csv").read_bytes()
        run(tmp_path, "simulate", cfg, "--workers", "4")
        assert (out / "shots.csv").read_bytes() == serial

    def test_oracle(self, tmp_path, out):
        run(tmp_path, "simulate", narrow_config(out, shots=10), "--oracle")
        labels = {r[0] for r in read_csv(out / "shots_oracle.csv")[1:]}
        assert labels <= {"singlet", "triplet"}

    def test_missing_output_directory(self, tmp_path, capsys):
        assert run(tmp_path, "simulate", narrow_config(tmp_path / "missing", shots=10)) == 3
        assert "io.missing_directory" in capsys.readouterr().err


class TestExitCodes:
    def test_validation_error(self, tmp_path, out, capsys):
        cfg = narrow_config(out)
        cfg["sweep"]["shots_per_point"] = 0
        assert run(tmp_path, "simulate", cfg) == 1

    def test_field_level_message(self, tmp_path, out, capsys):
        cfg = narrow_config(out)
        cfg["sweep"]["shots_per_point"] = "many"
        assert run(tmp_path, "simulate", cfg) == 1
        assert "config.sweep" in capsys.readouterr().err

    def test_schema_version(self, tmp_path, out):
        cfg = narrow_config(out)
        cfg["schema_version"] = 2
        assert run(tmp_path, "simulate", cfg) == 1

    def test_computation_error(self, tmp_path, out):
        cfg = narrow_config(out, shots=50)
        cfg["model"]["current_amplitude"] = 0.0
        assert run(tmp_path, "simulate", cfg) == 0
        # pure noise: no transition to fit
        assert run(tmp_path, "analyze", cfg) == 2

    def test_io_error(self, tmp_path, out):
        cfg = narrow_config(out)
        cfg["input"] = {"shots": str(tmp_path / "absent.csv")}
        assert run(tmp_path, "analyze", cfg) == 3

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["simulate", "--config", str(tmp_path / "absent.json")]) == 3

    def test_malformed_config(self, tmp_path):
        (tmp_path / "bad.json").write_text("{nope")
        assert cli.main(["simulate", "--config", str(tmp_path / "bad.json")]) == 1

    def test_usage_error(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["simulate"])
        assert info.value.code == 1

    def test_corrupt_shots_names_line(self, tmp_path, out, capsys):
        cfg = narrow_config(out, shots=10)
        run(tmp_path, "simulate", cfg)
        lines = (out / "shots.csv").read_text().splitlines()
        lines[42] = "oops,1.0"
        (out / "shots.csv").write_text("\n".join(lines) + "\n")
        assert run(tmp_path, "analyze", cfg) == 1
        assert "line 43" in capsys.readouterr().err


class TestAnalyze:
    def test_round_trip(self, tmp_path, out):
        cfg = narrow_config(out)
        run(tmp_path, "simulate", cfg)
        assert run(tmp_path, "analyze", cfg) == 0
        doc = json.loads((out / "analysis.json").read_text())
        d = doc["delta_sb"]
        assert d["ci_low_ueV"] <= 28.1 <= d["ci_high_ueV"]
        assert doc["fit"]["uncertainty"]["confidence"] == 0.95
        assert doc["input_sha256"] == cli.file_hash(out / "shots.csv")

    def test_byte_identical(self, tmp_path, out):
        cfg = narrow_config(out, shots=200)
        run(tmp_path, "simulate", cfg)
        run(tmp_path, "analyze", cfg)
        first = (out / "analysis.json").read_bytes()
        run(tmp_path, "analyze", cfg)
        assert (out / "analysis.json").read_bytes() == first

    def test_histogram_input_matches_shots_input(self, tmp_path, out):
        cfg = narrow_config(out, shots=200)
        run(tmp_path, "simulate", cfg)
        run(tmp_path, "analyze", cfg)
        from_shots = json.loads((out / "analysis.json").read_text())["delta_sb"]["ueV"]
        cfg["input"] = {"histogram": str(out / "histogram.csv")}
        run(tmp_path, "analyze", cfg)
        assert json.loads((out / "analysis.json").read_text())["delta_sb"]["ueV"] == from_shots

    def test_mirrored_twin(self, tmp_path):
        results = []
        for sign in (1, -1):
            d = tmp_path / f"sign{sign}"
            d.mkdir()
            cfg = narrow_config(d, shots=300)
            cfg["model"]["current_slope"] = 0.0
            grid = np.linspace(-300, 330, 60)
            cfg["sweep"]["detuning_grid"] = (grid if sign == 1 else -grid).tolist()
            cfg["sweep"]["boundary_sign"] = sign
            run(tmp_path, "simulate", cfg, name=f"c{sign}.json")
            assert run(tmp_path, "analyze", cfg, name=f"c{sign}.json") == 0
            results.append(json.loads((d / "analysis.json").read_text())["delta_sb"]["ueV"])
        assert abs(results[0]) == pytest.approx(abs(results[1]), rel=1e-9)

    def test_calibration_and_noise_blocks(self, tmp_path, out):
        t = np.linspace(0.02, 0.8, 10)
        for label, alpha in (("P1", 0.095), ("P2", 0.104)):
            io.write_temperature_sweep(out / f"{label}.csv", TemperatureSweep(t, transition_width(t, alpha, 0.1)))
        cfg = narrow_config(
            out,
            shots=200,
            calibration={
                "temperature_sweeps": {"P1": str(out / "P1.csv"), "P2": str(out / "P2.csv")},
                "g_p1_p2": 0.3, "g_p2_p1": 0.3, "sweep_ratio": -1.0,
            },
            noise_budget={
                "sources": [{"kind": "johnson", "params": {"t": 0.1}}],
                "filter": {"enbw": 67000.0},
            },
        )
        run(tmp_path, "simulate", cfg)
        assert run(tmp_path, "analyze", cfg) == 0
        doc = json.loads((out / "analysis.json").read_text())
        factor = doc["calibration"]["scale_factor_eV_per_V"]
        assert factor == pytest.approx(0.1393, rel=2e-3)
        assert doc["delta_sb"]["V"] == pytest.approx(doc["delta_sb"]["ueV"] * 1e-6 / factor, rel=1e-12)
        assert doc["noise_budget"]["total_pA"] == pytest.approx(4.3, abs=0.01)


class TestSweep:
    def test_trend(self, tmp_path, out):
        cfg = narrow_config(
            out, shots=2000, sweep_parameter={"name": "delta_sb", "values": [150.0, 112.5, 75.0]}
        )
        cfg["model"].update(tc_singlet=10.0, tc_triplet=10.0, current_amplitude=-66.8)
        cfg["sweep"]["detuning_grid"] = {"start": -150.0, "stop": 300.0, "num": 61}
        assert run(tmp_path, "sweep", cfg) == 0
        rows = read_csv(out / "sweep.csv")
        assert rows[0] == list(cli.SWEEP_HEADER)
        est = [float(r[1]) for r in rows[1:]]
        assert np.all(np.diff(est) < 0)
        for r in rows[1:]:
            assert float(r[2]) <= float(r[0]) <= float(r[3]) and r[4] == "ok"

    def test_single_point_equals_analyze(self, tmp_path, out):
        cfg = narrow_config(out, shots=200, sweep_parameter={"name": "delta_sb", "values": [28.1]})
        run(tmp_path, "sweep", cfg)
        swept = read_csv(out / "sweep.csv")[1]
        run(tmp_path, "simulate", cfg)
        run(tmp_path, "analyze", cfg)
        d = json.loads((out / "analysis.json").read_text())["delta_sb"]
        assert [float(x) for x in swept[1:4]] == [d["ueV"], d["ci_low_ueV"], d["ci_high_ueV"]]

    def test_failing_point_recorded(self, tmp_path, out):
        cfg = narrow_config(out, shots=100, sweep_parameter={"name": "current_amplitude", "values": [-66.0, 0.0]})
        assert run(tmp_path, "sweep", cfg) == 0
        rows = read_csv(out / "sweep.csv")
        assert rows[1][4] == "ok"
        assert rows[2][4].startswith("failed: fit_engine.transition_not_contained")

    def test_unknown_parameter(self, tmp_path, out):
        cfg = narrow_config(out, sweep_parameter={"name": "tunnel", "values": [1.0]})
        assert run(tmp_path, "sweep", cfg) == 1


class TestThinCommands:
    def test_lindblad(self, tmp_path, out):
        cfg = narrow_config(out, lindblad={
            "detuning_grid": {"start": -400.0, "stop": 400.0, "num": 201},
            "tc": 1.0, "kbte": 8.6, "gamma": 0.01, "kappa_over_gamma": [0.0, 150.0],
        })
        assert run(tmp_path, "lindblad", cfg) == 0
        rows = read_csv(out / "effective_tc.csv")
        assert float(rows[1][3]) == pytest.approx(1.0, rel=0.01)
        assert float(rows[2][3]) > 10
        assert len(read_csv(out / "profile_01.csv")) == 202

    def test_noise(self, tmp_path, out):
        cfg = narrow_config(out, noise_budget={
            "sources": [
                {"kind": "johnson", "params": {"t": 0.1}},
                {"kind": "shot", "params": {"i_dc": 5e-10}},
            ],
            "filter": {"enbw": 67000.0},
        })
        assert run(tmp_path, "noise", cfg) == 0
        doc = json.loads((out / "noise_budget.json").read_text())
        assert set(doc["per_source_pA"]) == {"johnson", "shot"}

    def test_noise_needs_block(self, tmp_path, out):
        assert run(tmp_path, "noise", narrow_config(out)) == 1

    def test_lever_arm(self, tmp_path, out):
        t = np.linspace(0.02, 0.8, 10)
        io.write_temperature_sweep(out / "P1.csv", TemperatureSweep(t, transition_width(t, 0.095, 0.1)))
        cfg = narrow_config(out, calibration={"temperature_sweeps": {"P1": str(out / "P1.csv")}, "alpha_p2": 0.104})
        assert run(tmp_path, "lever-arm", cfg) == 0
        doc = json.loads((out / "lever_arm.json").read_text())
        assert doc["lever_arms"]["P1"]["alpha_eV_per_V"] == pytest.approx(0.095, rel=1e-3)
        assert doc["scale_factor_eV_per_V"] == pytest.approx(0.095, rel=1e-3)

    def test_funnel(self, tmp_path, out):
        fmap = simulate_funnel_map(np.linspace(-300, 350, 40), np.linspace(-600, 50, 200), 1.07, 25.0, 36.0, 0.0)
        io.write_funnel_map(out / "map.csv", fmap)
        cfg = narrow_config(out, funnel={"map": str(out / "map.csv")})
        assert run(tmp_path, "funnel", cfg) == 0
        doc = json.loads((out / "funnel.json").read_text())
        assert doc["fit"]["tc_ueV"] == pytest.approx(1.07, rel=5e-3)
        assert len(read_csv(out / "peaks.csv")) == 41
