# ABOUTME: Tests for harmonic_ctl.py - the command line front door
# ABOUTME: Exit codes, written files, stdout paths, cache use and determinism on short scenarios

import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent.parent / "scripts"))

from artifact_cache import get_cache_stats
from harmonic_ctl import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, SPECTRUM_COLUMNS, main
from simulation import TRACE_COLUMNS
from converter_model import ConverterParams, compute_setpoint, error_dynamics_matrix
from harmonic_solvers import harmonic_operator

BENCH = {"r": 1.15, "L": 122e-6, "C": 100e-6, "R_L": 120.0, "E_rms": 45.0, "f": 50.0, "v_dc_ref": 150.0}


def lossless_open_loop():
    p = ConverterParams(**{**BENCH, "r": 0.0})
    return error_dynamics_matrix(p, compute_setpoint(p))


@pytest.fixture
def params_file(tmp_path):
    path = tmp_path / "params.yaml"
    path.write_text(yaml.safe_dump(BENCH))
    return path


@pytest.fixture
def scenarios_file(tmp_path):
    """Short scenarios so the command tests stay quick."""
    data = {
        "scenarios": {
            "short": {
                "duration": 0.004,
                "dt": 5.0e-6,
                "initial": "setpoint",
                "controller": "d1",
                "pll": False,
                "events": [{"time": 0.002, "action": "step_i_sink", "value": 1.0}],
            },
            "noisy": {
                "duration": 0.002,
                "dt": 5.0e-6,
                "initial": "setpoint",
                "controller": "pi",
                "pll": True,
                "noise_std": 0.05,
            },
            "empty": {"duration": 0.0, "controller": "d1"},
        }
    }
    path = tmp_path / "scenarios.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.fixture
def base_args(params_file, scenarios_file, tmp_path):
    def build(command, *extra):
        return [command, "--params", str(params_file), "--scenarios", str(scenarios_file),
                "--out", str(tmp_path / "out"), "--cache-db", str(tmp_path / "cache.sqlite"), *extra]
    return build


class TestSynthesizeCommand:
    """Tests for the synthesize command."""

    def test_writes_artifact_and_report(self, base_args, tmp_path, capsys):
        """Artifact JSON and HTML report are written; the JSON path goes to stdout."""
        assert main(base_args("synthesize", "--no-cache")) == EXIT_OK
        artifact_path = tmp_path / "out" / "artifact_d3.json"
        data = json.loads(artifact_path.read_text())
        for key in ("H1", "alpha_prime", "lyapunov_residual", "sylvester_residual", "min_damping", "wall_time"):
            assert key in data["report"]
        assert (tmp_path / "out" / "synthesis_d3.html").exists()
        assert str(artifact_path) in capsys.readouterr().out.splitlines()

    def test_sixth_harmonic_bank(self, base_args, tmp_path):
        """Objectives {3, 6} give an 8-state integrator bank."""
        assert main(base_args("synthesize", "--controller", "d3+6th", "--no-cache")) == EXIT_OK
        data = json.loads((tmp_path / "out" / "artifact_d3+6th.json").read_text())
        assert len(data["O"]) == 8

    def test_cache_reused(self, base_args, tmp_path, capsys):
        """A second run is served from the cache."""
        assert main(base_args("synthesize", "--controller", "d1")) == EXIT_OK
        assert main(base_args("synthesize", "--controller", "d1")) == EXIT_OK
        assert get_cache_stats(tmp_path / "cache.sqlite")["total_entries"] == 1
        assert "(cached)" in capsys.readouterr().err

    def test_pi_is_not_synthesized(self, base_args, capsys):
        """Only harmonic designs can be synthesized."""
        assert main(base_args("synthesize", "--controller", "pi")) == EXIT_CONFIG
        assert "harmonic design" in capsys.readouterr().err

    def test_missing_params_key(self, scenarios_file, tmp_path, capsys):
        """A params file without C exits 2 naming the key."""
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({k: v for k, v in BENCH.items() if k != "C"}))
        code = main(["synthesize", "--params", str(path), "--scenarios", str(scenarios_file), "--out", str(tmp_path)])
        assert code == EXIT_CONFIG
        assert "'C'" in capsys.readouterr().err

    def test_infeasible_load_writes_failure_report(self, scenarios_file, tmp_path):
        """A numerical failure exits 3 with failure_report.json."""
        path = tmp_path / "heavy.yaml"
        path.write_text(yaml.safe_dump({**BENCH, "R_L": 1.0}))
        out = tmp_path / "fail"
        code = main(["synthesize", "--params", str(path), "--scenarios", str(scenarios_file),
                     "--out", str(out), "--no-cache"])
        assert code == EXIT_NUMERICAL
        report = json.loads((out / "failure_report.json").read_text())
        assert report["command"] == "synthesize"
        assert report["error_type"] == "InfeasibleSetpointError"
        assert report["config"]["params"]["R_L"] == 1.0


class TestSimulateCommand:
    """Tests for the simulate command."""

    def test_trace_and_summary(self, base_args, tmp_path, capsys):
        """The trace has the documented columns and the summary its metrics."""
        assert main(base_args("simulate", "--scenario", "short", "--no-cache")) == EXIT_OK
        trace = pd.read_csv(tmp_path / "out" / "trace_short_d1.csv")
        assert tuple(trace.columns) == TRACE_COLUMNS
        assert len(trace) == 80
        summary = json.loads((tmp_path / "out" / "summary_short_d1.json").read_text())
        assert "thd_ia" in summary and "v_dc_error" in summary
        assert summary["controller"] == "d1"
        lines = capsys.readouterr().out.splitlines()
        assert lines[-2].endswith("trace_short_d1.csv")

    def test_zero_duration(self, base_args, tmp_path):
        """Duration 0 gives an empty trace and exit 0."""
        assert main(base_args("simulate", "--scenario", "empty", "--no-cache")) == EXIT_OK
        trace = pd.read_csv(tmp_path / "out" / "trace_empty_d1.csv")
        assert len(trace) == 0
        assert tuple(trace.columns) == TRACE_COLUMNS

    def test_unknown_controller_lists_names(self, base_args, capsys):
        """An unknown controller exits 2 with the valid names."""
        assert main(base_args("simulate", "--scenario", "short", "--controller", "lqr")) == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "d3" in err and "pi_notch" in err

    def test_unknown_scenario(self, base_args, capsys):
        """An unknown scenario exits 2."""
        assert main(base_args("simulate", "--scenario", "nope")) == EXIT_CONFIG
        assert "short" in capsys.readouterr().err

    def test_same_seed_same_bytes(self, base_args, tmp_path):
        """Identical config and seed reproduce the CSV byte for byte."""
        assert main(base_args("simulate", "--scenario", "noisy", "--seed", "3")) == EXIT_OK
        first = (tmp_path / "out" / "trace_noisy_pi.csv").read_bytes()
        assert main(base_args("simulate", "--scenario", "noisy", "--seed", "3")) == EXIT_OK
        assert (tmp_path / "out" / "trace_noisy_pi.csv").read_bytes() == first

    def test_different_seed_differs(self, base_args, tmp_path):
        """The seed drives the measurement noise."""
        main(base_args("simulate", "--scenario", "noisy", "--seed", "3"))
        first = (tmp_path / "out" / "trace_noisy_pi.csv").read_bytes()
        main(base_args("simulate", "--scenario", "noisy", "--seed", "4"))
        assert (tmp_path / "out" / "trace_noisy_pi.csv").read_bytes() != first


class TestSpectrumCommand:
    """Tests for the spectrum command."""

    def test_open_loop_stable(self, base_args, tmp_path):
        """The bench open loop has every eigenvalue in the left half plane."""
        assert main(base_args("spectrum", "--order", "4")) == EXIT_OK
        frame = pd.read_csv(tmp_path / "out" / "spectrum_open.csv")
        assert list(frame.columns) == SPECTRUM_COLUMNS
        assert (frame["re"] < 0).all()
        assert set(frame["boundary_flag"].unique()) <= {0, 1}

    def test_lossless_line_reported(self, scenarios_file, tmp_path, capsys):
        """With r = 0 the marginal eigenvalues are written and the lost ones are counted."""
        nominal, lossless = tmp_path / "nominal.yaml", tmp_path / "lossless.yaml"
        nominal.write_text(yaml.safe_dump(BENCH))
        lossless.write_text(yaml.safe_dump({**BENCH, "r": 0.0}))
        for path, out in ((nominal, "a"), (lossless, "b")):
            assert main(["spectrum", "--params", str(path), "--scenarios", str(scenarios_file),
                         "--out", str(tmp_path / out), "--order", "4"]) == EXIT_OK
        a = pd.read_csv(tmp_path / "a" / "spectrum_open.csv")
        b = pd.read_csv(tmp_path / "b" / "spectrum_open.csv")
        assert len(a) == 4
        assert len(b) < 4
        err = capsys.readouterr().err
        assert f"{4 - len(b)} of 4 strip eigenvalues missing at order 4" in err
        scale = np.linalg.norm(harmonic_operator(lossless_open_loop(), 4).data, 2)
        assert b["re"].abs().min() < 1e-10 * scale

    def test_closed_loop(self, base_args, tmp_path):
        """The stabilized d1 loop is written under its own name."""
        assert main(base_args("spectrum", "--controller", "d1", "--no-cache")) == EXIT_OK
        frame = pd.read_csv(tmp_path / "out" / "spectrum_d1.csv")
        assert (frame["re"] < 0).all()


class TestCompareCommand:
    """Tests for the compare command."""

    def test_table_in_requested_order(self, base_args, tmp_path):
        """Rows follow the --controller order regardless of completion order."""
        assert main(base_args("compare", "--scenario", "short", "--controller", "pi,d1", "--no-cache")) == EXIT_OK
        table = pd.read_csv(tmp_path / "out" / "comparison_short.csv")
        assert list(table["controller"]) == ["pi", "d1"]
        for column in ("thd_ia", "hc_vdc", "v_dc_error", "i_q_mean"):
            assert column in table.columns
        data = json.loads((tmp_path / "out" / "comparison_short.json").read_text())
        assert data["scenario"] == "short"
        assert (tmp_path / "out" / "comparison_short.html").exists()

    def test_single_controller(self, base_args, tmp_path):
        """One controller, one row."""
        assert main(base_args("compare", "--scenario", "short", "--controller", "pi")) == EXIT_OK
        assert len(pd.read_csv(tmp_path / "out" / "comparison_short.csv")) == 1

    def test_deterministic(self, base_args, tmp_path):
        """Two runs with the same seed give the same CSV bytes."""
        args = base_args("compare", "--scenario", "noisy", "--controller", "pi,pi_notch", "--seed", "1")
        main(args)
        first = (tmp_path / "out" / "comparison_noisy.csv").read_bytes()
        main(args)
        assert (tmp_path / "out" / "comparison_noisy.csv").read_bytes() == first


class TestAnalyzeCommand:
    """Tests for the analyze command."""

    def test_round_trip(self, base_args, tmp_path, capsys):
        """Metrics are recomputed from a written trace."""
        main(base_args("simulate", "--scenario", "short", "--no-cache"))
        capsys.readouterr()
        trace = tmp_path / "out" / "trace_short_d1.csv"
        assert main(base_args("analyze", str(trace))) == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["steps"] == 80
        assert result["v_dc_mean"] > 100

    def test_wrong_columns(self, base_args, tmp_path, capsys):
        """A CSV that is not a trace exits 2."""
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        assert main(base_args("analyze", str(bad))) == EXIT_CONFIG
        assert "columns" in capsys.readouterr().err

    def test_missing_file(self, base_args, tmp_path):
        """A missing trace exits 2."""
        assert main(base_args("analyze", str(tmp_path / "none.csv"))) == EXIT_CONFIG
