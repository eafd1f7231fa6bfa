import json
from pathlib import Path

import numpy as np
import pytest

from breakeven.cli import main
from breakeven.trainer import validate_metric_log


def write_json(path, payload):
    path.write_text(json.dumps(payload, indent=2))
    return str(path)


@pytest.fixture
def train_config(tmp_path):
    return write_json(
        tmp_path / "train.json",
        {
            "model": {"layer_sizes": [2, 8, 8, 2], "activation": "relu", "seed": 3},
            "dataset": {
                "kind": "gaussian_blobs", "n": 160, "classes": 2,
                "radius": 1.0, "sigma": 0.6, "seed": 1,
            },
            "eta": 0.05,
            "batch_size": 32,
            "epochs": 2,
            "eval_every": 2,
            "seed": 7,
            "spectra": {"n_gradient_samples": 6, "lanczos_iters": 10, "top_k": 2},
        },
    )


@pytest.fixture
def simulate_config(tmp_path):
    return write_json(
        tmp_path / "sim.json",
        {
            "etas": [0.5, 0.1, 0.02],
            "batch_sizes": [1, 10, 100],
            "alpha": 0.5,
            "psi": 1.0,
            "curvatures": {"kind": "uniform", "low": 0.5, "high": 1.5, "count": 100, "seed": 0},
        },
    )


class TestSimulate:
    def test_full_batch_rows_equal_two_over_eta(self, simulate_config, tmp_path):
        out = tmp_path / "out"
        assert main(["simulate", "--config", simulate_config, "--out", str(out), "--quiet"]) == 0
        rows = (out / "breakeven_table.csv").read_text().splitlines()
        assert rows[0].startswith("# config_hash=")
        for line in rows[2:]:
            eta, s, n, *_rest, lam, flag = line.split(",")
            if s == n:
                assert abs(float(lam) - 2.0 / float(eta)) <= 1e-12 * (2.0 / float(eta))

    def test_alpha_zero_constant_in_batch_size(self, tmp_path):
        cfg = write_json(
            tmp_path / "sim0.json",
            {
                "etas": [0.1],
                "batch_sizes": [1, 5, 50],
                "alpha": 0.0,
                "psi": 1.0,
                "curvatures": {"kind": "constant", "value": 1.0, "count": 50},
            },
        )
        out = tmp_path / "out0"
        assert main(["simulate", "--config", cfg, "--out", str(out), "--quiet"]) == 0
        lams = {
            line.split(",")[5]
            for line in (out / "breakeven_table.csv").read_text().splitlines()[2:]
        }
        assert len(lams) == 1

    def test_phase_diagram_eta_zero_breakeven(self, tmp_path):
        cfg = write_json(
            tmp_path / "simz.json",
            {
                "etas": [0.1],
                "batch_sizes": [10],
                "phase_grid": {"etas": [0.0, 0.1], "batch_sizes": [10]},
                "curvatures": {"kind": "uniform", "low": 0.5, "high": 1.5, "count": 20, "seed": 0},
            },
        )
        out = tmp_path / "outz"
        assert main(["simulate", "--config", cfg, "--out", str(out), "--quiet"]) == 0
        rows = [l.split(",") for l in (out / "phase_diagram.csv").read_text().splitlines()[2:]]
        assert rows[0][3] == "breakeven"  # eta = 0 cell

    def test_no_flip_exits_one_with_partial_output(self, tmp_path):
        cfg = write_json(
            tmp_path / "simflip.json",
            {
                "etas": [0.001],
                "batch_sizes": [100],
                "alpha": 0.0,
                "curvatures": {"kind": "constant", "value": 0.001, "count": 100},
                "growth": {
                    "direction": "increasing_from_stable",
                    "lambda0": 0.0001, "rho": 1.0001, "psi0": 1.0, "max_steps": 10,
                },
            },
        )
        out = tmp_path / "outflip"
        assert main(["simulate", "--config", cfg, "--out", str(out), "--quiet"]) == 1
        assert (out / "growth_dynamics.csv").exists()
        assert (out / "breakeven_table.csv").exists()

    def test_mc_validation_close_to_closed_form(self, tmp_path):
        cfg = write_json(
            tmp_path / "simmc.json",
            {
                "etas": [0.1],
                "batch_sizes": [10],
                "curvatures": {"kind": "uniform", "low": 0.5, "high": 1.5, "count": 60, "seed": 1},
                "monte_carlo": {"cases": 2, "steps": 150, "n_traj": 4000, "seed": 9},
            },
        )
        out = tmp_path / "outmc"
        assert main(["simulate", "--config", cfg, "--out", str(out), "--quiet"]) == 0
        for line in (out / "mc_validation.csv").read_text().splitlines()[2:]:
            assert float(line.split(",")[-1]) < 0.02


class TestTrain:
    def test_exit_zero_and_valid_schema(self, train_config, tmp_path):
        out = tmp_path / "run"
        assert main(["train", "--config", train_config, "--out", str(out), "--quiet"]) == 0
        text = (out / "metrics.jsonl").read_text()
        validate_metric_log(text)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["summary"]["diverged"] is False
        assert "config_hash" in summary

    def test_byte_identical_rerun(self, train_config, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["train", "--config", train_config, "--out", str(out1), "--quiet"])
        main(["train", "--config", train_config, "--out", str(out2), "--quiet"])
        assert (out1 / "metrics.jsonl").read_bytes() == (out2 / "metrics.jsonl").read_bytes()
        assert (out1 / "summary.json").read_bytes() == (out2 / "summary.json").read_bytes()

    def test_negative_eta_schema_error_exit_2(self, train_config, tmp_path):
        assert main(
            ["train", "--config", train_config, "--out", str(tmp_path / "x"), "--eta", "-0.1", "--quiet"]
        ) == 2

    def test_missing_config_exit_3(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path), "--quiet"]) == 3

    def test_flag_overrides_echoed_in_metadata(self, train_config, tmp_path):
        out = tmp_path / "ov"
        main(["train", "--config", train_config, "--out", str(out), "--eta", "0.2",
              "--batch-size", "16", "--quiet"])
        meta = json.loads((out / "metrics.jsonl").read_text().splitlines()[0])
        assert meta["config"]["eta"] == 0.2
        assert meta["config"]["batch_size"] == 16


class TestSweepCli:
    def test_sweep_writes_cells_and_verdicts(self, tmp_path, train_config):
        cfg = json.loads(Path(train_config).read_text())
        cfg["axis"] = {"name": "eta", "values": [0.02, 0.1]}
        cfg["seeds"] = [0, 1]
        path = write_json(tmp_path / "sweep.json", cfg)
        out = tmp_path / "sweep_out"
        assert main(["sweep", "--config", path, "--out", str(out), "--quiet"]) == 0
        report = json.loads((out / "sweep_report.json").read_text())
        assert set(report["verdicts"]) == {
            "variance_reduction_lambda_k1",
            "variance_reduction_lambda_h1",
            "variance_reduction_trace_k",
            "preconditioning_cond_ratio",
        }
        assert len(report["cells"]) == 4
        for cell in report["cells"]:
            assert (out / cell["log"]).exists()
            validate_metric_log((out / cell["log"]).read_text())

    def test_single_axis_value_exit_2(self, tmp_path, train_config):
        cfg = json.loads(Path(train_config).read_text())
        cfg["axis"] = {"name": "eta", "values": [0.05]}
        path = write_json(tmp_path / "sweep1.json", cfg)
        assert main(["sweep", "--config", path, "--out", str(tmp_path / "o"), "--quiet"]) == 2


class TestReportCli:
    @pytest.fixture
    def log_dir(self, tmp_path, train_config):
        out = tmp_path / "run"
        main(["train", "--config", train_config, "--out", str(out), "--quiet"])
        return out

    def test_svg_golden_reproducibility(self, tmp_path, log_dir):
        repct = {
            "logs": [str(log_dir / "metrics.jsonl")],
            "panels": [{"y": "lambda_k1", "x": "step"}],
        }
        cfg = write_json(tmp_path / "rep.json", repct)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["report", "--config", cfg, "--out", str(out1), "--quiet"]) == 0
        assert main(["report", "--config", cfg, "--out", str(out2), "--quiet"]) == 0
        a = (out1 / "panel_00_lambda_k1.svg").read_bytes()
        b = (out2 / "panel_00_lambda_k1.svg").read_bytes()
        assert a == b
        assert a.startswith(b"<!-- config_hash=")

    def test_unknown_metric_exit_2(self, tmp_path, log_dir):
        cfg = write_json(
            tmp_path / "rep2.json",
            {"logs": [str(log_dir / "metrics.jsonl")], "panels": [{"y": "nonsense"}]},
        )
        assert main(["report", "--config", cfg, "--out", str(tmp_path / "r"), "--quiet"]) == 2

    def test_empty_panels_exit_2(self, tmp_path, log_dir):
        cfg = write_json(
            tmp_path / "rep3.json",
            {"logs": [str(log_dir / "metrics.jsonl")], "panels": []},
        )
        assert main(["report", "--config", cfg, "--out", str(tmp_path / "r"), "--quiet"]) == 2

    def test_log_y_clamps_with_footnote(self, tmp_path, log_dir):
        cfg = write_json(
            tmp_path / "rep4.json",
            {
                "logs": [str(log_dir / "metrics.jsonl")],
                "panels": [{"y": "delta_loss", "x": "step", "log_y": True}],
            },
        )
        out = tmp_path / "r4"
        assert main(["report", "--config", cfg, "--out", str(out), "--quiet"]) == 0
        svg = (out / "panel_00_delta_loss.svg").read_text()
        # delta_loss takes both signs in general; when it does, the clamp
        # footnote must be present
        if "clamped" in svg:
            assert "non-positive" in svg

    def test_summary_table_lists_all_logs(self, tmp_path, log_dir):
        cfg = write_json(
            tmp_path / "rep5.json",
            {"logs": [str(log_dir / "metrics.jsonl")], "panels": [{"y": "train_loss"}]},
        )
        out = tmp_path / "r5"
        main(["report", "--config", cfg, "--out", str(out), "--quiet"])
        md = (out / "summary.md").read_text()
        assert "metrics" in md
        assert "max lambda_k1" in md
