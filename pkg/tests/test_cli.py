"""Experiment harness: configs, rate fits, pipeline, and the CLI surface."""

import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from marginflow.cli import (ExperimentConfig, build_dataset, build_model,
                            default_config, emit_report, fit_rates, main,
                            orders_from_config, run_experiment,
                            zeta_tail_fraction)


MLP_BLOCKS = [
    {"kind": "linear", "d_in": 3, "d_out": 4},
    {"kind": "activation", "activation": "relu", "dim": 4},
    {"kind": "linear", "d_in": 4, "d_out": 4},
    {"kind": "activation", "activation": "relu", "dim": 4},
    {"kind": "linear", "d_in": 4, "d_out": 1},
]


class TestConfig:
    def test_missing_keys_rejected(self):
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"model": {}})

    def test_roundtrip(self, tmp_path):
        cfg = default_config("toy")
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg.to_dict()))
        back = ExperimentConfig.from_file(path)
        assert back.to_dict() == cfg.to_dict()

    def test_unknown_fixture(self):
        with pytest.raises(ValueError):
            default_config("mnist")

    def test_declared_order_must_match_network(self):
        cfg = ExperimentConfig(model={"name": "network", "blocks": MLP_BLOCKS},
                               dataset={"generator": "toy"},
                               order={"M": 5, "p": [0.0, 1.0]},
                               dynamics={"mode": "gf"})
        with pytest.raises(ValueError):
            build_model(cfg)


class TestAssembly:
    def test_mlp_orders(self):
        desc = orders_from_config(MLP_BLOCKS)
        assert desc.m_param == 3 and desc.m_input == 1

    def test_build_network_model(self):
        cfg = ExperimentConfig(model={"name": "network", "blocks": MLP_BLOCKS},
                               dataset={"generator": "toy"}, order="auto",
                               dynamics={"mode": "gf"})
        model, M, p, q = build_model(cfg)
        assert M == 3 and model.d_in == 3
        assert model.forward(np.zeros(model.dim), np.ones(3)) == 0.0

    def test_dataset_generators(self):
        cfg = default_config("toy")
        d = build_dataset(cfg)
        assert d.n == 8 and d.d == 2
        cfg = default_config("example35")
        d = build_dataset(cfg)
        assert d.n == 1


class TestFitRates:
    def test_exact_law_recovers_slope(self):
        # synthetic log_loss = -log t - (2 - 2/M) log log t, M = 2
        t = np.logspace(1, 4, 200)
        ll = -np.log(t) - 1.0 * np.log(np.log(t))
        rho = (np.log(t)) ** 0.5
        fit = fit_rates(t, ll, rho, 2)
        assert fit.loss_slope == pytest.approx(-1.0, abs=1e-9)
        assert fit.r_squared == pytest.approx(1.0)
        lo, hi = fit.norm_band
        assert hi / lo == pytest.approx(1.0, abs=1e-9)

    def test_m1_no_correction(self):
        t = np.logspace(1, 3, 100)
        ll = -np.log(t) + math.log(3.0)
        fit = fit_rates(t, ll, np.log(t), 1)
        assert fit.loss_slope == pytest.approx(-1.0, abs=1e-9)

    def test_insufficient_window(self):
        t = np.linspace(100, 150, 30)
        with pytest.raises(ValueError):
            fit_rates(t, -np.log(t), np.sqrt(t), 2)

    def test_zeta_tail_fraction(self):
        t = np.logspace(0, 3, 50)
        # all movement early: tail fraction near zero
        z = np.minimum(np.arange(50, dtype=float), 10.0)
        frac = zeta_tail_fraction(t, z)
        assert frac == pytest.approx(0.0, abs=1e-12)


class TestRunExperiment:
    def test_example35_counterexample(self, tmp_path):
        cfg = default_config("example35")
        cfg.dynamics["horizon"] = 1e3
        summary = run_experiment(cfg, out_dir=str(tmp_path))
        assert not summary["errors"], summary["errors"]
        assert summary["dynamics"]["sep_reached"] is False
        assert summary["dynamics"]["note"] == "separability never reached"
        ce = summary["counterexample"]
        assert ce["always_nonpositive"] and ce["loss_floor_held"]
        assert summary["passed"]
        assert (tmp_path / "trajectory.csv").exists()
        assert (tmp_path / "summary.json").exists()

    def test_toy_pipeline_short(self):
        cfg = default_config("toy")
        cfg.dynamics["horizon"] = 2e3
        summary = run_experiment(cfg)
        assert not summary["errors"], summary["errors"]
        assert summary["dynamics"]["sep_reached"]
        assert summary["margins"]["monotone_violations"] == []
        assert summary["kkt"]["final"]["ok"]
        assert summary["passed"]

    def test_deterministic(self, tmp_path):
        cfg = default_config("toy")
        cfg.dynamics["horizon"] = 50.0
        a = tmp_path / "a"
        b = tmp_path / "b"
        run_experiment(cfg, out_dir=str(a))
        run_experiment(cfg, out_dir=str(b))
        assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()

    def test_stage_failure_recorded(self):
        cfg = default_config("toy")
        cfg.model["name"] = "no_such_model"
        summary = run_experiment(cfg)
        assert "orders" in summary["errors"]
        assert not summary["passed"]


class TestEmitReport:
    def test_report_mentions_all_completed_checks(self):
        cfg = default_config("toy")
        cfg.dynamics["horizon"] = 100.0
        summary = run_experiment(cfg)
        text = emit_report(summary)
        assert "overall:" in text
        for name in summary["checks"]:
            assert name in text


class TestCommandLine:
    def test_orders_command(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({
            "model": {"name": "network", "blocks": MLP_BLOCKS},
            "dataset": {"generator": "toy"}, "order": "auto",
            "dynamics": {"mode": "gf"}}))
        res = CliRunner().invoke(main, ["--config", str(path), "orders"])
        assert res.exit_code == 0, res.output
        assert json.loads(res.output)["M"] == 3

    def test_missing_config_is_usage_error(self):
        res = CliRunner().invoke(main, ["orders"])
        assert res.exit_code == 2

    def test_bad_config_is_usage_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        res = CliRunner().invoke(main, ["--config", str(path), "orders"])
        assert res.exit_code == 2

    def test_run_and_report_roundtrip(self, tmp_path):
        path = tmp_path / "cfg.json"
        cfg = default_config("example35")
        cfg.dynamics["horizon"] = 100.0
        path.write_text(json.dumps(cfg.to_dict()))
        out = tmp_path / "out"
        res = CliRunner().invoke(main, ["--config", str(path),
                                        "--out-dir", str(out), "run"])
        assert res.exit_code == 0, res.output
        res = CliRunner().invoke(main, ["report", str(out / "summary.json")])
        assert res.exit_code == 0
        assert "overall: PASS" in res.output

    def test_rates_command(self, tmp_path):
        cfg = default_config("toy")
        cfg.dynamics["horizon"] = 2e3
        out = tmp_path / "out"
        run_experiment(cfg, out_dir=str(out))
        res = CliRunner().invoke(main, ["rates", str(out / "trajectory.csv"),
                                        "--order", "2"])
        assert res.exit_code == 0, res.output
