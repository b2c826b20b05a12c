import csv
import json

import pytest

import amod.flowopt
from amod.cli import main
from amod.errors import NumericalFailure
from amod.model import load_config
from amod.plots import PlotSpec, emit_plot
from amod.errors import MalformedCsv


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestGen:
    def test_writes_valid_network_config(self, tmp_path, capsys):
        path = tmp_path / "net.json"
        code, out, _ = run(capsys, "gen", "--m", "4", "--seed", "3", "--out", str(path))
        assert code == 0
        cfg = load_config(path)
        assert cfg.network.m == 4
        assert cfg.extras["seed"] == 3

    def test_degenerate_support(self, tmp_path, capsys):
        path = tmp_path / "net.json"
        code, _, _ = run(
            capsys, "gen", "--m", "3", "--support", "2", "2", "--out", str(path)
        )
        assert code == 0
        assert all(p == 2.0 for p in load_config(path).network.prices)


class TestSolve:
    def _config(self, tmp_path, capsys, m=3):
        path = tmp_path / "net.json"
        run(capsys, "gen", "--m", str(m), "--seed", "1", "--out", str(path))
        raw = json.loads(path.read_text())
        raw["fleet"] = {"beta0": 0.1, "xi": 0.003, "v_max": 3, "tau": 10, "p_s": 0.6}
        path.write_text(json.dumps(raw))
        return path

    def test_solve_writes_outputs(self, tmp_path, capsys):
        cfg = self._config(tmp_path, capsys)
        out_dir = tmp_path / "results"
        code, out, _ = run(capsys, "solve", "--config", str(cfg), "--out", str(out_dir))
        assert code == 0
        assert "profit=" in out
        assert (out_dir / "solution_nodes.csv").exists()
        assert (out_dir / "solution_flows.csv").exists()
        assert (out_dir / "solution_summary.json").exists()

    def test_invalid_network_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(
            json.dumps(
                {
                    "network": {
                        "m": 2,
                        "prices": [1, 1],
                        "arrival_rates": [1, 1],
                        "routing": [[0, 0.9], [1, 0]],
                        "wtp_max": 40,
                    },
                    "fleet": {"beta0": 0.1, "xi": 0.0, "v_max": 1, "tau": 10},
                }
            )
        )
        code, _, err = run(capsys, "solve", "--config", str(path), "--out", str(tmp_path))
        assert code == 2
        assert "row 0" in err

    def test_missing_file_exits_2(self, tmp_path, capsys):
        code, _, _ = run(capsys, "solve", "--config", str(tmp_path / "nope.json"))
        assert code == 2

    def test_solver_failure_exits_3(self, tmp_path, capsys, monkeypatch):
        cfg = self._config(tmp_path, capsys)

        def boom(*a, **k):
            raise NumericalFailure("forced failure", status="MaxIterations")

        monkeypatch.setattr(amod.flowopt, "solve", boom)
        code, _, err = run(capsys, "solve", "--config", str(cfg), "--out", str(tmp_path))
        assert code == 3
        assert "forced failure" in err


class TestPolicyCommands:
    def test_thresholds_csv(self, capsys):
        code, out, _ = run(
            capsys, "policy", "thresholds", "--p-min", "0.8", "--p-max", "3", "--v-max", "9"
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "v,C_v"
        assert len(lines) == 11
        assert lines[1] == "0,3"
        assert lines[2].startswith("1,1.9")

    def test_pavg_scalar_digits(self, capsys):
        code, out, _ = run(
            capsys, "policy", "pavg", "--p-min", "0.8", "--p-max", "3", "--v-max", "9"
        )
        assert code == 0
        assert out.strip() == "1.1303929038"

    def test_battery(self, capsys):
        code, out, _ = run(
            capsys, "policy", "battery", "--p-min", "0.8", "--p-max", "3", "--xi", "0.003"
        )
        assert code == 0
        assert "v_star=33" in out  # first capacity whose marginal saving drops below xi
        assert "p_avg=0.914891" in out

    def test_rebalance(self, capsys):
        code, out, _ = run(
            capsys,
            "policy",
            "rebalance",
            "--p-min", "0.8", "--p-max", "3",
            "--v-max", "9", "--p-s", "0.6",
        )
        assert code == 0
        assert "b=1.17057142857" in out
        assert "n_star=0.560804" in out
        assert "p_avg_r=1.06666" in out


class TestSimCommands:
    def test_sim_policy_flags(self, capsys):
        code, out, _ = run(
            capsys,
            "sim", "policy",
            "--p-min", "0.8", "--p-max", "3", "--v-max", "3",
            "--seed", "1", "--horizon", "8000", "--replicates", "4",
        )
        assert code == 0
        assert "p_avg=" in out and "charging_fraction=" in out

    def test_sim_rebalance_sweep_csv(self, tmp_path, capsys):
        out_csv = tmp_path / "sweep.csv"
        code, out, _ = run(
            capsys,
            "sim", "rebalance",
            "--p-min", "0.8", "--p-max", "3", "--v-max", "4",
            "--p-s", "0.6", "--gammas", "0,1",
            "--seed", "1", "--horizon", "8000", "--replicates", "4",
            "--out", str(out_csv),
        )
        assert code == 0
        with open(out_csv) as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["gamma", "mean_cost", "ci_half", "measured_n"]
        assert len(rows) == 2

    def test_sim_brute(self, capsys):
        code, out, _ = run(
            capsys,
            "sim", "brute",
            "--p-min", "0.8", "--p-max", "3", "--v-max", "2", "--grid", "5",
            "--seed", "1", "--horizon", "6000", "--replicates", "2",
        )
        assert code == 0
        assert "cost=" in out

    def test_missing_sections_exit_2(self, capsys):
        code, _, err = run(capsys, "sim", "policy", "--seed", "1")
        assert code == 2
        assert "p-min" in err or "config" in err


class TestExpCommands:
    def test_fig_c_tiny(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(
            json.dumps(
                {
                    "gamma_values": [0.0, 1.0],
                    "replicates": 2,
                    "sim_horizon": 6000,
                }
            )
        )
        code, out, _ = run(
            capsys,
            "exp", "fig-c",
            "--config", str(cfg_path), "--seed", "2", "--out", str(tmp_path / "res"),
        )
        assert code == 0
        assert (tmp_path / "res" / "fig_c.csv").exists()
        assert (tmp_path / "res" / "fig_c.svg").exists()
        assert (tmp_path / "res" / "fig_c_summary.json").exists()

    def test_fig_a_tiny_no_plot(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(json.dumps({"networks": 2, "m": 3, "v_max_values": [1, 2]}))
        code, out, _ = run(
            capsys,
            "exp", "fig-a",
            "--config", str(cfg_path), "--out", str(tmp_path / "res"), "--no-plot",
        )
        assert code == 0
        assert (tmp_path / "res" / "fig_a.csv").exists()
        assert not (tmp_path / "res" / "fig_a.svg").exists()

    def test_out_dir_env_override(self, tmp_path, capsys, monkeypatch):
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(json.dumps({"networks": 1, "m": 3, "v_max_values": [1]}))
        override = tmp_path / "env_dir"
        monkeypatch.setenv("AMOD_OUT_DIR", str(override))
        code, _, _ = run(
            capsys,
            "exp", "fig-b",
            "--config", str(cfg_path), "--out", str(tmp_path / "ignored"), "--no-plot",
        )
        assert code == 0
        assert (override / "fig_b.csv").exists()
        assert not (tmp_path / "ignored").exists()


class TestPlots:
    def test_fig_a_svg(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.json"
        cfg_path.write_text(json.dumps({"networks": 2, "m": 3, "v_max_values": [1, 2]}))
        run(capsys, "exp", "fig-a", "--config", str(cfg_path), "--out", str(tmp_path / "r"))
        svg = tmp_path / "r" / "fig_a.svg"
        assert svg.exists()
        assert b"<svg" in svg.read_bytes()

    def test_empty_csv_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("n,approx_cost,exact_cost,ci_half\n")
        with pytest.raises(MalformedCsv):
            emit_plot(path, PlotSpec(kind="fig_c"))

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(MalformedCsv):
            emit_plot(path, PlotSpec(kind="fig_b"))

    def test_unknown_kind_rejected(self, tmp_path):
        path = tmp_path / "ok.csv"
        path.write_text("v_max,rebalancers_per_trip\n1,0.5\n")
        with pytest.raises(ValueError):
            emit_plot(path, PlotSpec(kind="mystery"))
