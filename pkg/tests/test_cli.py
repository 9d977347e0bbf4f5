"""End-to-end CLI behavior: subcommands, config files, outputs, determinism."""

import json

import numpy as np
import pytest

import flowcast as fc
from flowcast.cli import main

Q = fc.QuarterId.parse

WORLD_CFG = """
states = SE,TE,PE,U,IN
start = 2016Q1
quarters = 13
persons = 8000
seed = 31
initial_shares = 0.125,0.085,0.375,0.060,0.355
matrix.SE = 0.90,0.02,0.03,0.02,0.03
matrix.TE = 0.02,0.74,0.10,0.06,0.08
matrix.PE = 0.02,0.02,0.90,0.02,0.04
matrix.U  = 0.02,0.12,0.08,0.53,0.25
matrix.IN = 0.02,0.03,0.03,0.05,0.87
tstar = 2018Q1
shift.TE.PE = 0.6
"""


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("world")
    cfg_path = root / "world.cfg"
    cfg_path.write_text(WORLD_CFG)
    out = root / "synth"
    assert main(["synth", "--config", str(cfg_path), "--out", str(out)]) == 0
    return out


EVAL_ARGS = ["--window", "2016Q1:2018Q1", "--tstar", "2018Q1", "--horizon", "4",
             "--population", "3.8e7", "--bootstrap", "149", "--seed", "7"]


class TestSynth:
    def test_outputs_exist_and_parse(self, synth_dir):
        records = fc.parse_panel(synth_dir / "panel.csv")
        assert len(records) > 10000
        truth = json.loads((synth_dir / "truth.json").read_text())
        assert truth["t_star"] == "2018Q1"
        assert "2016Q2" in truth["matrices"]


class TestEvaluate:
    def test_writes_reports_and_is_deterministic(self, synth_dir, tmp_path):
        out1 = tmp_path / "run1"
        out2 = tmp_path / "run2"
        base = ["evaluate", "--input", str(synth_dir / "panel.csv"), "--out"]
        assert main(base + [str(out1)] + EVAL_ARGS) == 0
        assert main(base + [str(out2)] + EVAL_ARGS + ["--threads", "2"]) == 0

        for name in ("effects.json", "table2a.csv", "table2b.csv", "table2c.csv",
                     "table2c_significance.csv", "series_TE_PE.csv",
                     "series_share_TE.csv", "shares.png", "transitions.png"):
            assert (out1 / name).exists(), name
        assert (out1 / "effects.json").read_bytes() == (out2 / "effects.json").read_bytes()

        effects = json.loads((out1 / "effects.json").read_text())
        assert effects["metadata"]["t_star"] == "2018Q1"
        assert effects["cumulative_effects"]["TE"]["PE"]["point"] > 0

        table = (out1 / "table2b.csv").read_text().splitlines()
        assert table[0] == ",SE,TE,PE,U,IN"
        assert table[2].startswith("Difference,")

    def test_no_figures_flag(self, synth_dir, tmp_path):
        out = tmp_path / "nofig"
        assert main(["evaluate", "--input", str(synth_dir / "panel.csv"),
                     "--out", str(out), "--no-figures"] + EVAL_ARGS) == 0
        assert not (out / "shares.png").exists()
        assert (out / "effects.json").exists()

    def test_filter_flag(self, synth_dir, tmp_path):
        out = tmp_path / "female"
        assert main(["evaluate", "--input", str(synth_dir / "panel.csv"),
                     "--out", str(out), "--filter", "sex=F"] + EVAL_ARGS) == 0
        effects = json.loads((out / "effects.json").read_text())
        assert effects["metadata"]["filter"] == "sex=F"

    def test_missing_input_is_io_error(self, tmp_path, capsys):
        out = tmp_path / "never"
        code = main(["evaluate", "--input", str(tmp_path / "nope.csv"),
                     "--out", str(out)] + EVAL_ARGS)
        assert code == 3
        err = json.loads(capsys.readouterr().out.strip())
        assert "nope.csv" in err["message"]
        assert not out.exists()  # no partial outputs

    def test_bad_window_is_usage_error(self, synth_dir, tmp_path, capsys):
        code = main(["evaluate", "--input", str(synth_dir / "panel.csv"),
                     "--out", str(tmp_path / "x"), "--window", "2016Q1:2017Q4",
                     "--tstar", "2018Q1", "--population", "1e6"])
        assert code == 2
        assert json.loads(capsys.readouterr().out.strip())["error"]

    def test_config_file_with_flag_override(self, synth_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            f"input = {synth_dir / 'panel.csv'}\n"
            "window = 2016Q1:2018Q1\n"
            "tstar = 2018Q1\n"
            "horizon = 4\n"
            "population = 3.8e7\n"
            "bootstrap = 149\n"
            "seed = 3\n"
            f"out = {tmp_path / 'from_file'}\n"
            "figures = 0\n"
        )
        assert main(["evaluate", "--config", str(cfg)]) == 0
        effects = json.loads((tmp_path / "from_file" / "effects.json").read_text())
        assert effects["metadata"]["master_seed"] == 3
        out2 = tmp_path / "override"
        assert main(["evaluate", "--config", str(cfg), "--seed", "8",
                     "--out", str(out2)]) == 0
        assert json.loads((out2 / "effects.json").read_text())["metadata"]["master_seed"] == 8

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("inpoot = x.csv\n")
        assert main(["evaluate", "--config", str(cfg)]) == 2


class TestPlaceboAndShift:
    def test_placebo_on_pre_intervention_window(self, synth_dir, tmp_path):
        out = tmp_path / "placebo"
        code = main(["placebo", "--input", str(synth_dir / "panel.csv"),
                     "--out", str(out), "--window", "2016Q1:2017Q1",
                     "--tstar", "2017Q1", "--horizon", "3",
                     "--population", "3.8e7", "--bootstrap", "149", "--seed", "5",
                     "--true-tstar", "2018Q1", "--no-figures"])
        assert code == 0
        report = json.loads((out / "placebo.json").read_text())
        assert report["passed"] is True
        assert report["effect"]["metadata"]["placebo"] is True

    def test_placebo_overlap_rejected(self, synth_dir, tmp_path):
        code = main(["placebo", "--input", str(synth_dir / "panel.csv"),
                     "--out", str(tmp_path / "x"), "--window", "2016Q1:2017Q3",
                     "--tstar", "2017Q3", "--horizon", "3",
                     "--population", "3.8e7", "--bootstrap", "149", "--seed", "5",
                     "--true-tstar", "2018Q1"])
        assert code == 2

    def test_shift_zero_matches_evaluate(self, synth_dir, tmp_path):
        out_eval = tmp_path / "eval"
        out_shift = tmp_path / "shift"
        base = ["--input", str(synth_dir / "panel.csv"), "--no-figures"] + EVAL_ARGS
        assert main(["evaluate", "--out", str(out_eval)] + base) == 0
        assert main(["shift", "--new-tstar", "2018Q1", "--out", str(out_shift)] + base) == 0
        shift = json.loads((out_shift / "shift.json").read_text())
        assert shift["shift"] == 0
        assert (out_shift / "base" / "effects.json").read_bytes() == \
            (out_eval / "effects.json").read_bytes()


class TestEquilibrium:
    def test_uniform_matrix_reports_one_third(self, tmp_path, capsys):
        path = tmp_path / "m.csv"
        fc.TransitionMatrix(fc.StateSpace(("T", "P", "U")),
                            np.full((3, 3), 1 / 3)).to_csv(path)
        out = tmp_path / "eq"
        assert main(["equilibrium", "--matrix", str(path), "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        payload = json.loads(stdout.split("\n\n")[0])
        assert payload["closed_form_piU"] == pytest.approx(1 / 3, abs=1e-12)
        saved = json.loads((out / "equilibrium.json").read_text())
        assert saved["stationary"]["values"] == pytest.approx([1 / 3] * 3)

    def test_reducible_matrix_is_domain_error(self, tmp_path):
        path = tmp_path / "m.csv"
        fc.TransitionMatrix(fc.StateSpace(("T", "P", "U")), np.eye(3)).to_csv(path)
        assert main(["equilibrium", "--matrix", str(path)]) == 4
