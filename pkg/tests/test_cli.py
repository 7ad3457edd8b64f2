import csv
import subprocess
import sys

import pytest

from corrfilt.cli import main
from corrfilt.config import dump_config, load_config, parse_config
from corrfilt.errors import ConfigError
from corrfilt.experiment import ScenarioConfig


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestConfigFile:
    def test_round_trip(self):
        cfg = ScenarioConfig(gamma_bar=0.9, seed=7, mode="theorem", cross_terms=False)
        assert load_config(None, parse_config(dump_config(cfg))) == cfg

    def test_sections_and_types(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[signal]\nb1 = 0.2\ninit = paper-transient\n"
                        "[noise]\nD = 0.5\n[experiment]\nruns = 10\ncross_terms = no\n"
                        "mode = none\n")
        cfg = load_config(str(path))
        assert (cfg.b1, cfg.init, cfg.D, cfg.runs, cfg.cross_terms, cfg.mode) == \
            (0.2, "paper-transient", 0.5, 10, False, None)

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[experiment]\nruns = 10\nseed = 3\n")
        cfg = load_config(str(path), {"runs": 4, "seed": None})
        assert cfg.runs == 4 and cfg.seed == 3

    @pytest.mark.parametrize("text,key", [
        ("[noise]\nbogus = 1\n", "bogus"),
        ("[extra]\nx = 1\n", "extra"),
        ("[experiment]\nruns = ten\n", "runs"),
        ("[experiment]\ngamma_bar = 2\n", "gamma_bar"),
        ("[experiment]\ncross_terms = maybe\n", "cross_terms"),
    ])
    def test_errors_name_the_key(self, tmp_path, text, key):
        path = tmp_path / "c.ini"
        path.write_text(text)
        with pytest.raises(ConfigError) as info:
            load_config(str(path))
        assert info.value.key == key and key in str(info.value)

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/c.ini")

    def test_no_config_gives_defaults(self):
        assert load_config() == ScenarioConfig()


class TestCommands:
    def test_simulate_row_count(self, tmp_path, capsys):
        assert main(["simulate", "--steps", "5", "--runs", "1", "--out-dir", str(tmp_path)]) == 0
        data = rows(tmp_path / "trajectory_0000.csv")
        assert data[0] == ["k", "x", "v", "z", "y", "gamma", "lambda"] and len(data) == 6
        out = capsys.readouterr().out
        assert out.count("\n") == 1 and "simulate" in out

    def test_gamma_out_of_range(self, tmp_path, capsys):
        code = main(["reproduce", "--figure", "1", "--gamma-bar", "1.5", "--out-dir", str(tmp_path)])
        err = capsys.readouterr().err
        assert code == 2 and "gamma_bar" in err and "[0, 1]" in err
        assert not list(tmp_path.iterdir())

    def test_unknown_flag(self, capsys):
        assert main(["simulate", "--bogus"]) == 2

    def test_unknown_config_key(self, tmp_path, capsys):
        path = tmp_path / "c.ini"
        path.write_text("[attacks]\nsigma_x = 1\n")
        assert main(["filter", "--config", str(path), "--out-dir", str(tmp_path)]) == 2
        assert "sigma_x" in capsys.readouterr().err

    def test_invalid_model_is_config_error(self, tmp_path, capsys):
        path = tmp_path / "c.ini"
        path.write_text("[signal]\nb1 = 0.0\nb2 = 0.5\n")
        assert main(["simulate", "--config", str(path), "--out-dir", str(tmp_path)]) == 2

    def test_numerical_failure_exit_code(self, tmp_path, capsys):
        path = tmp_path / "c.ini"
        path.write_text("[noise]\nsigma_u = 0\nsigma_v0 = 0\n[experiment]\ngamma_bar = 0\n"
                        "lambda_bar = 0\npolicy = fixed\nruns = 3\nsteps = 5\n")
        code = main(["reproduce", "--figure", "1", "--config", str(path),
                     "--out-dir", str(tmp_path)])
        err = capsys.readouterr().err
        assert code == 1 and "k=1" in err and "run=0" in err and "seed=" in err

    def test_filter_and_smooth_from_trajectory(self, tmp_path, capsys):
        main(["simulate", "--steps", "12", "--out-dir", str(tmp_path)])
        traj = str(tmp_path / "trajectory_0000.csv")
        assert main(["filter", "--input", traj, "--out-dir", str(tmp_path)]) == 0
        f = rows(tmp_path / "filter.csv")
        assert f[0][:3] == ["k", "x_filt", "x_pred"] and len(f) == 13
        assert main(["smooth", "--input", traj, "--lag", "2", "--out-dir", str(tmp_path)]) == 0
        s = rows(tmp_path / "smooth.csv")
        assert s[0] == ["k", "L", "x_filt", "x_smooth_h2"] and len(s) == 13
        assert [r[1] for r in s[-3:]] == ["12", "12", "12"] and s[1][1] == "3"

    def test_smooth_lag_zero_matches_filter(self, tmp_path, capsys):
        assert main(["smooth", "--lag", "0", "--steps", "8", "--out-dir", str(tmp_path)]) == 0
        s = rows(tmp_path / "smooth.csv")[1:]
        assert all(r[2] == r[3] for r in s)

    def test_missing_input(self, tmp_path, capsys):
        assert main(["filter", "--input", str(tmp_path / "none.csv"),
                     "--out-dir", str(tmp_path)]) == 2

    def test_reproduce_outputs(self, tmp_path, capsys):
        assert main(["reproduce", "--figure", "2", "--runs", "2", "--steps", "4",
                     "--out-dir", str(tmp_path)]) == 0
        data = rows(tmp_path / "figure2.csv")
        assert data[0] == ["lambda_bar", "gamma_bar", "mean_rmse_filter", "mean_rmse_smoother_h2"]
        assert len(data) == 19
        assert (tmp_path / "figure2.svg").read_text().startswith("<svg")
        assert (tmp_path / "manifest.json").exists()

    def test_reproduce_figure3_script(self, tmp_path, capsys):
        assert main(["reproduce", "--figure", "3", "--runs", "2", "--steps", "4",
                     "--emit-plot", "script", "--out-dir", str(tmp_path)]) == 0
        assert rows(tmp_path / "figure3.csv")[0][:2] == ["gamma_bar", "lambda_bar"]
        script = (tmp_path / "plot_figure3.py").read_text()
        compile(script, "plot_figure3.py", "exec")

    def test_sweep(self, tmp_path, capsys):
        assert main(["sweep", "--runs", "2", "--steps", "4", "--gamma-grid", "0.5,0.9",
                     "--lambda-grid", "0.2", "--out-dir", str(tmp_path)]) == 0
        data = rows(tmp_path / "sweep.csv")
        assert data[0] == ["gamma_bar", "lambda_bar", "estimator", "mean_rmse"]
        assert len(data) == 5
        assert main(["sweep", "--gamma-grid", "1.2", "--out-dir", str(tmp_path)]) == 2

    def test_oracle_check(self, capsys):
        assert main(["oracle-check", "--instances", "10"]) == 0
        out = capsys.readouterr().out
        dev = float(out.split("max deviation ")[1].split()[0])
        assert dev <= 1e-8

    def test_same_invocation_identical_files(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert main(["reproduce", "--figure", "1", "--runs", "5", "--seed", "7",
                         "--out-dir", str(d)]) == 0
        for name in ("figure1.csv", "figure1.svg"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "corrfilt", "simulate", "--steps", "3",
                               "--out-dir", str(tmp_path)], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.startswith("simulate:")
        proc = subprocess.run([sys.executable, "-m", "corrfilt", "simulate", "--steps", "0",
                               "--out-dir", str(tmp_path)], capture_output=True, text=True)
        assert proc.returncode == 2 and "steps" in proc.stderr
