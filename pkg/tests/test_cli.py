"""CLI surface: exit codes, artifacts, help text, determinism."""

import json

import pytest

from performa.cli import CliInvocation, derived_seed, dispatch, main
from performa.predictor import PredictorParams


def run_cli(args):
    return main(list(args))


class TestExitCodes:
    def test_missing_config_is_config_error(self, tmp_path, capsys):
        assert run_cli(["run", "--config", str(tmp_path / "missing.toml")]) == 2
        assert "error" in capsys.readouterr().err

    def test_unknown_subcommand_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run_cli(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run_cli(["certify", "--bogus"])
        assert exc.value.code == 2

    def test_help_available_everywhere(self, capsys):
        for sub in ("run", "sweep", "certify", "counterexample", "gradcheck",
                    "oracle"):
            with pytest.raises(SystemExit) as exc:
                run_cli([sub, "--help"])
            assert exc.value.code == 0
            out = capsys.readouterr().out
            assert "--config" in out and "--seed" in out

    def test_dispatch_rejects_unknown(self):
        from performa.errors import ConfigError
        with pytest.raises(ConfigError):
            dispatch(CliInvocation(subcommand="nope"))


def small_args(tmp_path, extra=()):
    return ["--out", str(tmp_path), "--seed", "3",
            "--set", "synthetic.n_rows=60",
            "--set", "rrm.hidden_size=4",
            "--set", "rrm.inner_tol=1e-12",
            "--set", "rrm.max_rrm_iters=6", *extra]


class TestCommands:
    def test_run_writes_trace_and_checkpoint(self, tmp_path, capsys):
        assert run_cli(["run", "--delta", "0.9",
                        *small_args(tmp_path)]) == 0
        out = tmp_path / "run"
        csvs = list(out.glob("trace_*.csv"))
        params = list(out.glob("params_*.json"))
        assert len(csvs) == 1 and len(params) == 1
        PredictorParams.from_json(params[0].read_text())  # valid checkpoint

    def test_run_accepts_checkpoint_init(self, tmp_path):
        assert run_cli(["run", "--delta", "0.9", *small_args(tmp_path)]) == 0
        ckpt = next((tmp_path / "run").glob("params_*.json"))
        assert run_cli(["run", "--delta", "0.9",
                        *small_args(tmp_path,
                                    ("--set", f'init_params="{ckpt}"'))]) == 0

    def test_certify_pass_exit_zero(self, tmp_path, capsys):
        code = run_cli(["certify", "--delta", "0.9", "--pairs", "40",
                        *small_args(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "overall: PASS" in out
        report = json.loads((tmp_path / "run" / "certify_0.9.json").read_text())
        assert report["all_pass"] is True

    def test_counterexample_orbit(self, tmp_path, capsys):
        assert run_cli(["counterexample", "--steps", "8",
                        "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "period-2 orbit error     PASS" in out
        assert (tmp_path / "counterexample_orbit.csv").exists()

    def test_gradcheck(self, tmp_path, capsys):
        assert run_cli(["gradcheck", "--pairs", "20", "--seed", "1"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_oracle(self, tmp_path, capsys):
        assert run_cli(["oracle", "--delta", "0.9", "--steps", "3",
                        *small_args(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "fixed-point residual" in out
        assert (tmp_path / "run" / "oracle_distances.json").exists()

    def test_sweep_writes_report(self, tmp_path, capsys):
        code = run_cli(["sweep", "--set", "grid.deltas=[0.9]",
                        "--set", "grid.hidden_sizes=[4]",
                        "--set", "grid.seeds=[0]", "--jobs", "1",
                        *small_args(tmp_path)])
        assert code == 0
        report = json.loads((tmp_path / "run" / "report.json").read_text())
        assert report["cells"][0]["status"] == "ok"


class TestDeterminism:
    def test_run_and_certify_artifacts_identical_across_invocations(
            self, tmp_path):
        import filecmp
        for sub, extra in (("run", ("--delta", "0.9")),
                           ("certify", ("--delta", "0.9", "--pairs", "15"))):
            a, b = tmp_path / f"{sub}_a", tmp_path / f"{sub}_b"
            for out in (a, b):
                assert run_cli([sub, *extra, "--out", str(out), "--seed", "4",
                                "--set", "synthetic.n_rows=50",
                                "--set", "rrm.hidden_size=4",
                                "--set", "rrm.inner_tol=1e-12"]) == 0
            names = sorted(p.name for p in (a / "run").iterdir())
            assert names == sorted(p.name for p in (b / "run").iterdir())
            for n in names:
                assert filecmp.cmp(a / "run" / n, b / "run" / n,
                                   shallow=False), n


class TestSeedPlumbing:
    def test_derived_seed_stable(self):
        assert derived_seed(7, "data") == derived_seed(7, "data")
        assert derived_seed(7, "data") != derived_seed(7, "pairs")

    def test_env_out_dir_fallback(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("PERFORMA_OUT", str(tmp_path / "envout"))
        assert run_cli(["run", "--delta", "0.9", "--seed", "3",
                        "--set", "synthetic.n_rows=60",
                        "--set", "rrm.hidden_size=4",
                        "--set", "rrm.inner_tol=1e-12",
                        "--set", "rrm.max_rrm_iters=6"]) == 0
        assert (tmp_path / "envout" / "run").is_dir()
