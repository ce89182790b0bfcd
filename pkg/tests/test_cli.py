"""Tests for the command-line front end: config plumbing, schemas, exit
codes, and output determinism."""

import json
import math

import numpy as np
import pytest

from pmdlab.cli import main

EXACT_HEADER = (
    "p,tau,method,rho_plus,rho_minus,lambda,lambda_lo,lambda_hi,eta,B,B_plus,"
    "kkt_residual"
)
SWEEP_HEADER = (
    "method,p,n,tau,trials,mean_dbar2,std_dbar2,pos_err,neg_err,scaled_err,"
    "bound,violations"
)
TRAIN_HEADER = "step,J,emp_reward,min_logratio,max_logratio,lambda_mean,entropy,eps_opt"


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return lines[0], [dict(zip(header, line.split(","))) for line in lines[1:]]


class TestConfigResolution:
    def test_set_overrides_config_file(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"p_grid": [0.3], "tau_grid": [0.5]}))
        rc = main(
            [
                "exact",
                "--out",
                str(tmp_path),
                "--config",
                str(config),
                "--set",
                "p_grid=[0.7]",
            ]
        )
        assert rc == 0
        _, rows = read_csv(tmp_path / "exact.csv")
        assert {row["p"] for row in rows} == {"0.7"}
        assert {row["tau"] for row in rows} == {"0.5"}

    def test_seed_flag_wins(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"seed": 3}))
        rc = main(
            [
                "estimate",
                "--out",
                str(tmp_path),
                "--config",
                str(config),
                "--seed",
                "9",
                "--set",
                "p_grid=[0.2]",
                "--set",
                "n_grid=[4]",
                "--set",
                "trials=2",
            ]
        )
        assert rc == 0
        meta = json.loads((tmp_path / "estimate.csv.manifest.json").read_text())
        assert meta["seed"] == 9
        assert meta["config"]["seed"] == 9

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        rc = main(["exact", "--out", str(tmp_path), "--set", "gamma=0.5"])
        assert rc == 2
        assert "gamma" in capsys.readouterr().err

    def test_malformed_override_exits_2(self, tmp_path, capsys):
        rc = main(["exact", "--out", str(tmp_path), "--set", "p_grid"])
        assert rc == 2
        assert "KEY=VALUE" in capsys.readouterr().err

    def test_bad_config_file_exits_2(self, tmp_path, capsys):
        missing = main(["exact", "--out", str(tmp_path), "--config", str(tmp_path / "no.json")])
        assert missing == 2
        bad = tmp_path / "bad.json"
        bad.write_text("[1, 2]")
        assert main(["exact", "--out", str(tmp_path), "--config", str(bad)]) == 2
        assert "JSON object" in capsys.readouterr().err

    def test_rejects_bad_seed_and_jobs(self, tmp_path, capsys):
        assert main(["exact", "--out", str(tmp_path), "--seed", "-1"]) == 2
        assert "seed" in capsys.readouterr().err
        assert main(["exact", "--out", str(tmp_path), "--jobs", "0"]) == 2
        assert "jobs" in capsys.readouterr().err

    def test_out_falls_back_to_env_then_cwd(self, tmp_path, monkeypatch):
        env_dir = tmp_path / "env"
        monkeypatch.setenv("PMDLAB_OUT", str(env_dir))
        args = ["exact", "--set", "p_grid=[0.5]", "--set", "tau_grid=[1.0]"]
        assert main(args) == 0
        assert (env_dir / "exact.csv").exists()
        flag_dir = tmp_path / "flag"
        assert main(args + ["--out", str(flag_dir)]) == 0
        assert (flag_dir / "exact.csv").exists()
        monkeypatch.delenv("PMDLAB_OUT")
        cwd = tmp_path / "cwd"
        cwd.mkdir()
        monkeypatch.chdir(cwd)
        assert main(args) == 0
        assert (cwd / "exact.csv").exists()


class TestExact:
    def test_schema_and_closed_form_row(self, tmp_path):
        rc = main(
            [
                "exact",
                "--out",
                str(tmp_path),
                "--set",
                "p_grid=[0.5]",
                "--set",
                "tau_grid=[1.0]",
                "--set",
                'methods=["part"]',
            ]
        )
        assert rc == 0
        header, rows = read_csv(tmp_path / "exact.csv")
        assert header == EXACT_HEADER
        assert len(rows) == 1
        row = rows[0]
        assert row["method"] == "part"
        np.testing.assert_allclose(float(row["rho_plus"]), 1.462117, atol=5e-7)
        np.testing.assert_allclose(float(row["eta"]), 0.462117, atol=5e-7)
        assert float(row["lambda"]) == 0.0
        assert float(row["lambda_lo"]) == 0.0 and float(row["lambda_hi"]) == 0.0

    def test_mean_rows_carry_certified_multiplier(self, tmp_path):
        rc = main(["exact", "--out", str(tmp_path)])
        assert rc == 0
        _, rows = read_csv(tmp_path / "exact.csv")
        assert len(rows) == 5 * 4 * 2
        for row in rows:
            if row["method"] != "mean":
                continue
            lam = float(row["lambda"])
            assert float(row["lambda_lo"]) <= lam <= float(row["lambda_hi"])
            assert float(row["kkt_residual"]) <= 1e-8
            assert float(row["rho_plus"]) >= 1.0 >= float(row["rho_minus"])

    def test_empty_grid_writes_header_only(self, tmp_path):
        rc = main(["exact", "--out", str(tmp_path), "--set", "p_grid=[]"])
        assert rc == 0
        assert (tmp_path / "exact.csv").read_text() == EXACT_HEADER + "\n"

    def test_zero_tau_exits_2_naming_key(self, tmp_path, capsys):
        rc = main(["exact", "--out", str(tmp_path), "--set", "tau_grid=[0.0]"])
        assert rc == 2
        err = capsys.readouterr().err
        assert err.startswith("config error: tau_grid")

    def test_unknown_method_exits_2(self, tmp_path, capsys):
        rc = main(["exact", "--out", str(tmp_path), "--set", 'methods=["grpo"]'])
        assert rc == 2
        assert "methods" in capsys.readouterr().err

    def test_reruns_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["exact", "--out", str(out)]) == 0
        assert (a / "exact.csv").read_bytes() == (b / "exact.csv").read_bytes()
        assert (a / "exact.csv.manifest.json").read_bytes() == (
            b / "exact.csv.manifest.json"
        ).read_bytes()


class TestFigures:
    def run_small(self, out, extra=()):
        return main(
            [
                "figures",
                "--out",
                str(out),
                "--set",
                "p_grid=[0.25,0.5,0.75]",
                "--set",
                "fig1_tau_grid=[0.1,100.0]",
                "--set",
                "est_p_grid=[0.05,0.2]",
                "--set",
                "est_n_grid=[4,16]",
                "--set",
                "sign_p_grid=[0.1]",
                "--set",
                "sign_n_grid=[64]",
                "--set",
                "trials=20",
                *extra,
            ]
        )

    def test_emits_all_files_with_manifests(self, tmp_path):
        assert self.run_small(tmp_path) == 0
        for name in (
            "fig1_partition_vs_mean.csv",
            "fig2_log_ratios.csv",
            "fig5_estimation.csv",
            "fig6_signs.csv",
        ):
            assert (tmp_path / name).exists()
            meta = json.loads((tmp_path / (name + ".manifest.json")).read_text())
            assert meta["command"] == "figures"
            assert meta["version"]
            assert "jobs" not in json.dumps(meta)

    def test_partition_gap_values(self, tmp_path):
        assert self.run_small(tmp_path) == 0
        _, rows = read_csv(tmp_path / "fig1_partition_vs_mean.csv")
        by_key = {(row["p"], row["tau"]): float(row["tau_logZ"]) for row in rows}
        exact = 0.1 * math.log(1.0 + 0.5 * math.expm1(10.0))
        np.testing.assert_allclose(by_key[("0.5", "0.1")], exact, rtol=1e-12)
        np.testing.assert_allclose(by_key[("0.5", "0.1")], 0.93070, atol=2e-5)
        # at large temperature the partition term degenerates to the mean
        for p in (0.25, 0.5, 0.75):
            assert abs(by_key[(repr(p), "100.0")] - p) <= 2e-3
        for row in rows:
            assert float(row["mean_reward"]) == float(row["p"])

    def test_log_ratio_ordering(self, tmp_path):
        assert self.run_small(tmp_path) == 0
        _, rows = read_csv(tmp_path / "fig2_log_ratios.csv")
        by_p = {}
        for row in rows:
            by_p.setdefault(row["p"], {})[row["method"]] = float(row["log_rho_minus"])
        assert len(by_p) == 3
        for methods in by_p.values():
            assert methods["mean"] >= methods["part"]

    def test_sweep_files_use_sweep_schema(self, tmp_path):
        assert self.run_small(tmp_path) == 0
        for name in ("fig5_estimation.csv", "fig6_signs.csv"):
            header, rows = read_csv(tmp_path / name)
            assert header == SWEEP_HEADER
            assert rows

    def test_jobs_do_not_change_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert self.run_small(a) == 0
        assert self.run_small(b, extra=("--jobs", "3")) == 0
        for name in ("fig5_estimation.csv", "fig6_signs.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
            assert (a / (name + ".manifest.json")).read_bytes() == (
                b / (name + ".manifest.json")
            ).read_bytes()


class TestEstimate:
    def test_single_trial_determinism(self, tmp_path):
        args = [
            "estimate",
            "--set",
            "p_grid=[0.1]",
            "--set",
            "n_grid=[8]",
            "--set",
            "trials=1",
        ]
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert (a / "estimate.csv").read_bytes() == (b / "estimate.csv").read_bytes()

    def test_part_error_decreases_with_group_size(self, tmp_path):
        rc = main(
            [
                "estimate",
                "--out",
                str(tmp_path),
                "--set",
                "p_grid=[0.2]",
                "--set",
                "n_grid=[4,16,64,256]",
            ]
        )
        assert rc == 0
        _, rows = read_csv(tmp_path / "estimate.csv")
        part = [float(r["mean_dbar2"]) for r in rows if r["method"] == "part"]
        assert len(part) == 4
        assert all(a > b for a, b in zip(part, part[1:]))

    def test_rejects_zero_trials(self, tmp_path, capsys):
        rc = main(["estimate", "--out", str(tmp_path), "--set", "trials=0"])
        assert rc == 2
        assert "trials" in capsys.readouterr().err


class TestTrain:
    def test_default_run_learns(self, tmp_path):
        assert main(["train", "--out", str(tmp_path)]) == 0
        header, rows = read_csv(tmp_path / "train.csv")
        assert header == TRAIN_HEADER
        assert len(rows) == 61
        final_J = float(rows[-1]["J"])
        assert final_J >= 0.9
        meta = json.loads((tmp_path / "train.csv.manifest.json").read_text())
        assert meta["result"]["final_J"] == final_J
        assert len(meta["result"]["instance_digest"]) == 64
        assert meta["config"]["method"] == "pmd_mean"

    def test_part_method_reaches_deep_ratios(self, tmp_path):
        rc = main(["train", "--out", str(tmp_path), "--set", 'method="pmd_part"'])
        assert rc == 0
        _, rows = read_csv(tmp_path / "train.csv")
        depths = [
            float(r["min_logratio"])
            for r in rows
            if not math.isnan(float(r["min_logratio"]))
        ]
        assert depths and min(depths) < -10.0

    def test_reruns_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["train", "--out", str(out), "--set", "steps=10"]) == 0
        assert (a / "train.csv").read_bytes() == (b / "train.csv").read_bytes()

    def test_rejects_bad_ranges(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path), "--set", "tau=0"]) == 2
        assert "tau" in capsys.readouterr().err
        assert main(["train", "--out", str(tmp_path), "--set", "group_size=1"]) == 2
        assert "group_size" in capsys.readouterr().err
        assert (
            main(["train", "--out", str(tmp_path), "--set", "p_hi=0.04"]) == 2
        )
        assert "p_hi" in capsys.readouterr().err

    def test_numeric_blowup_exits_3(self, tmp_path, capsys):
        with np.errstate(over="ignore"):
            rc = main(
                [
                    "train",
                    "--out",
                    str(tmp_path),
                    "--set",
                    "steps=2",
                    "--set",
                    "inner_step_size=1e200",
                    "--set",
                    "clip_headroom=Infinity",
                ]
            )
        assert rc == 3
        assert capsys.readouterr().err.startswith("numeric failure")
