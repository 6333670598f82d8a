import json

import pytest
from click.testing import CliRunner

from fastslow.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def test_sigma_lin_prints_analytic_value(runner, tmp_path):
    res = runner.invoke(main, ["--out", str(tmp_path), "--fixture", "LIN", "sigma"])
    assert res.exit_code == 0, res.output
    assert "sigma2 = 0.500000" in res.output
    data = json.loads((tmp_path / "sigma" / "sigma.json").read_text())
    assert abs(data["sigma2"][0][0] - 0.5) <= 1e-3
    assert (tmp_path / "sigma" / "manifest.json").exists()
    assert (tmp_path / "sigma" / "resolved_config.json").exists()


def test_unknown_config_key_exits_2(runner, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"fixture": "LIN", "not_a_key": 1}))
    res = runner.invoke(main, ["--config", str(cfg), "--out", str(tmp_path), "sigma"])
    assert res.exit_code == 2


def test_invalid_eps_exits_2(runner, tmp_path):
    res = runner.invoke(main, ["--out", str(tmp_path), "--fixture", "LIN",
                               "--eps", "0.9", "sigma"])
    assert res.exit_code == 2


def test_numerical_failure_exits_3_and_writes_manifest(runner, tmp_path):
    res = runner.invoke(main, ["--out", str(tmp_path), "--fixture", "CPL",
                               "--eps", "0.05", "decompose"])
    assert res.exit_code == 3
    manifest = json.loads((tmp_path / "decompose" / "manifest.json").read_text())
    assert manifest["status"] == "numerical-error"


def test_verify_subset(runner, tmp_path):
    res = runner.invoke(main, ["--out", str(tmp_path), "verify-all",
                               "--criteria", "1,3"])
    assert res.exit_code == 0, res.output
    report = json.loads((tmp_path / "verify-all" / "acceptance.json").read_text())
    assert [c["id"] for c in report["criteria"]] == [1, 3]
    assert report["all_passed"]


def test_verify_fixture_cbd(runner, tmp_path):
    res = runner.invoke(main, ["--out", str(tmp_path), "--fixture", "CBD", "verify-all"])
    assert res.exit_code == 0, res.output
    report = json.loads((tmp_path / "verify-all" / "acceptance.json").read_text())
    assert [c["id"] for c in report["criteria"]] == [3, 12]


def test_fluctuate_reports_are_reproducible(runner, tmp_path):
    args = ["--fixture", "LIN", "--theta0", "0.3", "--eps", "1e-3",
            "--n", "500", "--seed", "7", "fluctuate"]
    res1 = runner.invoke(main, ["--out", str(tmp_path / "a")] + args)
    assert res1.exit_code == 0, res1.output
    res2 = runner.invoke(main, ["--out", str(tmp_path / "b")] + args)
    assert res2.exit_code == 0
    blob1 = (tmp_path / "a" / "fluctuate" / "clt.json").read_bytes()
    blob2 = (tmp_path / "b" / "fluctuate" / "clt.json").read_bytes()
    assert blob1 == blob2
    mom1 = (tmp_path / "a" / "fluctuate" / "moments.json").read_bytes()
    mom2 = (tmp_path / "b" / "fluctuate" / "moments.json").read_bytes()
    assert mom1 == mom2


def test_srb_sweep_csv(runner, tmp_path):
    res = runner.invoke(main, ["--out", str(tmp_path), "--fixture", "LIN",
                               "srb", "--theta-count", "3"])
    assert res.exit_code == 0, res.output
    lines = (tmp_path / "srb" / "srb_sweep.csv").read_text().strip().splitlines()
    assert lines[0] == "theta,omega_bar_0,sigma2_00,M,tail_estimate"
    assert len(lines) == 4
    val = float(lines[1].split(",")[2])
    assert abs(val - 0.5) <= 1e-3


def test_average_csv_and_plot(runner, tmp_path):
    res = runner.invoke(main, ["--out", str(tmp_path), "--fixture", "LIN",
                               "--theta0", "0.25", "average", "--plot"])
    assert res.exit_code == 0, res.output
    lines = (tmp_path / "average" / "averaged.csv").read_text().strip().splitlines()
    assert lines[0] == "t,theta_bar_0"
    assert float(lines[-1].split(",")[1]) == pytest.approx(0.25, abs=1e-9)
    assert (tmp_path / "average" / "averaged.svg").read_text().startswith("<svg")


def test_average_covariance_csv(runner, tmp_path):
    res = runner.invoke(main, ["--out", str(tmp_path), "--fixture", "LIN",
                               "--theta0", "0.3", "average", "--covariance"])
    assert res.exit_code == 0, res.output
    lines = (tmp_path / "average" / "covariance.csv").read_text().strip().splitlines()
    assert lines[0] == "t,theta_bar_0,Sigma_00,S_00"
    last = [float(v) for v in lines[-1].split(",")]
    assert last[2] == pytest.approx(0.5, abs=1e-3)   # Sigma(1) for LIN
    assert last[3] == pytest.approx(1.0, abs=1e-9)   # flow is identity (B = 0)


def test_fluctuate_writes_text_report(runner, tmp_path):
    res = runner.invoke(main, ["--out", str(tmp_path), "--fixture", "LIN",
                               "--theta0", "0.3", "--eps", "1e-3", "--n", "300",
                               "fluctuate"])
    assert res.exit_code == 0, res.output
    text = (tmp_path / "fluctuate" / "report.txt").read_text()
    assert text.startswith("report: clt")
    assert "report: moment_scaling" in text


def test_shadow_summary(runner, tmp_path):
    res = runner.invoke(main, ["--out", str(tmp_path), "--fixture", "CPL",
                               "--eps", "1e-4", "shadow", "--points", "10"])
    assert res.exit_code == 0, res.output
    summary = json.loads((tmp_path / "shadow" / "summary.json").read_text())
    assert summary["eps=0.0001"]["max_defect"] <= 1e-12


def test_decompose_outputs(runner, tmp_path):
    res = runner.invoke(main, ["--out", str(tmp_path), "--fixture", "LIN",
                               "--eps", "1e-3", "decompose", "--steps", "2"])
    assert res.exit_code == 0, res.output
    fam = json.loads((tmp_path / "decompose" / "family.json").read_text())
    assert fam["format"] == "fastslow-family/1"
    margins = json.loads((tmp_path / "decompose" / "margins.json").read_text())
    assert min(margins["slope"], margins["curvature"], margins["logdensity"]) >= 0.25
