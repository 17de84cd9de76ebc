import json

import pytest

from sinai_zrp.cli import main

SMALL = ["--set", "Ns=64,128", "--set", "replicas=2", "--set", "M=128",
         "--set", "t_obs=0.01", "--set", "T=0.001", "--set", "n_time=3"]


@pytest.mark.parametrize("argv", [
    ["env", "--n", "256"],
    ["simulate", "--n", "64", "--t-end", "0.001", "--snapshots", "0,0.001"],
    ["fugacity", "--n", "256"],
    ["blocks", "--l", "1,2", "--j", "1,2", "--n", "256"],
    ["blocks", "--mode", "ensembles", "--l", "1", "--j", "1"],
    ["pde", "--m", "128", "--t-end", "0.01"],
    ["brox", "--mode", "sinai", "--n", "200", "--samples", "20"],
    ["brox", "--mode", "seignourel", "--n", "50", "--samples", "20"],
    ["brox", "--mode", "brox", "--n", "100", "--samples", "20"],
    ["compare"] + SMALL,
    ["replace-diag"] + SMALL + ["--set", "Ns=128"],
])
def test_subcommands_succeed(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 0
    assert any(p.suffix == ".json" for p in tmp_path.iterdir())


def test_martingale_subcommand(tmp_path):
    argv = ["mg-diag"] + SMALL + ["--set", "replicas=30", "--set", "G=const:1"]
    assert main(argv + ["--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "mg-diag.json").read_text())
    assert rep["config"]["replicas"] == 30


def test_failing_assertion_gives_nonzero_exit(tmp_path, capsys):
    argv = ["compare"] + SMALL + ["--set", "l1_tol=1e-12", "--out", str(tmp_path)]
    assert main(argv) == 1
    assert "FAIL" in capsys.readouterr().out


def test_bad_input_gives_error_exit(tmp_path, capsys):
    assert main(["compare", "--set", "rho0=bogus", "--out", str(tmp_path)]) == 2


def test_config_file_round_trip(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("Ns = 64, 128\nreplicas = 2\nM = 128\nt_obs = 0.01\n")
    out = tmp_path / "a"
    assert main(["compare", "--config", str(cfg), "--out", str(out)]) == 0
    out2 = tmp_path / "b"
    assert main(["compare", "--config", str(out / "compare.json"), "--out", str(out2)]) == 0
    rows = [json.loads((d / "compare.json").read_text())["rows"] for d in (out, out2)]
    assert rows[0] == rows[1]
