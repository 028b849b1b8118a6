import csv
import json

import numpy as np
import pytest

from svfi_nbv import cli
from svfi_nbv.config import load_config
from svfi_nbv.validation import Check


@pytest.fixture
def short_config(tmp_path):
    p = tmp_path / "short.yaml"
    p.write_text("sim:\n  max_time_s: 1.0\n")
    return str(p)


def _rows(path):
    with open(path) as f:
        return list(csv.reader(f))


def test_run_writes_outputs(tmp_path, short_config, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", short_config, "--seed", "3", "--out", str(out)]) == 0
    info = json.loads(capsys.readouterr().out)
    d = out / "run_seed3"
    assert info["output"] == str(d)
    for name in ("ticks.csv", "plans.csv", "grid.bin", "summary.json"):
        assert (d / name).exists()
    summary = json.loads((d / "summary.json").read_text())
    assert summary["schema_version"] == cli.SCHEMA_VERSION
    ticks = _rows(d / "ticks.csv")
    assert len(ticks) - 1 == summary["ticks"]
    assert ticks[0][:2] == ["t", "q0"] and "err_norm" in ticks[0] and "slack_norm" in ticks[0]
    assert _rows(d / "plans.csv")[0] == list(cli.PLAN_COLUMNS)


def test_repeat_run_is_byte_identical_and_never_overwrites(tmp_path, short_config):
    out = tmp_path / "out"
    for _ in range(2):
        assert cli.main(["run", "--config", short_config, "--seed", "4", "--out", str(out)]) == 0
    a, b = out / "run_seed4", out / "run_seed4_2"
    for name in ("ticks.csv", "plans.csv", "grid.bin", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_output_root_env(tmp_path, short_config, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "envroot"))
    assert cli.main(["run", "--config", short_config, "--seed", "1"]) == 0
    assert (tmp_path / "envroot" / "run_seed1" / "ticks.csv").exists()


def test_malformed_config_exit_2_without_outputs(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("control:\n  kappa: -3\n")
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(bad), "--out", str(out)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config"
    assert not out.exists() or not any(out.iterdir())


def test_shipped_config_by_name():
    assert cli._load("three_pipe").scene.n_pipes == 3


def test_validate_exit_codes(monkeypatch, capsys):
    assert cli.main(["validate", "--suite", "quantile"]) == 0
    assert "PASS" in capsys.readouterr().out
    monkeypatch.setattr(cli, "run_suite", lambda name, seed=0: [Check("x", 1.0, 0.5, False, "")])
    assert cli.main(["validate", "--suite", "qp"]) == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["validate", "--suite", "nope"])
    assert exc.value.code == 2


def test_batch_k1_aggregate_equals_trial(tmp_path, short_config):
    out = tmp_path / "out"
    assert cli.main(["batch", "--config", short_config, "--trials", "1", "--seed", "2", "--out", str(out), "--bins", "11"]) == 0
    d = out / "batch_seed2_k1"
    rows = _rows(d / "aggregate.csv")
    header, body = rows[0], np.array(rows[1:], dtype=float)
    log = cli.run_trials(load_config(short_config), [2])[0]
    taus = np.linspace(0, 1, 11)
    for q in cli.AGGREGATE_QUANTITIES:
        series = cli.normalized_series(log, q, taus)
        for stat in ("mean", "min", "max"):
            np.testing.assert_array_equal(body[:, header.index(f"{q}_{stat}")], series)
    assert (d / "trial_seed2" / "ticks.csv").exists()


def test_batch_parallel_matches_sequential(tmp_path, short_config):
    seq, par = tmp_path / "seq", tmp_path / "par"
    assert cli.main(["batch", "--config", short_config, "--trials", "2", "--seed", "5", "--out", str(seq)]) == 0
    assert cli.main(["batch", "--config", short_config, "--trials", "2", "--seed", "5", "--out", str(par), "--parallel", "--workers", "2"]) == 0
    a, b = seq / "batch_seed5_k2", par / "batch_seed5_k2"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_batch_rejects_zero_trials(tmp_path):
    assert cli.main(["batch", "--trials", "0", "--out", str(tmp_path)]) == 2


def test_help_mentions_env_var(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    assert cli.OUTPUT_ROOT_ENV in capsys.readouterr().out
