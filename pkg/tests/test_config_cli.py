"""Config parsing and the command-line interface."""
import csv
import subprocess
import sys

import numpy as np
import pytest

from hetreg import cli, config
from hetreg.errors import ConfigError

SMALL = """\
[scenario]
kind = multivariate
dim = 4
n_samples = 300
seed = 1

[run]
losses = W2_bound, NLL_full
epochs = {epochs}
hidden_layers = 1
hidden_width = 8
repetitions = 2
plots = false
"""


def run_cli(*args, env=None):
    return subprocess.run([sys.executable, "-m", "hetreg", *args], capture_output=True, text=True, env=env)


def test_parse_defaults_and_overrides():
    cfg = config.parse_config(SMALL.format(epochs=3) + "\n[loss.NLL_full]\nlr = 0.05\nschedule = warmup\n")
    assert [str(s.kind) for s in cfg.losses] == ["W2_bound", "NLL_full"]
    assert cfg.losses[0].lr == 1e-3 and cfg.losses[1].lr == 0.05
    assert cfg.losses[1].schedule.kind == "warmup"
    assert cfg.repetitions == 2


def test_bivariate_default_lr():
    cfg = config.parse_config("[scenario]\nkind = bivariate_p1\n[run]\nlosses = W2_bound\n")
    assert cfg.losses[0].lr == 1e-2


@pytest.mark.parametrize("text, line", [
    ("[scenario]\nkind = sinusoid\nbogus = 1\n", 3),
    ("[scenario]\nkind = sinusoid\n[nope]\nx = 1\n", 3),
    ("[run]\nepochs = ten\n", 2),
    ("[run]\nlosses = W2_bound\n\n[loss.Mystery]\nlr = 1\n", 4),
    ("[scenario]\nkind = sinusoid\nvariant = 7\n", 3),
    ("[run]\nepochs = 1\nepochs = 2\n", 3),
    ("[run]\nlosses = W2_bound\nschedule = hybrid\nswitch_epoch = 5\nepochs = 5\n", 4),
])
def test_config_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as exc:
        config.parse_config(text)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_schema_mentions_every_key():
    text = config.print_schema()
    for section, keys in config.SCHEMA.items():
        for key in keys:
            assert key in text


def test_cli_config_error_exit_code(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[run]\nepochs = -1\n")
    r = run_cli("train", str(p))
    assert r.returncode == 2
    assert "line 2" in r.stderr
    assert run_cli("train", str(tmp_path / "missing.ini")).returncode == 2


def test_cli_bad_arguments():
    assert run_cli("bench", "--losses", "Bogus").returncode == 2
    assert run_cli("nonsense").returncode == 2


def test_cli_help_lists_subcommands():
    out = run_cli("--help").stdout
    for sub in ("verify", "train", "bench", "pseudolabel"):
        assert sub in out


def test_train_deterministic_byte_identical(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(SMALL.format(epochs=2))
    outs = []
    for name in ("a", "b"):
        r = run_cli("train", str(p), "--deterministic", "--output-dir", str(tmp_path / name))
        assert r.returncode == 0, r.stderr
        outs.append(tmp_path / name)
    files = sorted(f.name for f in outs[0].iterdir())
    assert "summary.csv" in files and "W2_bound_rep1.csv" in files
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    with open(outs[0] / "W2_bound_rep0.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["step_time_ms"] for r in rows] == ["0.0", "0.0"]


def test_train_parallel_matches_serial(tmp_path, monkeypatch):
    cfg = config.parse_config(SMALL.format(epochs=1))
    from hetreg import harness

    cfg.run["output_dir"] = str(tmp_path / "serial")
    harness.run_config(cfg, deterministic=True, workers=1, plots=False)
    cfg.run["output_dir"] = str(tmp_path / "pool")
    harness.run_config(cfg, deterministic=True, workers=3, plots=False)
    for f in (tmp_path / "serial").iterdir():
        assert f.read_bytes() == (tmp_path / "pool" / f.name).read_bytes()


def test_zero_epochs_header_only(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(SMALL.format(epochs=0))
    assert run_cli("train", str(p), "--deterministic", "--output-dir", str(tmp_path / "o")).returncode == 0
    assert (tmp_path / "o" / "NLL_full_rep0.csv").read_text().count("\n") == 1


def test_divergence_exit_code(tmp_path):
    table = np.random.default_rng(0).standard_normal((200, 4))
    table[3:40:4] = 1e300
    data = tmp_path / "t.csv"
    np.savetxt(data, table, delimiter=",")
    p = tmp_path / "c.ini"
    p.write_text(f"[scenario]\nkind = csv\npath = {data}\nstandardize = false\n"
                 "[run]\nlosses = NLL_diag\nepochs = 3\nhidden_layers = 1\nhidden_width = 4\nplots = false\n")
    r = run_cli("train", str(p), "--deterministic", "--output-dir", str(tmp_path / "o"))
    assert r.returncode == 3, r.stderr
    assert (tmp_path / "o" / "NLL_diag_rep0.csv").exists()


def test_pseudolabel_cli_brute_force(tmp_path):
    out = tmp_path / "pl.csv"
    r = run_cli("pseudolabel", "--scenario", "multivariate", "--dim", "4", "--n-samples", "300",
                "--out", str(out), "--brute-force-check", "10")
    assert r.returncode == 0, r.stderr
    assert "10/10 rows identical" in r.stdout
    from hetreg.pseudolabel import load_labels

    assert len(load_labels(out)) == 300


def test_bench_cli(tmp_path):
    out = tmp_path / "bench.csv"
    r = run_cli("bench", "--dims", "4", "--losses", "W2_bound,NLL_full", "--warmup", "2", "--steps", "5",
                "--out", str(out))
    assert r.returncode == 0, r.stderr
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["loss_kind"] for r in rows] == ["W2_bound", "NLL_full"]
    assert all(r["eig_calls"] == "0" and r["steps"] == "5" for r in rows)


def test_bench_rejects_large_dims():
    assert cli.main(["bench", "--dims", "65"]) == 2


def test_verify_cli_subset():
    r = run_cli("verify", "--only", "gaussian", "--scale", "0.05")
    assert r.returncode == 0, r.stdout + r.stderr
    assert "registry: 30 properties" in r.stdout
