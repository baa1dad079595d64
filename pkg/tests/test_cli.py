import csv
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from churnsurv import build_id, cli

GOLDEN = Path(__file__).parent / "golden"
SUBCOMMANDS = ("synth", "prep", "train", "evaluate", "predict", "report")

SMALL = {
    "synth": {"users_per_game": 250},
    "prep": {"per_class": 50, "n_folds": 3},
    "grids": {"EN": {"alpha": [0.1], "l1_ratio": [0.5]}, "LR": {"C": [0.01]},
              "MLPr": {"l2": [0.01]}, "MLPc": {"l2": [0.01]}},
    "models": {"mlp": {"hidden": [16], "max_epochs": 3},
               "bm": {"embedding_dim": 4, "fusion_units": 8, "lstm_units": 8, "head_units": 16,
                      "max_epochs": 3}},
    "workers": 1,
}


@pytest.fixture(scope="module")
def config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


@pytest.fixture(scope="module")
def run_dir(config, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run"))
    for cmd in ("synth", "prep", "train"):
        assert cli.run([cmd, "--config", config, "--out", out]) == 0
    assert cli.run(["evaluate", "--config", config, "--out", out, "--experiment", "3"]) == 0
    assert cli.run(["report", "--config", config, "--out", out]) == 0
    return Path(out)


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------- usage errors
@pytest.mark.parametrize("argv", [
    [],
    ["fly"],
    ["synth", "--bogus"],
    ["synth", "--seed", "x"],
    ["synth", "--workers", "0"],
    ["evaluate", "--experiment", "4"],
    ["predict", "--checkpoint", "c.ckpt"],
    ["synth", "--config", "/nonexistent/cfg.json"],
])
def test_usage_errors(argv, capsys):
    assert cli.run(argv) == cli.EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_bad_config_contents(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"seed": 1, "sed": 2}')
    assert cli.run(["synth", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "sed" in capsys.readouterr().err
    bad.write_text("{not json")
    assert cli.run(["synth", "--config", str(bad), "--out", str(tmp_path)]) == 1


def test_config_merge(config):
    cfg = cli.load_config(config)
    assert cfg["synth"]["users_per_game"] == 250
    assert cfg["synth"]["profiles"] == "default"
    assert cfg["grids"]["EN"] == {"alpha": [0.1], "l1_ratio": [0.5]}
    assert cfg["grids"]["BM"] == {"dropout": [0.1]}
    assert cli.load_config("default") == cli.default_config()


def test_version(capsys):
    assert cli.run(["--version"]) == 0
    assert capsys.readouterr().out.strip() == build_id()


# --------------------------------------------------------------- data errors
def test_missing_inputs(tmp_path, config, capsys):
    out = str(tmp_path)
    assert cli.run(["prep", "--config", config, "--out", out]) == cli.EXIT_DATA
    assert cli.run(["train", "--config", config, "--out", out]) == cli.EXIT_DATA
    assert cli.run(["evaluate", "--config", config, "--out", out]) == cli.EXIT_DATA
    assert cli.run(["report", "--config", config, "--out", out]) == cli.EXIT_DATA
    err = capsys.readouterr().err
    assert "run 'prep' first" in err and "run 'evaluate' first" in err


# ------------------------------------------------------------------ commands
def test_synth_deterministic(config, tmp_path):
    for d in ("a", "b"):
        assert cli.run(["synth", "--config", config, "--seed", "7", "--out", str(tmp_path / d)]) == 0
    for name in ("sessions.csv", "sessions.csv.meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    meta = json.loads((tmp_path / "a" / "sessions.csv.meta.json").read_text())
    assert meta["build"] == build_id()


def test_seed_changes_output(config, tmp_path):
    cli.run(["synth", "--config", config, "--seed", "1", "--out", str(tmp_path / "a")])
    cli.run(["synth", "--config", config, "--seed", "2", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "sessions.csv").read_bytes() != (tmp_path / "b" / "sessions.csv").read_bytes()


def test_pipeline_outputs(run_dir):
    fit = json.loads((run_dir / "prepared" / "fit_metadata.json").read_text())
    assert fit["build"] == build_id()
    assert (run_dir / "checkpoints" / "bm_final.ckpt").exists()
    assert not (run_dir / "tables" / "exp1.csv").exists()
    rows = _rows(run_dir / "tables" / "exp3.csv")
    games = {r["game"] for r in rows}
    assert len(games) == 6
    assert {(r["model"], r["metric"]) for r in rows} == {
        ("MM", "smape"), ("MM", "macro_f1"), ("BM", "smape"), ("BM", "macro_f1")}
    assert len(rows) == 6 * 4
    report = (run_dir / "report.md").read_text()
    assert "## Experiment 3" in report and "confusion" in report and build_id() in report
    assert "## Experiment 1" not in report


def test_predict(run_dir, tmp_path, config):
    args = ["predict", "--config", config, "--checkpoint", str(run_dir / "checkpoints" / "bm_final.ckpt"),
            "--sessions", str(run_dir / "sessions.csv"), "--prepared", str(run_dir / "prepared")]
    assert cli.run(args + ["--output", str(tmp_path / "a.csv")]) == 0
    assert cli.run(args + ["--output", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = _rows(tmp_path / "a.csv")
    assert len(rows) == 6 * 250
    for r in rows:
        assert int(r["decision"]) == (float(r["churn_point"]) >= 0.5)
        assert 0 < float(r["churn_point"]) < 1 and float(r["survival_std"]) >= 0
    assert cli.run(args + ["--output", str(tmp_path / "c.csv"), "--window", "op"]) == 0
    assert cli.run(args + ["--output", str(tmp_path / "d.csv"), "--samples", "0"]) == cli.EXIT_USAGE


def test_predict_unknown_game(run_dir, tmp_path, config, capsys):
    src = run_dir / "sessions.csv"
    lines = src.read_text().splitlines()
    head, first = lines[0], lines[1].split(",")
    uid = first[0]
    rows = [head] + [",".join([c[0], "9"] + c[2:]) for c in (ln.split(",") for ln in lines[1:])
                     if c[0] == uid]
    dest = tmp_path / "new_game.csv"
    dest.write_text("\n".join(rows) + "\n")
    meta = {"games": {"9": {"snapshot_time": 1e6, "name": "brand_new"}}, "completions": {}}
    (tmp_path / "new_game.csv.meta.json").write_text(json.dumps(meta))
    code = cli.run(["predict", "--config", config, "--checkpoint", str(run_dir / "checkpoints" / "bm_final.ckpt"),
                    "--sessions", str(dest), "--output", str(tmp_path / "p.csv")])
    assert code == cli.EXIT_DATA
    assert "retrain" in capsys.readouterr().err
    assert not (tmp_path / "p.csv").exists()


def test_predict_wrong_prepared(run_dir, tmp_path, config):
    other = tmp_path / "other"
    other.mkdir()
    for p in (run_dir / "prepared").iterdir():
        (other / p.name).write_bytes(p.read_bytes())
    fit = json.loads((other / "fit_metadata.json").read_text())
    fit["seed"] += 1
    (other / "fit_metadata.json").write_text(json.dumps(fit))
    code = cli.run(["predict", "--config", config, "--checkpoint", str(run_dir / "checkpoints" / "bm_final.ckpt"),
                    "--sessions", str(run_dir / "sessions.csv"), "--prepared", str(other),
                    "--output", str(tmp_path / "p.csv")])
    assert code == cli.EXIT_DATA


def test_predict_missing_checkpoint(run_dir, tmp_path, config):
    code = cli.run(["predict", "--config", config, "--checkpoint", str(tmp_path / "none.ckpt"),
                    "--sessions", str(run_dir / "sessions.csv"), "--output", str(tmp_path / "p.csv")])
    assert code == cli.EXIT_DATA


# --------------------------------------------------------------------- help
def _help(*argv):
    env = dict(os.environ, COLUMNS="80")
    res = subprocess.run([sys.executable, "-m", "churnsurv", *argv, "--help"], env=env,
                         capture_output=True, text=True)
    assert res.returncode == 0
    return res.stdout


@pytest.mark.parametrize("name", ("main",) + SUBCOMMANDS)
def test_help_golden(name):
    text = _help() if name == "main" else _help(name)
    assert text == (GOLDEN / f"help_{name}.txt").read_text()


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_help_documents_every_flag(name):
    text = _help(name)
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.dest == "command").choices[name]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text
        if action.option_strings and action.help is not None:
            assert action.help.split()[0] in text
