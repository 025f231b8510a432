import json
import os
import subprocess
import sys

import pytest

from untangle import cli
from untangle.study import RecordStore
from untangle.tensorio import load_tensor

TINY_WORLD = {"name": "dsprites-lite", "size": 8, "scales": 2, "orientations": 2, "positions": 4}
COMMANDS = ("generate", "train", "encode", "evaluate", "study", "analyze", "impossibility")


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("command", COMMANDS)
def test_help_exits_zero(command, capsys):
    assert cli.main([command, "--help"]) == 0
    assert command in capsys.readouterr().out


def test_console_script_runs():
    res = subprocess.run([sys.executable, "-m", "untangle", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and res.stdout.startswith("untangle ")


def test_usage_error(capsys):
    code, _, err = run(["train"], capsys)
    assert code == 1 and err.startswith("error: E_USAGE:")
    code, _, err = run(["transmogrify"], capsys)
    assert code == 1 and "E_USAGE" in err


def test_config_errors(tmp_path, capsys):
    code, _, err = run(["train", "--config", str(tmp_path / "nope.json"), "--out",
                        str(tmp_path / "o")], capsys)
    assert code == 1 and "E_CONFIG_READ" in err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = run(["train", "--config", str(bad), "--out", str(tmp_path / "o")], capsys)
    assert code == 1 and "E_CONFIG_PARSE" in err
    cfg = write_json(tmp_path / "c.json", {"schema_version": 1, "world": TINY_WORLD,
                                           "objective": {"method": "beta_vae", "beta": 1.0},
                                           "steps": 5, "learning_rate": 0.1})
    code, _, err = run(["train", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 1 and "E_SCHEMA" in err
    assert not (tmp_path / "o").exists()


def test_schema_version_required(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"world": TINY_WORLD})
    code, _, err = run(["generate", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 1 and "E_SCHEMA" in err


def test_smoke_pipeline(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "out"
    gen_cfg = write_json(tmp_path / "gen.json", {"schema_version": 1, "world": TINY_WORLD})
    train_cfg = write_json(tmp_path / "train.json", {
        "schema_version": 1, "world": TINY_WORLD, "steps": 30, "seed": 3,
        "objective": {"method": "beta_vae", "beta": 4.0},
        "train": {"hidden": [32, 16], "latent_dim": 4, "batch_size": 32}})
    before = set(os.listdir(tmp_path))

    assert run(["generate", "--config", gen_cfg, "--out", str(out / "data")], capsys)[0] == 0
    manifest = json.loads((out / "data" / "manifest.json").read_text())
    assert manifest["rows"] == 3 * 2 * 2 * 4 * 4

    assert run(["train", "--config", train_cfg, "--out", str(out / "model"),
                "--set", "steps=20"], capsys)[0] == 0
    assert json.loads((out / "model" / "run_manifest.json").read_text())["config"]["steps"] == 20

    ckpt = str(out / "model" / "checkpoint.ckpt")
    assert run(["encode", "--ckpt", ckpt, "--data", str(out / "data"), "--out",
                str(out / "reps")], capsys)[0] == 0
    assert load_tensor(str(out / "reps" / "reps.bin")).shape == (manifest["rows"], 4)

    code, stdout, _ = run(["evaluate", "--ckpt", ckpt, "--samples", "1500", "--out",
                           str(out / "eval")], capsys)
    assert code == 0
    store = RecordStore.read(str(out / "eval" / "scores.csv"))
    assert len(store) >= 10 and len(stdout.splitlines()) == len(store)

    code, _, _ = run(["evaluate", "--reps", str(out / "reps" / "reps.bin"), "--factors",
                      str(out / "data" / "factors.bin"), "--world",
                      str(out / "data" / "manifest.json"), "--metrics", "mig,sap",
                      "--samples", "1500", "--out", str(out / "eval-reps")], capsys)
    assert code == 0
    reps_store = RecordStore.read(str(out / "eval-reps" / "scores.csv"))
    by_metric = {r.metric: r.value for r in store}
    for r in reps_store:
        # float32 codes vs float64 codes: same ranks, so same histogram MI
        assert r.value == pytest.approx(by_metric[r.metric], abs=0.02)

    assert set(os.listdir(tmp_path)) == before | {"out"}


def test_study_and_analyze(tmp_path, capsys):
    cfg = write_json(tmp_path / "study.json", {
        "schema_version": 1, "worlds": [TINY_WORLD, dict(TINY_WORLD, positions=3)],
        "methods": ["beta_vae"], "seeds": 3, "steps": 15, "strengths": {"beta_vae": [1.0, 8.0]},
        "eval_samples": 1500, "train": {"hidden": [16], "latent_dim": 3, "batch_size": 32}})
    out = tmp_path / "study"
    code, stdout, _ = run(["study", "--config", cfg, "--out", str(out)], capsys)
    assert code == 0 and "12 runs" in stdout
    code, _, err = run(["study", "--config", cfg, "--out", str(out)], capsys)
    assert code == 1 and "E_DUPLICATE_RUN" in err

    report = tmp_path / "report"
    code, _, _ = run(["analyze", "--store", str(out / "scores.csv"), "--report", str(report),
                      "--trials", "2000"], capsys)
    assert code == 0
    for name in ("anova.tsv", "transfer.tsv", "summary.json", "plots/score-distribution.svg",
                 "plots/score-vs-strength.tsv"):
        assert (report / name).exists(), name
    summary = json.loads((report / "summary.json").read_text())
    assert summary["n_runs"] == 12
    assert len([r for r in summary["transfer"] if r["metric"] == "mig"]) == 2


def test_analyze_missing_store(tmp_path, capsys):
    code, _, err = run(["analyze", "--store", str(tmp_path / "x.csv"), "--out",
                        str(tmp_path / "r")], capsys)
    assert code == 1 and "E_INPUT" in err


def test_impossibility_command(tmp_path, capsys):
    code, stdout, _ = run(["impossibility", "--n", "10000", "--angle", "45", "--out",
                           str(tmp_path)], capsys)
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["pushforward_bitwise_equal"]
    assert report["mig_a"] > 0.9
