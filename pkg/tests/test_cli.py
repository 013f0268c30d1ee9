import csv
import json
import shutil
import statistics
import subprocess
import sys

import numpy as np
import pytest

from popll import cli
from popll.data import PartialLabelDataset, load_plld, save_plld
from popll.experiment import ConfigError, ExperimentConfig, run_experiment, sweep
from popll.purify import CSV_FIELDS

SMALL = """
seed = 3
trials = 2
output_dir = "out"
source = "synthetic"
synthetic = {{ layout = "triangle", separation = 3.0, dim = 2, n = 300, n_test = 200 }}
annotator = "oracle"
e0 = 0.4
rounds = 3
warmup_rounds = 1
batch_size = 64
{extra}
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("POPLL_OUTPUT_ROOT", raising=False)
    return tmp_path


def write_config(workdir, extra="", name="c.toml"):
    path = workdir / name
    path.write_text(SMALL.format(extra=extra))
    return path


def test_run_writes_reports(workdir, capsys):
    assert cli.main(["run", str(write_config(workdir))]) == 0
    out = capsys.readouterr().out
    assert "accuracy" in out and "pop=on" in out
    summary = json.loads((workdir / "out" / "summary.json").read_text())
    accs = [t["test_acc"] for t in summary["trials"]]
    assert summary["test_acc_mean"] == statistics.fmean(accs)
    assert summary["test_acc_std"] == statistics.pstdev(accs)
    assert [t["seed"] for t in summary["trials"]] == [3, 4]
    assert (workdir / "out" / "summary.txt").read_text().startswith("loss=proden")


def test_report_csv_schema(workdir):
    cli.main(["run", str(write_config(workdir))])
    text = (workdir / "out" / "trial_0" / "report.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == "round,e,removals,avg_cls,train_acc,val_acc,test_acc,true_label_removals,empirical_pure_boundary"
    assert tuple(lines[0].split(",")) == CSV_FIELDS
    rows = list(csv.DictReader(lines))
    assert [int(r["round"]) for r in rows] == [0, 1, 2, 3]
    assert all(r["empirical_pure_boundary"] != "" for r in rows)


def test_oracle_fields_empty_without_truth(workdir):
    rng = np.random.default_rng(0)
    y = rng.integers(0, 3, 120)
    cand = rng.random((120, 3)) < 0.4
    cand[np.arange(120), y] = True
    save_plld(PartialLabelDataset(rng.normal(size=(120, 2)) + y[:, None], cand, 3), workdir / "train.plld")
    save_plld(PartialLabelDataset(rng.normal(size=(40, 2)), np.eye(3, dtype=bool)[y[:40]], 3, y[:40]),
              workdir / "test.plld")
    cfg = ExperimentConfig.from_dict(dict(source="plld", path="train.plld", test_path="test.plld", trials=1,
                                          rounds=2, warmup_rounds=1, output_dir="plld_out"), base_dir=workdir)
    run_experiment(cfg)
    rows = list(csv.DictReader(open(workdir / "plld_out" / "trial_0" / "report.csv")))
    for r in rows:
        assert r["train_acc"] == r["true_label_removals"] == r["empirical_pure_boundary"] == ""
        assert r["test_acc"] != "" and r["val_acc"] == ""


def test_runs_are_byte_identical(workdir):
    cfg = write_config(workdir)
    cli.main(["run", str(cfg)])
    first = (workdir / "out" / "summary.json").read_bytes()
    shutil.rmtree(workdir / "out")
    cli.main(["run", str(cfg)])
    assert (workdir / "out" / "summary.json").read_bytes() == first


def test_pop_off_never_removes(workdir):
    cli.main(["run", str(write_config(workdir, "pop = false"))])
    summary = json.loads((workdir / "out" / "summary.json").read_text())
    assert all(t["total_removals"] == 0 for t in summary["trials"])
    rows = list(csv.DictReader(open(workdir / "out" / "trial_1" / "report.csv")))
    assert {r["removals"] for r in rows} == {"0"} and {r["e"] for r in rows} == {""}


def test_output_root_variable(workdir, monkeypatch):
    monkeypatch.setenv("POPLL_OUTPUT_ROOT", str(workdir / "root"))
    cli.main(["run", str(write_config(workdir))])
    assert (workdir / "root" / "out" / "summary.json").exists()
    assert not (workdir / "out").exists()


def test_sweep_single_value_matches_run(workdir, capsys):
    (workdir / "s.toml").write_text(SMALL.format(extra="").replace("trials = 2", "trials = 1"))
    assert cli.main(["sweep", str(workdir / "s.toml"), "--param", "e0", "--values", "0.4"]) == 0
    cli.main(["run", str(workdir / "s.toml")])
    swept = json.loads((workdir / "out" / "sweep_e0" / "e0=0.4" / "summary.json").read_text())
    plain = json.loads((workdir / "out" / "summary.json").read_text())
    assert swept == plain


def test_sweep_row_count(workdir, monkeypatch):
    monkeypatch.setenv("POPLL_OUTPUT_ROOT", "rel_root")
    cfg = ExperimentConfig.from_file(write_config(workdir)).replace(trials=1, rounds=1)
    _, rows = sweep(cfg, "warmup_rounds", "0,1,2")
    assert len(rows) == 3
    curve = (workdir / "rel_root" / "out" / "sweep_warmup_rounds" / "curve.csv").read_text().splitlines()
    assert curve[0] == "warmup_rounds,test_acc_mean,test_acc_std,trials" and len(curve) == 4
    assert (workdir / "rel_root" / "out" / "sweep_warmup_rounds" / "warmup_rounds=2" / "summary.json").exists()


def test_corrupt_and_stats(workdir, capsys):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 3))
    y = rng.integers(0, 4, 200)
    np.savetxt(workdir / "clean.csv", np.c_[X, y], delimiter=",")
    assert cli.main(["corrupt", "clean.csv", "--out", "u.plld", "--seed", "1", "--uniform-annotator"]) == 0
    assert capsys.readouterr().out.strip() == "n=200 q=3 c=4 avg_cls=4.0000"
    assert cli.main(["corrupt", "clean.csv", "--out", "m.plld", "--seed", "1", "--hidden", "8", "--epochs", "2"]) == 0
    line = capsys.readouterr().out.strip()
    ds = load_plld(workdir / "m.plld")
    assert line == f"n=200 q=3 c=4 avg_cls={ds.avg_candidate_labels():.4f}"
    np.testing.assert_array_equal(ds.true_labels, y)
    assert cli.main(["stats", "m.plld"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == line
    counts = dict(tok.split(":") for tok in out[1].split()[1:])
    assert sum(map(int, counts.values())) == 200
    assert sum(int(k) * int(v) for k, v in counts.items()) / 200 == pytest.approx(ds.avg_candidate_labels())
    assert out[2] == "has_truth=1"


def test_exit_code_config_error(workdir, capsys):
    assert cli.main(["run", str(write_config(workdir, "loss = 'hinge'"))]) == 2
    assert "loss" in capsys.readouterr().err
    (workdir / "bad.toml").write_text("bogus_key = 1\n")
    assert cli.main(["run", "bad.toml"]) == 2
    assert cli.main(["run", "missing.toml"]) == 2
    (workdir / "broken.toml").write_text("seed = [\n")
    assert cli.main(["run", "broken.toml"]) == 2
    assert cli.main(["sweep", str(write_config(workdir)), "--param", "e0", "--values", "x"]) == 2


def test_exit_code_data_error(workdir, capsys):
    (workdir / "bad.plld").write_bytes(b"PLLD 1 1 1 2 0\n" + bytes(8))
    assert cli.main(["stats", "bad.plld"]) == 3
    assert "data error" in capsys.readouterr().err
    assert cli.main(["corrupt", "nothing.csv", "--out", "x.plld"]) == 3


def test_exit_code_numeric_failure(workdir):
    cfg = write_config(workdir, "lr = 1e200\nmomentum = 0.0")
    with np.errstate(all="ignore"):
        assert cli.main(["run", str(cfg)]) == 4


@pytest.mark.parametrize(
    "change",
    [dict(trials=0), dict(e_end=0.95), dict(source="plld"), dict(annotator="oracle", source="supervised", path="x"),
     dict(synthetic={"dim": 2, "colour": 1}), dict(validation_fraction=1.0), dict(model_hidden=[4, 4, 4])],
)
def test_config_validation(change):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(change)


def test_console_script_runs():
    exe = shutil.which("popll")
    cmd = [exe] if exe else [sys.executable, "-m", "popll.cli"]
    out = subprocess.run(cmd + ["--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "sweep" in out.stdout
