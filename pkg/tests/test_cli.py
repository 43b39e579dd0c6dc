import json
import subprocess
import sys

import numpy as np
import pytest

from hitlfusion.cli import main
from hitlfusion.dataset import load_dataset
from hitlfusion.fusion import read_posteriors

SPEC = {"n_classes": 3, "n_tags": 5, "feature_dim": 4, "samples_per_class": 20, "informative_tags": 3}


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "s.json").write_text(json.dumps(SPEC))
    (tmp_path / "rf.json").write_text(json.dumps({"n_trees": 10}))
    (tmp_path / "rnb.json").write_text(json.dumps({"n_bags": 10}))
    (tmp_path / "net.json").write_text(json.dumps({"max_epochs": 50}))
    assert main(["synth", "--spec", "s.json", "--seed", "1", "--out", "d"]) == 0
    return tmp_path


def _posteriors(workdir):
    np.savetxt(workdir / "train.txt", np.arange(0, 60, 2), fmt="%d")
    np.savetxt(workdir / "test.txt", np.arange(1, 60, 2), fmt="%d")
    assert main(["fit", "--data", "d/manifest.json", "--classifier", "rf", "--source", "features", "--seed", "2",
                 "--config", "rf.json", "--indices", "train.txt", "--out", "mx"]) == 0
    assert main(["fit", "--data", "d/manifest.json", "--classifier", "rnb", "--source", "answers", "--seed", "2",
                 "--config", "rnb.json", "--indices", "train.txt", "--out", "ms"]) == 0
    for m, out in (("mx", "px"), ("ms", "ps")):
        assert main(["predict", "--model", f"{m}/model.json", "--data", "d/manifest.json", "--indices", "test.txt",
                     "--out", out]) == 0
    labels = load_dataset("d/manifest.json").labels[1::2]
    np.savetxt(workdir / "y.txt", labels, fmt="%d")


def test_synth_round_trip(workdir):
    data = load_dataset(str(workdir / "d" / "manifest.json"))
    assert data.n_samples == 60 and data.n_tags == 5


def test_pipeline(workdir):
    _posteriors(workdir)
    px, names = read_posteriors("px/posteriors.csv")
    assert px.shape == (30, 3) and names == ["class0", "class1", "class2"]
    assert main(["grid-thresholds", "--px", "px/posteriors.csv", "--ps", "ps/posteriors.csv", "--labels", "y.txt",
                 "--out", "thr"]) == 0
    assert main(["fuse", "--method", "modified-nb", "--px", "px/posteriors.csv", "--ps", "ps/posteriors.csv",
                 "--thresholds", "thr/thresholds.json", "--out", "f1"]) == 0
    assert main(["fuse", "--method", "equal-weight", "--px", "px/posteriors.csv", "--ps", "ps/posteriors.csv",
                 "--prior-labels", "y.txt", "--out", "f0"]) == 0
    assert main(["train-net", "--px", "px/posteriors.csv", "--ps", "ps/posteriors.csv", "--labels", "y.txt",
                 "--seed", "3", "--config", "net.json", "--out", "nn"]) == 0
    assert (workdir / "nn" / "loss_trace.csv").exists()
    assert main(["fuse", "--method", "neural-net", "--model", "nn/net.json", "--px", "px/posteriors.csv",
                 "--ps", "ps/posteriors.csv", "--out", "f2"]) == 0
    fused, _ = read_posteriors("f2/fused.csv")
    np.testing.assert_allclose(fused.sum(axis=1), 1.0, atol=1e-12)
    assert len((workdir / "f1" / "predictions.csv").read_text().split()) == 30


def test_modified_nb_needs_thresholds(workdir, capsys):
    _posteriors(workdir)
    code = main(["fuse", "--method", "modified-nb", "--px", "px/posteriors.csv", "--ps", "ps/posteriors.csv",
                 "--out", "f"])
    assert code == 2
    err = capsys.readouterr().err
    assert "--thresholds" in err and err.count("\n") == 1


def test_concat_is_usage_error(workdir):
    _posteriors(workdir)
    assert main(["fuse", "--method", "concat", "--px", "px/posteriors.csv", "--ps", "ps/posteriors.csv",
                 "--out", "f"]) == 2


def test_seed_required(workdir):
    assert main(["fit", "--data", "d/manifest.json", "--classifier", "rf", "--source", "features",
                 "--out", "m"]) == 2


def test_missing_file(workdir):
    assert main(["predict", "--model", "nope.json", "--data", "d/manifest.json", "--out", "p"]) == 3


def test_invalid_data(workdir):
    with open(workdir / "d" / "answers.csv", "a") as fh:
        fh.write("0.5,0.5,0.5,0.5,0.5\n")
    with open(workdir / "d" / "labels.csv", "a") as fh:
        fh.write("0\n")
    with open(workdir / "d" / "ids.csv", "a") as fh:
        fh.write("extra\n")
    with open(workdir / "d" / "features.csv", "a") as fh:
        fh.write("0,0,0,0\n")
    assert main(["fit", "--data", "d/manifest.json", "--classifier", "nb", "--source", "answers", "--seed", "1",
                 "--out", "m"]) == 4


def test_nb_rejects_features(workdir):
    assert main(["fit", "--data", "d/manifest.json", "--classifier", "nb", "--source", "features", "--seed", "1",
                 "--out", "m"]) == 2


def test_eval_twice_identical(workdir):
    cfg = {"schema_version": 1, "dataset": {"manifest": "d/manifest.json"},
           "split": {"kind": "repeated", "repeats": 2, "train_per_class": 10},
           "forest": {"n_trees": 10}, "rnb": {"n_bags": 10}, "net": {"max_epochs": 50}}
    (workdir / "c.json").write_text(json.dumps(cfg))
    for out in ("r1", "r2"):
        assert main(["eval", "--config", "c.json", "--seed", "7", "--out", out]) == 0
    for f in ("report.csv", "per_repeat.csv", "report.txt"):
        assert (workdir / "r1" / f).read_bytes() == (workdir / "r2" / f).read_bytes()
    assert main(["report", "--results", "r1"]) == 0


def test_writes_only_under_out(workdir):
    before = {p for p in workdir.rglob("*")}
    assert main(["synth", "--spec", "s.json", "--seed", "4", "--out", "new"]) == 0
    created = {p for p in workdir.rglob("*")} - before
    assert created and all(p.is_relative_to(workdir / "new") for p in created)


def test_console_script(workdir):
    proc = subprocess.run([sys.executable, "-m", "hitlfusion.cli", "fuse", "--method", "modified-nb", "--px", "a",
                           "--ps", "b", "--out", "o"], capture_output=True, text=True)
    assert proc.returncode == 3
