import json
import subprocess
import sys

import pytest

from tagat import fileio
from tagat.cli import main
from tagat.model import TAGAT

SMALL = ["--d-h", "4", "--d-mem", "4", "--d-proj", "4", "--mlp-hidden", "8", "6", "4"]


@pytest.fixture(scope="module")
def graph_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--subjects", "10", "--tasks", "7", "--rois", "6", "--timepoints", "40",
                 "--seed", "1", "--out", str(root / "data")]) == 0
    assert main(["build-graphs", "--manifest", str(root / "data" / "manifest.json"),
                 "--density", "0.2", "--out", str(root / "graphs")]) == 0
    return root / "graphs"


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    worst = float(out.strip().splitlines()[-1].split()[-1])
    assert out.strip().splitlines()[-1].startswith("max_rel_error")
    assert worst <= 1e-5


def test_synth_writes_manifest(graph_dir):
    m = fileio.load_manifest(graph_dir.parent / "data" / "manifest.json")
    assert len(m["scans"]) == 70 and len(m["tasks"]) == 7
    assert sorted(set(m["partitions"].values())) == [1, 2, 3, 4, 5]


def test_graph_index_records_density(graph_dir):
    index = json.loads((graph_dir / "index.json").read_text())
    assert index["density"] == 0.2
    g = fileio.load_graph(graph_dir / index["scans"][0]["path"])
    assert g.provenance["density"] == 0.2


def test_train_zero_epochs_equals_init(graph_dir, tmp_path):
    ckpt = tmp_path / "m.ckpt"
    assert main(["train", "--graphs", str(graph_dir), "--heldout-task", "wm",
                 "--test-partition", "2", "--epochs", "0", "--seed", "5", "--ckpt", str(ckpt),
                 *SMALL]) == 0
    model, header = fileio.load_checkpoint(ckpt)
    init = TAGAT(model.config)
    assert model.config.seed == 5
    for k, v in init.state_dict().items():
        assert model.state_dict()[k].tobytes() == v.tobytes()
    assert header["fold"] == {"held_out_task": "wm", "test_partition": 2}


def test_train_eval_reproducible(graph_dir, tmp_path):
    args = ["train", "--graphs", str(graph_dir), "--heldout-task", "motor", "--test-partition",
            "1", "--epochs", "2", "--lr", "0.05", *SMALL]
    for name in ("a", "b"):
        assert main([*args, "--ckpt", str(tmp_path / f"{name}.ckpt")]) == 0
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert main(["eval", "--ckpt", str(tmp_path / "a.ckpt"), "--graphs", str(graph_dir),
                 "--report", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert list(report["unseen"]) == ["motor"] and len(report["known"]) == 6


def test_loto_has_six_known_and_one_unseen_per_fold(graph_dir, tmp_path):
    out = tmp_path / "loto.json"
    assert main(["loto", "--graphs", str(graph_dir), "--heldout-task", "language",
                 "--epochs", "1", "--report", str(out), *SMALL]) == 0
    report = json.loads(out.read_text())
    assert len(report["folds"]) == 5
    for fold in report["folds"]:
        assert len(fold["known"]) == 6 and list(fold["unseen"]) == ["language"]
    assert len(report["known"]) == 6 and list(report["unseen"]) == ["language"]
    assert fileio.canonical_json(json.loads(out.read_text())) == out.read_text()


def test_loto_ablation_label(graph_dir, tmp_path):
    out = tmp_path / "abl.json"
    assert main(["loto", "--graphs", str(graph_dir), "--heldout-task", "wm", "--lambda2", "0",
                 "--epochs", "1", "--report", str(out), *SMALL]) == 0
    assert json.loads(out.read_text())["label"] == "w/o L_ortho"


def test_error_line_is_machine_readable(tmp_path, capsys):
    assert main(["build-graphs", "--manifest", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "g")]) == 1
    line = capsys.readouterr().err.strip().splitlines()[-1]
    assert line.startswith("error: ")
    err = json.loads(line[len("error: "):])
    assert err["command"] == "build-graphs" and err["type"] == "FileNotFoundError"
    assert "missing.json" in err["message"]


def test_unknown_task_reports_error(graph_dir, tmp_path, capsys):
    assert main(["train", "--graphs", str(graph_dir), "--heldout-task", "rest",
                 "--test-partition", "1", "--ckpt", str(tmp_path / "x.ckpt"), *SMALL]) == 1
    err = json.loads(capsys.readouterr().err.strip().split("error: ", 1)[1])
    assert err["type"] == "UnknownTask"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tagat", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("synth", "build-graphs", "train", "eval", "loto", "gradcheck"):
        assert cmd in proc.stdout
