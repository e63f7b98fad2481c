import json

import numpy as np
import pytest

from arteryflow.cli import MANIFEST_NAME, main
from arteryflow.experiments import build_model
from arteryflow.nn.params import load_checkpoint

SYNTH = ["--count", "5", "--seed", "7", "--axial", "6", "--rings", "3"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.name != MANIFEST_NAME}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> train -> eval, twice from scratch."""
    roots = []
    for name in ("a", "b"):
        root = tmp_path_factory.mktemp(name)
        assert main(["synth", *SYNTH, "--out", str(root / "data")]) == 0
        assert main(["train", "--data", str(root / "data"), "--epochs", "2", "--lr", "1e-3", "--seed", "3",
                     "--out", str(root / "run")]) == 0
        assert main(["eval", "--data", str(root / "data"), "--checkpoint", str(root / "run" / "checkpoint.json"),
                     "--out", str(root / "eval")]) == 0
        roots.append(root)
    return roots


@pytest.mark.parametrize("stage", ["data", "run", "eval"])
def test_outputs_are_byte_identical(pipeline, stage):
    a, b = (files(r / stage) for r in pipeline)
    assert a.keys() == b.keys() and len(a) > 0
    for name in a:
        assert a[name] == b[name], name


def test_every_command_writes_one_manifest(pipeline):
    root = pipeline[0]
    for stage, command in (("data", "synth"), ("run", "train"), ("eval", "eval")):
        man = json.loads((root / stage / MANIFEST_NAME).read_text())
        assert man["command"] == command
        assert {"config", "seed", "tool_version", "inputs", "outputs", "duration_s"} <= man.keys()
        for name in man["outputs"]:
            assert (root / stage / name).is_file()


def test_train_outputs(pipeline):
    run_dir = pipeline[0] / "run"
    lines = (run_dir / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 4
    assert (run_dir / "loss.png").read_bytes()[:4] == b"\x89PNG"
    params, kind, config = load_checkpoint(run_dir / "checkpoint.json")
    assert kind == "segnn"
    assert sorted(config["split"]["train"] + config["split"]["val"] + config["split"]["test"]) == list(range(5))


def test_eval_outputs(pipeline):
    d = pipeline[0] / "eval"
    rows = (d / "metrics.csv").read_text().splitlines()
    assert rows[0].startswith("sample,nmae,eps,cos")
    assert len(rows) == 2  # one test tube out of five
    assert "NMAE [%]" in (d / "metrics.txt").read_text()


def test_rotate_test_keeps_segnn_error(pipeline, capsys):
    root = pipeline[0]
    ckpt = root / "run" / "checkpoint.json"
    eps = []
    for extra in ([], ["--rotate-test"]):
        code, _, _ = run(capsys, "eval", "--data", root / "data", "--checkpoint", ckpt, "--split", "all",
                         "--out", root / f"eval{len(extra)}", *extra)
        assert code == 0
        rows = (root / f"eval{len(extra)}" / "metrics.csv").read_text().splitlines()[1:]
        eps.append(np.array([float(r.split(",")[2]) for r in rows]))
    np.testing.assert_allclose(eps[1], eps[0], rtol=1e-6)


def test_zero_learning_rate_keeps_initial_parameters(pipeline, tmp_path, capsys):
    code, _, _ = run(capsys, "train", "--data", pipeline[0] / "data", "--epochs", "2", "--lr", "0", "--seed", "5",
                     "--out", tmp_path)
    assert code == 0
    params, kind, config = load_checkpoint(tmp_path / "checkpoint.json")
    model, _ = build_model(kind, config["model"])
    assert np.array_equal(params.vector, model.init_params(5).vector)


def test_rotated_synth_records_rotations(tmp_path, capsys):
    code, _, _ = run(capsys, "synth", "--count", "2", "--seed", "1", "--axial", "4", "--rings", "2", "--rotate",
                     "--out", tmp_path)
    assert code == 0
    for s in json.loads((tmp_path / "manifest.json").read_text())["samples"]:
        R = np.array(s["rotation"])
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)


def test_export_writes_vtk(pipeline, tmp_path, capsys):
    root = pipeline[0]
    code, _, _ = run(capsys, "export", "--data", root / "data", "--checkpoint", root / "run" / "checkpoint.json",
                     "--out", tmp_path)
    assert code == 0
    vtk = sorted(tmp_path.glob("prediction_*.vtk"))
    assert len(vtk) == 1
    text = vtk[0].read_text()
    assert text.startswith("# vtk DataFile") and "truth" in text and "error" in text


def test_usage_errors(pipeline, tmp_path, capsys):
    code, _, err = run(capsys, "synth", "--count", "2")
    assert code == 2 and "usage" in err
    code, _, _ = run(capsys, "train", "--data", pipeline[0] / "data", "--model", "pointnet", "--out", tmp_path)
    assert code == 2
    code, _, err = run(capsys, "eval", "--data", pipeline[0] / "data", "--checkpoint", tmp_path / "missing.json",
                       "--out", tmp_path)
    assert code == 2 and "checkpoint not found" in err
    code, _, _ = run(capsys, "train", "--data", tmp_path / "nowhere", "--out", tmp_path)
    assert code == 2


def test_verify_exit_codes(tmp_path, capsys):
    code, out, _ = run(capsys, "verify", "--seed", "2", "--out", tmp_path)
    assert code == 0 and "all checks passed" in out
    assert "max error" in (tmp_path / "verify.txt").read_text()
    code, out, _ = run(capsys, "verify", "--seed", "2", "--poison")
    assert code == 1 and "FAILED: end-to-end equivariance" in out


def test_efficiency_command(tmp_path, capsys):
    code, out, _ = run(capsys, "efficiency", "--sizes", "2", "--seeds", "1", "--epochs", "1", "--out", tmp_path)
    assert code == 0
    rows = (tmp_path / "efficiency.csv").read_text().splitlines()
    assert rows[0] == "model,n_train,seed,eps"
    assert sorted(r.split(",")[0] for r in rows[1:]) == ["baseline", "segnn"]
    assert (tmp_path / "efficiency.png").is_file()
    assert json.loads((tmp_path / MANIFEST_NAME).read_text())["config"]["epochs"] == 1
