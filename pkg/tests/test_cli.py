import json

import numpy as np
import pytest

from darkaction.cli import run_command
from darkaction.media_io import load_tensor, load_video


def run(argv, capsys):
    code = run_command([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_enhance(corpus, capsys):
    code, _, _ = run(["enhance", "--in", corpus / "vid", "--out", corpus / "enh", "--steps", 3], capsys)
    assert code == 0
    assert load_video(corpus / "enh").n_frames == 40
    report = json.loads((corpus / "enh" / "report.json").read_text())
    assert len(report["frames"]) == 40 and report["frames"][0]["steps"] == 3


def test_gamma(corpus, capsys):
    assert run(["gamma", "--in", corpus / "vid", "--out", corpus / "g", "--g", 2], capsys)[0] == 0
    src, out = load_video(corpus / "vid").frames, load_video(corpus / "g").frames
    np.testing.assert_allclose(out, np.sqrt(src), atol=1 / 255)


def test_sample(corpus, capsys):
    code, _, _ = run(["sample", "--in", corpus / "vid", "--out", corpus / "s", "--strategy", "delta",
                      "--t", 64, "--seed", 3], capsys)
    assert code == 0
    plan = json.loads((corpus / "s" / "plan.json").read_text())
    assert load_video(corpus / "s").n_frames == 64
    assert plan["p1"] + plan["m"] + plan["p2"] == 64 and 0 <= plan["delta"] < 1.5


def test_featurize(corpus, capsys):
    assert run(["featurize", "--in", corpus / "vid", "--out", corpus / "f.dsrb"], capsys)[0] == 0
    assert load_tensor(corpus / "f.dsrb").shape == (40, 48)


def test_train_and_predict(corpus, capsys):
    code, _, _ = run(["train-head", "--data", corpus / "data", "--out", corpus / "m", "--epochs", 2], capsys)
    assert code == 0
    assert (corpus / "m" / "manifest.json").exists()
    code, out, _ = run(["predict", "--model", corpus / "m", "--in", corpus / "vid", "--tta", 3], capsys)
    assert code == 0
    result = json.loads(out)
    assert result["class"] in (0, 1) and abs(sum(result["probabilities"]) - 1) < 1e-12


def test_bias_experiment(corpus, capsys):
    code, out, _ = run(["bias-experiment", "--config", corpus / "bias.json", "--out", corpus / "r.json"], capsys)
    assert code == 0
    report = json.loads((corpus / "r.json").read_text())
    assert set(report) == {"constant", "delta", "variable"}
    assert "constant" in out and "MI" in out


def test_gradcheck(capsys):
    code, out, _ = run(["gradcheck", "--trials", 1], capsys)
    assert code == 0 and out.count("PASS") == 2


def test_gradcheck_failure_is_numerical(capsys):
    code, out, err = run(["gradcheck", "--trials", 1, "--tol-enhance", 1e-30], capsys)
    assert code == 3 and "FAIL" in out and err.startswith("error:")


@pytest.mark.parametrize("argv", [
    ["nope"],
    ["gamma", "--in", "x"],
    ["sample", "--in", "x", "--out", "y", "--strategy", "sideways"],
    ["gamma", "--in", "x", "--out", "y", "--g", "0"],
    ["enhance", "--in", "x", "--out", "y", "--workers", "0"],
])
def test_usage_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 1
    assert err.startswith("error:") and len(err.strip().splitlines()) == 1


def test_constant_needs_nmax(corpus, capsys):
    code, _, err = run(["sample", "--in", corpus / "vid", "--out", corpus / "s", "--strategy", "constant"], capsys)
    assert code == 1 and "--nmax" in err


def test_data_errors(corpus, capsys):
    (corpus / "vid" / "frame_000002.ppm").unlink()
    code, _, err = run(["gamma", "--in", corpus / "vid", "--out", corpus / "g", "--g", 2], capsys)
    assert code == 2 and "missing frame 2" in err
    bad = corpus / "bad.json"
    bad.write_text('{"t_frames": 0}')
    code, _, err = run(["bias-experiment", "--config", bad, "--out", corpus / "r.json"], capsys)
    assert code == 2 and "t_frames" in err


def test_missing_training_manifest(tmp_path, capsys):
    code, _, err = run(["train-head", "--data", tmp_path, "--out", tmp_path / "m"], capsys)
    assert code == 2 and "manifest" in err
