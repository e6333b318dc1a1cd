import json

import numpy as np
import pytest

from darkaction.media_io import save_tensor, save_video
from darkaction.rng import Rng


def build_corpus(root):
    """Small clip, feature training set and bias config used by the CLI tests."""
    r = Rng(5)
    save_video(root / "vid", [r.uniform_array((16, 16, 3), 0.0, 0.2) for _ in range(40)])
    data = root / "data"
    data.mkdir()
    samples = []
    for i in range(8):
        feats = r.normal_array((40 + 7 * i, 48)) + (i % 2)
        save_tensor(data / f"clip{i}.dsrb", feats, "f64")
        samples.append({"file": f"clip{i}.dsrb", "label": i % 2})
    (data / "manifest.json").write_text(json.dumps({"samples": samples}))
    (root / "bias.json").write_text(json.dumps({
        "head_dim": 8, "head_heads": 2, "bias_samples_per_class": 8, "bias_test_per_class": 4,
        "bias_epochs": 2, "bias_mi_draws": 200, "bias_strategies": ["constant", "delta", "variable"],
    }))
    return root


@pytest.fixture
def corpus(tmp_path):
    return build_corpus(tmp_path)


@pytest.fixture
def rng():
    return Rng(0)


def assert_bitwise_equal(a, b):
    assert np.asarray(a).tobytes() == np.asarray(b).tobytes()
