"""Training, test-time-augmented prediction and on-disk model format for the head."""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import media_io
from .head import (
    PARAM_NAMES,
    FeatureSequence,
    FocalConfig,
    HeadConfig,
    featurize_frames,
    focal_loss,
    head_backward,
    head_forward,
    init_params,
    normalize_time,
    predict_proba,
    temporal_pool,
)
from .media_io import VideoClip
from .optim import RangerState, one_cycle_lr, ranger_step
from .rng import Rng
from .sampling import SamplingParams, apply_plan, plan_from_triple, tta_param_sets

BATCH_SIZE = 2


class TrainingError(ArithmeticError):
    pass


@dataclasses.dataclass
class EpochStats:
    loss: float
    accuracy: float


def evaluate(dataset: Sequence[tuple[FeatureSequence, int]], params: dict, config: HeadConfig) -> float:
    correct = sum(int(np.argmax(head_forward(s, params, config)[0]) == y) for s, y in dataset)
    return correct / len(dataset)


def train_head(
    dataset: Sequence[tuple[FeatureSequence, int]],
    config: HeadConfig,
    focal: FocalConfig = FocalConfig(),
    epochs: int = 30,
    rng: Rng | None = None,
    lr_max: float = 3e-3,
    augment: Callable[[int, Rng], FeatureSequence] | None = None,
) -> tuple[dict, list[EpochStats]]:
    """Fit a head with Ranger under a one-cycle schedule, batch size 2.

    If ``augment`` is given it is called as ``augment(i, rng)`` every epoch to
    produce a fresh view of sample ``i``; otherwise the stored sequence is used.
    """
    if not dataset:
        raise ValueError("empty training set")
    rng = rng or Rng(0)
    params = init_params(config, rng)
    state = RangerState()
    n = len(dataset)
    steps_per_epoch = math.ceil(n / BATCH_SIZE)
    total = epochs * steps_per_epoch
    history = []
    step = 0
    for _epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b in range(steps_per_epoch):
            batch = order[b * BATCH_SIZE : (b + 1) * BATCH_SIZE]
            grads = {name: np.zeros_like(params[name]) for name in PARAM_NAMES}
            batch_loss = 0.0
            for i in batch:
                seq = augment(i, rng) if augment else dataset[i][0]
                logits, cache = head_forward(seq, params, config)
                loss, dlogits = focal_loss(logits, dataset[i][1], focal)
                batch_loss += loss
                for name, g in head_backward(cache, dlogits).items():
                    grads[name] += g
            k = len(batch)
            batch_loss /= k
            if not math.isfinite(batch_loss):
                raise TrainingError(f"non-finite training loss at step {step}")
            grads = {name: g / k for name, g in grads.items()}
            params = ranger_step(params, grads, state, one_cycle_lr(step, total, lr_max))
            epoch_loss += batch_loss * k
            step += 1
        history.append(EpochStats(epoch_loss / n, evaluate(dataset, params, config)))
    return params, history


# ---------------------------------------------------------------------------
# Inference


def sequence_from_plan(features: np.ndarray, plan, t_len: int) -> FeatureSequence:
    """Place per-frame features into T slots, pool to ``t_len`` and normalize over time."""
    sampled = apply_plan(VideoClip(features), plan)
    return normalize_time(temporal_pool(sampled.frames, sampled.blank_mask, t_len))


def predict_tta(
    features: np.ndarray,
    params: dict,
    config: HeadConfig,
    sampling: SamplingParams,
    rng: Rng,
    count: int = 5,
) -> tuple[int, np.ndarray]:
    """Average class probabilities over ``count`` delta-sampling draws of one clip.

    ``features`` holds one descriptor per source frame, shape ``(N, D)``.
    """
    clip = VideoClip(features)
    triples = tta_param_sets(clip, sampling, rng, count)
    total = np.zeros(config.classes)
    for triple in triples:
        plan = plan_from_triple(clip.n_frames, triple, sampling)
        total += predict_proba(sequence_from_plan(features, plan, config.t_len), params, config)
    probs = total / count
    return int(np.argmax(probs)), probs


def predict_video(video: VideoClip, model: "HeadModel", rng: Rng, count: int = 5):
    feats = featurize_frames(video.frames, model.grid)
    return predict_tta(feats, model.params, model.config, model.sampling, rng, count)


# ---------------------------------------------------------------------------
# Model directory: one DSRB file per tensor plus manifest.json


@dataclasses.dataclass
class HeadModel:
    params: dict
    config: HeadConfig
    sampling: SamplingParams
    grid: int = 4


def save_model(directory, model: HeadModel) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for name in PARAM_NAMES:
        value = np.asarray(model.params[name], dtype=np.float64)
        fname = f"{name}.dsrb"
        media_io.save_tensor(directory / fname, value, "f64")
        tensors[name] = {"file": fname, "shape": list(value.shape), "dtype": "f64"}
    manifest = {
        "tensors": tensors,
        "config": dataclasses.asdict(model.config),
        "sampling": dataclasses.asdict(model.sampling),
        "grid": model.grid,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_model(directory) -> HeadModel:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    config = HeadConfig(**manifest["config"])
    params = {}
    for name in PARAM_NAMES:
        entry = manifest["tensors"][name]
        value = media_io.load_tensor(directory / entry["file"])
        if list(value.shape) != entry["shape"]:
            raise media_io.FormatError(f"tensor {name}: shape {value.shape} != manifest {entry['shape']}")
        params[name] = np.asarray(value, dtype=np.float64)
    return HeadModel(params, config, SamplingParams(**manifest["sampling"]), manifest["grid"])

