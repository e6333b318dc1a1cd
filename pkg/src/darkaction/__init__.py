"""Low-light action recognition toolkit.

Zero-reference curve enhancement, delta frame sampling with the usual baseline
strategies, a single-layer temporal attention head trained with focal loss, and
a synthetic benchmark for clip-length leakage.
"""

from .enhancement import LossWeights, apply_curves, enhance_image, gamma_correct, loss_total
from .head import FocalConfig, HeadConfig, head_forward, predict_proba
from .media_io import VideoClip, load_video, save_video
from .rng import Rng
from .sampling import STRATEGIES, SamplePlan, SamplingParams, plan_sampling
from .train import predict_tta, train_head

__version__ = "0.1.0"

__all__ = [
    "FocalConfig",
    "HeadConfig",
    "LossWeights",
    "Rng",
    "STRATEGIES",
    "SamplePlan",
    "SamplingParams",
    "VideoClip",
    "apply_curves",
    "enhance_image",
    "gamma_correct",
    "head_forward",
    "load_video",
    "loss_total",
    "plan_sampling",
    "predict_proba",
    "predict_tta",
    "save_video",
    "train_head",
]
