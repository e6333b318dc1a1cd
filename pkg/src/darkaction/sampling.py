"""Frame-selection strategies that map a clip of any length onto exactly T slots.

Four strategies are supported:

* ``delta``: rate ``min((N + T*delta)/T, alpha)`` with ``delta ~ U[beta, gamma_max)``
* ``constant``: rate ``N_max / T``
* ``length_adjusted``: rate ``N / T`` so the clip fills all T slots
* ``variable``: rate ``~ U[N_min/T, N_max/T]``

The sampled frames are placed between ``p1`` leading and ``p2`` trailing blank
(all-zero) frames, with ``p1`` uniform over ``{0, ..., T-M-1}``.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .media_io import VideoClip
from .rng import Rng

STRATEGIES = ("delta", "constant", "length_adjusted", "variable")

# Absorbs rounding in N / rate when the rate is exactly N / T.
_EPS = 1e-9


@dataclasses.dataclass(frozen=True)
class SamplingParams:
    t: int = 64
    beta: float = 0.0
    gamma_max: float = 1.5
    alpha: float = 4.0

    def __post_init__(self):
        if self.t < 1:
            raise ValueError(f"T must be >= 1, got {self.t}")
        if not 0 <= self.beta <= self.gamma_max:
            raise ValueError(f"need 0 <= beta <= gamma_max, got {self.beta}, {self.gamma_max}")
        if self.alpha < 1:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")


@dataclasses.dataclass(frozen=True)
class DatasetStats:
    n_min: int
    n_max: int


@dataclasses.dataclass(frozen=True)
class SamplePlan:
    rate: float
    indices: tuple[int, ...]
    p1: int
    p2: int
    delta: float | None = None

    @property
    def m(self) -> int:
        return len(self.indices)

    def to_json(self) -> dict:
        return {
            "delta": self.delta,
            "rate": self.rate,
            "p1": self.p1,
            "p2": self.p2,
            "m": self.m,
            "indices": list(self.indices),
        }


@dataclasses.dataclass
class SampledClip:
    frames: np.ndarray
    blank_mask: np.ndarray


def draw_delta(rng: Rng, beta: float, gamma_max: float) -> float:
    if beta > gamma_max:
        raise ValueError(f"beta ({beta}) must not exceed gamma_max ({gamma_max})")
    return beta + rng.next_uniform() * (gamma_max - beta)


def compute_sampling_rate(n: int, t: int, delta: float, alpha: float) -> float:
    return min((n + t * delta) / t, alpha)


def sample_indices(n: int, rate: float) -> list[int]:
    """Indices ``floor(k * rate)`` for ``k < floor(N / rate)``.

    Rates below 1 (clips shorter than T) repeat frames, so the indices are
    non-decreasing in general and strictly increasing once ``rate >= 1``.
    """
    if rate <= 0:
        raise ValueError(f"sampling rate must be positive, got {rate}")
    m = math.floor(n / rate + _EPS)
    if m == 0:
        raise ValueError(f"degenerate video: N={n} at rate {rate} yields no frames")
    return [min(math.floor(k * rate + _EPS), n - 1) for k in range(m)]


def truncate_central(indices: list[int], t: int) -> list[int]:
    if len(indices) <= t:
        return indices
    start = (len(indices) - t) // 2
    return indices[start : start + t]


def pad_plan(m: int, t: int, rng: Rng) -> tuple[int, int]:
    if m > t:
        raise ValueError(f"{m} sampled frames do not fit in {t} slots")
    if m == t:
        return 0, 0
    p1 = rng.randbelow(t - m)
    return p1, t - m - p1


def _strategy_rate(strategy: str, n: int, params: SamplingParams, stats: DatasetStats | None, rng: Rng):
    t = params.t
    if strategy == "delta":
        delta = draw_delta(rng, params.beta, params.gamma_max)
        return compute_sampling_rate(n, t, delta, params.alpha), delta
    if strategy == "length_adjusted":
        return n / t, None
    if strategy in ("constant", "variable"):
        if stats is None:
            raise ValueError(f"strategy {strategy!r} needs dataset stats (N_min, N_max)")
        if strategy == "constant":
            rate = stats.n_max / t
        else:
            rate = (stats.n_min + rng.next_uniform() * (stats.n_max - stats.n_min)) / t
        return min(rate, params.alpha), None
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}")


def plan_sampling(
    n: int,
    strategy: str,
    params: SamplingParams,
    rng: Rng,
    stats: DatasetStats | None = None,
) -> SamplePlan:
    """Draw the rate, the source indices and the blank padding for a clip of length ``n``."""
    rate, delta = _strategy_rate(strategy, n, params, stats, rng)
    indices = truncate_central(sample_indices(n, rate), params.t)
    p1, p2 = pad_plan(len(indices), params.t, rng)
    return SamplePlan(rate=rate, indices=tuple(indices), p1=p1, p2=p2, delta=delta)


def apply_plan(video: VideoClip, plan: SamplePlan) -> SampledClip:
    src = video.frames
    t = plan.p1 + plan.m + plan.p2
    frames = np.zeros((t,) + src.shape[1:], dtype=src.dtype)
    frames[plan.p1 : plan.p1 + plan.m] = src[list(plan.indices)]
    mask = np.ones(t, dtype=bool)
    mask[plan.p1 : plan.p1 + plan.m] = False
    return SampledClip(frames=frames, blank_mask=mask)


def sample_clip(
    video: VideoClip,
    strategy: str,
    params: SamplingParams,
    stats: DatasetStats | None,
    rng: Rng,
) -> tuple[SampledClip, SamplePlan]:
    plan = plan_sampling(video.n_frames, strategy, params, rng, stats)
    return apply_plan(video, plan), plan


def tta_param_sets(video: VideoClip, params: SamplingParams, rng: Rng, count: int = 5) -> list[tuple[float, int, int]]:
    """``count`` independent (delta, p1, p2) draws under the delta strategy."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    plans = [plan_sampling(video.n_frames, "delta", params, rng) for _ in range(count)]
    return [(p.delta, p.p1, p.p2) for p in plans]


def plan_from_triple(n: int, triple: tuple[float, int, int], params: SamplingParams) -> SamplePlan:
    """Rebuild the delta-strategy plan a TTA triple describes."""
    delta, p1, p2 = triple
    rate = compute_sampling_rate(n, params.t, delta, params.alpha)
    indices = truncate_central(sample_indices(n, rate), params.t)
    if p1 + len(indices) + p2 != params.t:
        raise ValueError(f"triple {triple} is inconsistent with N={n}, T={params.t}")
    return SamplePlan(rate=rate, indices=tuple(indices), p1=p1, p2=p2, delta=delta)
