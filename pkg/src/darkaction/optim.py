"""Ranger (RAdam + LookAhead + gradient centralization) and the one-cycle schedule."""

from __future__ import annotations

import dataclasses
import math

import numpy as np


@dataclasses.dataclass
class RangerState:
    step: int = 0
    m: dict = dataclasses.field(default_factory=dict)
    v: dict = dataclasses.field(default_factory=dict)
    slow: dict = dataclasses.field(default_factory=dict)


def centralize(grad: np.ndarray) -> np.ndarray:
    """Subtract the per-row mean from matrix-shaped gradients; vectors pass through."""
    if grad.ndim < 2:
        return grad
    return grad - grad.mean(axis=tuple(range(1, grad.ndim)), keepdims=True)


def ranger_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: RangerState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    k: int = 6,
    lookahead_alpha: float = 0.5,
) -> dict[str, np.ndarray]:
    """One Ranger update; returns new params and mutates ``state``."""
    b1, b2 = betas
    if state.step == 0:
        state.slow = {n: p.copy() for n, p in params.items()}
        state.m = {n: np.zeros_like(p) for n, p in params.items()}
        state.v = {n: np.zeros_like(p) for n, p in params.items()}
    state.step += 1
    t = state.step
    rho_inf = 2.0 / (1.0 - b2) - 1.0
    b2t = b2**t
    rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
    rect = None
    if rho_t > 4.0:
        rect = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
    out = {}
    for name, p in params.items():
        g = centralize(grads[name])
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        if rect is not None:
            out[name] = p - lr * rect * mhat / (np.sqrt(v / (1 - b2t)) + eps)
        else:
            out[name] = p - lr * mhat
    if t % k == 0:
        for name in out:
            slow = state.slow[name] + lookahead_alpha * (out[name] - state.slow[name])
            state.slow[name] = slow
            out[name] = slow.copy()
    return out


def one_cycle_lr(step: int, total_steps: int, lr_max: float, pct_start: float = 0.3,
                 div_factor: float = 25.0, final_div: float = 1e4) -> float:
    """Linear warmup from ``lr_max/25`` over 30% of steps, then cosine decay to ``lr_max/1e4``."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    lo, hi, end = lr_max / div_factor, lr_max, lr_max / final_div
    warm = pct_start * total_steps
    if step <= warm:
        return lo + (hi - lo) * (step / warm if warm > 0 else 1.0)
    span = (total_steps - 1) - warm
    frac = min((step - warm) / span, 1.0) if span > 0 else 1.0
    return end + (hi - end) * 0.5 * (1.0 + math.cos(math.pi * frac))
