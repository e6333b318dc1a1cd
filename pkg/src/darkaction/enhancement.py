"""Zero-reference curve enhancement optimized directly per image.

The enhanced image is produced by ``n`` quadratic curve iterations

    LE_0 = I,    LE_k = LE_{k-1} + A_k * LE_{k-1} * (1 - LE_{k-1})

with a per-pixel, per-channel parameter map ``A`` of shape ``(n, H, W, 3)``.
``A`` is fitted by Adam on a weighted sum of four reference-free losses
(spatial consistency, exposure, color constancy, illumination smoothness),
with gradients derived by hand through the curve recurrence.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .media_io import VideoClip

SPATIAL_REGION = 4
EXPOSURE_REGION = 16


class NumericalError(ArithmeticError):
    pass


@dataclasses.dataclass(frozen=True)
class LossWeights:
    w_spa: float = 10.0
    w_col: float = 5.0
    w_tv: float = 200.0
    exposure_e: float = 0.6


@dataclasses.dataclass(frozen=True)
class LossBreakdown:
    spa: float
    exp: float
    col: float
    tv: float
    total: float

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def _check_dims(img: np.ndarray, a: np.ndarray) -> None:
    if a.ndim != 4 or a.shape[1:] != img.shape:
        raise ValueError(f"curve map shape {a.shape} does not match image {img.shape}")


def _curve_stack(img: np.ndarray, a: np.ndarray) -> list[np.ndarray]:
    les = [img]
    for ak in a:
        x = les[-1]
        les.append(x + ak * x * (1 - x))
    return les


def apply_curves(img: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Run every curve iteration in ``a`` over ``img``."""
    img = np.asarray(img)
    a = np.asarray(a)
    _check_dims(img, a)
    return _curve_stack(img, a)[-1]


# ---------------------------------------------------------------------------
# Region pooling helpers


def _luminance(y: np.ndarray) -> np.ndarray:
    return y.mean(axis=-1)


def _pool_replicated(lum: np.ndarray, r: int) -> np.ndarray:
    h, w = lum.shape
    hp, wp = -(-h // r) * r, -(-w // r) * r
    rows = np.minimum(np.arange(hp), h - 1)
    cols = np.minimum(np.arange(wp), w - 1)
    padded = lum[np.ix_(rows, cols)]
    return padded.reshape(hp // r, r, wp // r, r).mean(axis=(1, 3))


def _unpool_replicated(dpool: np.ndarray, shape: tuple[int, int], r: int) -> np.ndarray:
    h, w = shape
    dpad = np.repeat(np.repeat(dpool, r, axis=0), r, axis=1) / (r * r)
    dlum = dpad[:h, :w].copy()
    # Replicated rows/columns fold back onto the last real row/column.
    dlum[h - 1, :] += dpad[h:, :w].sum(axis=0)
    dlum[:, w - 1] += dpad[:h, w:].sum(axis=1)
    dlum[h - 1, w - 1] += dpad[h:, w:].sum()
    return dlum


def _block_starts(n: int, r: int) -> np.ndarray:
    return np.arange(0, n, r)


def _block_means(lum: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    rs, cs = _block_starts(lum.shape[0], r), _block_starts(lum.shape[1], r)
    sums = np.add.reduceat(np.add.reduceat(lum, rs, axis=0), cs, axis=1)
    rc = np.diff(np.append(rs, lum.shape[0]))
    cc = np.diff(np.append(cs, lum.shape[1]))
    counts = np.outer(rc, cc)
    return sums / counts, counts


# ---------------------------------------------------------------------------
# Losses, each returning the value and its gradient w.r.t. its input


def _spatial(i_img, y_img, region):
    if i_img.shape != y_img.shape:
        raise ValueError(f"shape mismatch {i_img.shape} vs {y_img.shape}")
    yp = _pool_replicated(_luminance(y_img), region)
    ip = _pool_replicated(_luminance(i_img), region)
    k = yp.size
    # Each unordered neighbor pair appears twice in the sum over (i, j in Omega(i)).
    dyh, dih = np.diff(yp, axis=1), np.diff(ip, axis=1)
    dyv, div = np.diff(yp, axis=0), np.diff(ip, axis=0)
    eh = np.abs(dyh) - np.abs(dih)
    ev = np.abs(dyv) - np.abs(div)
    value = 2.0 * (np.sum(eh * eh) + np.sum(ev * ev)) / k
    gh = 4.0 / k * eh * np.sign(dyh)
    gv = 4.0 / k * ev * np.sign(dyv)
    dpool = np.zeros_like(yp)
    dpool[:, 1:] += gh
    dpool[:, :-1] -= gh
    dpool[1:, :] += gv
    dpool[:-1, :] -= gv
    dlum = _unpool_replicated(dpool, y_img.shape[:2], region)
    dy = np.repeat(dlum[..., None] / 3.0, 3, axis=-1)
    return value, dy


def _exposure(y_img, e, region):
    means, counts = _block_means(_luminance(y_img), region)
    m = means.size
    dev = means - e
    value = np.sum(np.abs(dev)) / m
    dblock = np.sign(dev) / (m * counts)
    rs = _block_starts(y_img.shape[0], region)
    cs = _block_starts(y_img.shape[1], region)
    row_of = np.searchsorted(rs, np.arange(y_img.shape[0]), side="right") - 1
    col_of = np.searchsorted(cs, np.arange(y_img.shape[1]), side="right") - 1
    dlum = dblock[np.ix_(row_of, col_of)]
    dy = np.repeat(dlum[..., None] / 3.0, 3, axis=-1)
    return value, dy


def _color(y_img):
    j = y_img.reshape(-1, 3).mean(axis=0)
    r, g, b = j
    value = (r - g) ** 2 + (r - b) ** 2 + (g - b) ** 2
    dj = np.array([2 * (r - g) + 2 * (r - b), -2 * (r - g) + 2 * (g - b), -2 * (r - b) - 2 * (g - b)])
    npix = y_img.shape[0] * y_img.shape[1]
    dy = np.broadcast_to(dj / npix, y_img.shape).astype(y_img.dtype)
    return value, dy


def _tv(a):
    n, h, w, _ = a.shape
    gx = np.zeros_like(a)
    gy = np.zeros_like(a)
    gx[:, :, :-1, :] = a[:, :, 1:, :] - a[:, :, :-1, :]
    gy[:, :-1, :, :] = a[:, 1:, :, :] - a[:, :-1, :, :]
    s = np.abs(gx) + np.abs(gy)
    c = 1.0 / (n * h * w)
    value = c * np.sum(s * s)
    ds = 2.0 * c * s
    dgx = ds * np.sign(gx)
    dgy = ds * np.sign(gy)
    da = np.zeros_like(a)
    da[:, :, 1:, :] += dgx[:, :, :-1, :]
    da[:, :, :-1, :] -= dgx[:, :, :-1, :]
    da[:, 1:, :, :] += dgy[:, :-1, :, :]
    da[:, :-1, :, :] -= dgy[:, :-1, :, :]
    return value, da


def loss_spatial(i_img: np.ndarray, y_img: np.ndarray, region: int = SPATIAL_REGION) -> float:
    """Mean squared change of neighbor contrast between region-mean luminances."""
    return float(_spatial(np.asarray(i_img), np.asarray(y_img), region)[0])


def loss_exposure(y_img: np.ndarray, e: float = 0.6, region: int = EXPOSURE_REGION) -> float:
    return float(_exposure(np.asarray(y_img), e, region)[0])


def loss_color(y_img: np.ndarray) -> float:
    return float(_color(np.asarray(y_img))[0])


def loss_tv(a: np.ndarray) -> float:
    return float(_tv(np.asarray(a))[0])


def _combine(spa, exp, col, tv, weights: LossWeights) -> LossBreakdown:
    total = weights.w_spa * spa + exp + weights.w_col * col + weights.w_tv * tv
    return LossBreakdown(float(spa), float(exp), float(col), float(tv), float(total))


def loss_total(i_img: np.ndarray, a: np.ndarray, weights: LossWeights = LossWeights()) -> LossBreakdown:
    y = apply_curves(i_img, a)
    return _combine(
        loss_spatial(i_img, y),
        loss_exposure(y, weights.exposure_e),
        loss_color(y),
        loss_tv(a),
        weights,
    )


def loss_and_grad(i_img: np.ndarray, a: np.ndarray, weights: LossWeights = LossWeights()):
    """Total loss breakdown and d(total)/dA in a single forward/backward pass."""
    i_img = np.asarray(i_img)
    a = np.asarray(a)
    _check_dims(i_img, a)
    les = _curve_stack(i_img, a)
    y = les[-1]
    spa, d_spa = _spatial(i_img, y, SPATIAL_REGION)
    exp, d_exp = _exposure(y, weights.exposure_e, EXPOSURE_REGION)
    col, d_col = _color(y)
    tv, d_tv = _tv(a)
    dle = weights.w_spa * d_spa + d_exp + weights.w_col * d_col
    grad = np.empty_like(a)
    for k in range(len(a) - 1, -1, -1):
        x = les[k]
        grad[k] = dle * x * (1 - x)
        dle = dle * (1 + a[k] * (1 - 2 * x))
    grad += weights.w_tv * d_tv
    return _combine(spa, exp, col, tv, weights), grad.astype(a.dtype, copy=False)


def grad_total(i_img: np.ndarray, a: np.ndarray, weights: LossWeights = LossWeights()) -> np.ndarray:
    return loss_and_grad(i_img, a, weights)[1]


# ---------------------------------------------------------------------------
# Optimization


@dataclasses.dataclass
class EnhanceResult:
    image: np.ndarray
    curves: np.ndarray
    trace: list[LossBreakdown]

    def report(self) -> dict:
        return {
            "steps": len(self.trace) - 1,
            "initial": self.trace[0].to_json(),
            "final": self.trace[-1].to_json(),
        }


def enhance_image(
    img: np.ndarray,
    weights: LossWeights = LossWeights(),
    steps: int = 200,
    lr: float = 0.01,
    iters: int = 8,
) -> EnhanceResult:
    """Fit a curve map to ``img`` with Adam; ``trace[k]`` is the loss after ``k`` steps."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    img = np.asarray(img, dtype=np.float64)
    a = np.zeros((iters,) + img.shape)
    m = np.zeros_like(a)
    v = np.zeros_like(a)
    b1, b2, eps = 0.9, 0.999, 1e-8
    trace = []
    for step in range(steps + 1):
        loss, grad = loss_and_grad(img, a, weights)
        if not math.isfinite(loss.total):
            raise NumericalError(f"non-finite enhancement loss at step {step}")
        trace.append(loss)
        if step == steps:
            break
        t = step + 1
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        a = np.clip(a - lr * mhat / (np.sqrt(vhat) + eps), -1.0, 1.0)
    return EnhanceResult(image=apply_curves(img, a), curves=a, trace=trace)


def enhance_clip(video: VideoClip, workers: int = 1, **kwargs) -> tuple[VideoClip, list[EnhanceResult]]:
    """Enhance every frame independently; results keep frame order."""
    frames = list(video.frames)
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        jobs = [pool.submit(enhance_image, f, **kwargs) for f in frames] if pool else None
        results = []
        for idx, frame in enumerate(frames):
            try:
                results.append(jobs[idx].result() if jobs else enhance_image(frame, **kwargs))
            except NumericalError as exc:
                raise NumericalError(f"frame {idx + 1}: {exc}") from exc
    finally:
        if pool:
            pool.shutdown(cancel_futures=True)
    return VideoClip(np.stack([r.image for r in results])), results


def gamma_correct(img: np.ndarray, g: float) -> np.ndarray:
    """Blanket gamma correction ``v ** (1/g)``."""
    if g <= 0:
        raise ValueError(f"gamma must be > 0, got {g}")
    return np.power(np.asarray(img, dtype=np.float64), 1.0 / g)
