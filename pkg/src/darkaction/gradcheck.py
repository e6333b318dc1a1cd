"""Central finite-difference oracles for the enhancement and head gradients.

The enhancement oracle re-evaluates the total loss with its own batched forward
(edge padding via ``np.pad``, explicit four-neighbor sums, explicit block loops)
so it shares no code with the analytic backward pass it checks.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .enhancement import EXPOSURE_REGION, SPATIAL_REGION, LossWeights, grad_total
from .head import PARAM_NAMES, FocalConfig, HeadConfig, focal_loss, head_backward, head_forward, init_params
from .rng import Rng

FD_STEP = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - n| / max(max|a|, max|n|)``, i.e. error relative to the gradient's scale."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


# ---------------------------------------------------------------------------
# Enhancement


def _data_loss(img: np.ndarray, y: np.ndarray, weights: LossWeights) -> np.ndarray:
    """Spatial, exposure and color terms for a batch of enhanced images ``(B, H, W, 3)``."""
    h, w = img.shape[:2]

    def region_means(lum, r):
        hp, wp = -(-h // r) * r, -(-w // r) * r
        pad = np.pad(lum, [(0, 0)] * (lum.ndim - 2) + [(0, hp - h), (0, wp - w)], mode="edge")
        return pad.reshape(pad.shape[:-2] + (hp // r, r, wp // r, r)).mean(axis=(-3, -1))

    ly = region_means(y.mean(axis=-1), SPATIAL_REGION)
    li = region_means(img.mean(axis=-1), SPATIAL_REGION)
    gh, gw = li.shape
    spa = np.zeros(y.shape[0])
    for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        for i in range(gh):
            for j in range(gw):
                ni, nj = i + di, j + dj
                if 0 <= ni < gh and 0 <= nj < gw:
                    e = np.abs(ly[:, i, j] - ly[:, ni, nj]) - abs(li[i, j] - li[ni, nj])
                    spa += e * e
    spa /= gh * gw

    lum = y.mean(axis=-1)
    devs = []
    r = EXPOSURE_REGION
    for i in range(0, h, r):
        for j in range(0, w, r):
            devs.append(np.abs(lum[:, i : i + r, j : j + r].mean(axis=(1, 2)) - weights.exposure_e))
    exp = np.mean(devs, axis=0)

    jm = y.mean(axis=(1, 2))
    col = sum((jm[:, p] - jm[:, q]) ** 2 for p, q in ((0, 1), (0, 2), (1, 2)))
    return weights.w_spa * spa + exp + weights.w_col * col


def _tv_slices(a: np.ndarray) -> np.ndarray:
    """Unnormalized smoothness sum of each ``(..., H, W)`` slice."""
    zx = np.zeros(a.shape[:-1] + (1,))
    zy = np.zeros(a.shape[:-2] + (1, a.shape[-1]))
    gx = np.concatenate([np.diff(a, axis=-1), zx], axis=-1)
    gy = np.concatenate([np.diff(a, axis=-2), zy], axis=-2)
    return ((np.abs(gx) + np.abs(gy)) ** 2).sum(axis=(-2, -1))


def batched_total_loss(img: np.ndarray, a: np.ndarray, weights: LossWeights) -> np.ndarray:
    """Total enhancement loss for a batch of curve maps ``a`` of shape ``(B, n, H, W, 3)``."""
    b, n, h, w, _ = a.shape
    y = np.broadcast_to(img, (b, h, w, 3))
    for k in range(n):
        y = y + a[:, k] * y * (1 - y)
    tv = _tv_slices(np.moveaxis(a, -1, 2)).sum(axis=(1, 2)) / (n * h * w)
    return _data_loss(img, y, weights) + weights.w_tv * tv


def _single_entry_losses(img, a, les, slices, coords, values, weights):
    """Total loss with ``a[coord]`` replaced by ``values`` for each coordinate.

    A curve parameter only moves its own pixel/channel chain and its own
    (iteration, channel) smoothness slice, so only those are recomputed.
    """
    n, h, w, _ = a.shape
    k, r, c, ch = coords
    x = les[k, r, c, ch]
    x = x + values * x * (1 - x)
    for j in range(1, n):
        later = k + j < n
        aj = np.where(later, a[np.minimum(k + j, n - 1), r, c, ch], 0.0)
        x = np.where(later, x + aj * x * (1 - x), x)
    y = np.repeat(les[-1][None], len(values), axis=0)
    y[np.arange(len(values)), r, c, ch] = x
    sl = a[k, :, :, ch].copy()
    sl[np.arange(len(values)), r, c] = values
    d_tv = (_tv_slices(sl) - slices[k, ch]) / (n * h * w)
    tv = slices.sum() / (n * h * w) + d_tv
    return _data_loss(img, y, weights) + weights.w_tv * tv


def fd_enhance_grad(img, a, weights: LossWeights, step: float = FD_STEP, chunk: int = 1024) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    les = [img]
    for ak in a:
        les.append(les[-1] + ak * les[-1] * (1 - les[-1]))
    les = np.stack(les)
    slices = _tv_slices(np.moveaxis(a, -1, 1))
    out = np.empty(a.size)
    for start in range(0, a.size, chunk):
        idx = np.arange(start, min(start + chunk, a.size))
        coords = np.unravel_index(idx, a.shape)
        base = a[coords]
        fp = _single_entry_losses(img, a, les, slices, coords, base + step, weights)
        fm = _single_entry_losses(img, a, les, slices, coords, base - step, weights)
        out[idx] = (fp - fm) / (2 * step)
    return out.reshape(a.shape)


def _separate_neighbors(a: np.ndarray, margin: float) -> np.ndarray:
    """Nudge entries until every forward difference is at least ``margin`` from zero."""
    a = a.copy()
    for _ in range(100):
        close_x = np.abs(np.diff(a, axis=2)) < margin
        close_y = np.abs(np.diff(a, axis=1)) < margin
        if not close_x.any() and not close_y.any():
            return a
        a[:, :, 1:, :][close_x] += 3 * margin
        a[:, 1:, :, :][close_y] += 3 * margin
    raise RuntimeError("could not separate curve-map neighbors")


def random_enhance_instance(rng: Rng, size: int = 16, iters: int = 8, margin: float = 1e-4):
    """Random image and curve map kept away from the non-differentiable set."""
    img = rng.uniform_array((size, size, 3), 0.02, 0.98)
    a = rng.uniform_array((iters, size, size, 3), -0.9, 0.9)
    return img, _separate_neighbors(a, margin)


def check_enhancement(trials: int = 20, seed: int = 0, dtype=np.float64, size: int = 16) -> list[float]:
    """Relative error of the analytic gradient against the 64-bit oracle, per trial."""
    rng = Rng(seed)
    weights = LossWeights()
    errors = []
    for _ in range(trials):
        img, a = random_enhance_instance(rng, size)
        analytic = grad_total(img.astype(dtype), a.astype(dtype), weights)
        errors.append(relative_error(analytic.astype(np.float64), fd_enhance_grad(img, a, weights)))
    return errors


# ---------------------------------------------------------------------------
# Head


@dataclasses.dataclass
class HeadCheck:
    errors: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.errors.values())


def fd_head_grads(seq, label, params, config, focal: FocalConfig, step: float = FD_STEP) -> dict:
    def objective(p):
        return focal_loss(head_forward(seq, p, config)[0], label, focal)[0]

    grads = {}
    for name in PARAM_NAMES:
        g = np.zeros_like(params[name])
        base = params[name]
        for i in range(base.size):
            orig = base.flat[i]
            base.flat[i] = orig + step
            fp = objective(params)
            base.flat[i] = orig - step
            fm = objective(params)
            base.flat[i] = orig
            g.flat[i] = (fp - fm) / (2 * step)
        grads[name] = g
    return grads


def check_head(
    trials: int = 1,
    seed: int = 0,
    config: HeadConfig = HeadConfig(dim=8, heads=2, classes=3, t_len=4),
    focal: FocalConfig = FocalConfig(gamma=2.0),
) -> list[HeadCheck]:
    rng = Rng(seed)
    results = []
    for _ in range(trials):
        params = {k: v * 4.0 for k, v in init_params(config, rng).items()}
        seq = rng.normal_array((config.t_len, config.dim))
        label = rng.randbelow(config.classes)
        logits, cache = head_forward(seq, params, config)
        _, dlogits = focal_loss(logits, label, focal)
        analytic = head_backward(cache, dlogits)
        numeric = fd_head_grads(seq, label, params, config, focal)
        results.append(HeadCheck({n: relative_error(analytic[n], numeric[n]) for n in PARAM_NAMES}))
    return results
