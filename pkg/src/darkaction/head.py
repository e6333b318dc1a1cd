"""Single-layer BERT-style temporal classifier with a hand-written backward pass.

Forward pass for a ``(T', D)`` feature sequence::

    x0  = [cls; seq] + pos                      (T'+1, D)
    att = MultiHead(x0) W_o^T                   scaled dot-product, h heads
    x1  = x0 + att
    x2  = x1 + W2 gelu(W1 x1 + b1) + b2         position-wise feed-forward
    logits = W_c layernorm(x2[cls]) + b_c

The layer norm has no learned affine terms. Blank (padding) positions are
ordinary tokens; nothing is masked.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.special import erf

from .rng import Rng

LN_EPS = 1e-5
PARAM_NAMES = ("pos_embed", "cls_token", "w_q", "w_k", "w_v", "w_o", "w1", "b1", "w2", "b2", "w_c", "b_c")


@dataclasses.dataclass(frozen=True)
class HeadConfig:
    dim: int = 32
    heads: int = 4
    classes: int = 2
    t_len: int = 8
    pffn_inner: int | None = None

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.t_len < 1:
            raise ValueError("t_len must be >= 1")

    @property
    def inner(self) -> int:
        return self.pffn_inner or 4 * self.dim

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, i, c = self.dim, self.inner, self.classes
        return {
            "pos_embed": (self.t_len + 1, d),
            "cls_token": (d,),
            "w_q": (d, d),
            "w_k": (d, d),
            "w_v": (d, d),
            "w_o": (d, d),
            "w1": (i, d),
            "b1": (i,),
            "w2": (d, i),
            "b2": (d,),
            "w_c": (c, d),
            "b_c": (c,),
        }


@dataclasses.dataclass(frozen=True)
class FocalConfig:
    gamma: float = 2.0
    alpha: tuple[float, ...] | None = None

    def alpha_for(self, classes: int) -> np.ndarray:
        if self.alpha is None:
            return np.ones(classes)
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if alpha.shape != (classes,) or np.any(alpha < 0):
            raise ValueError(f"alpha needs {classes} nonnegative entries")
        return alpha


@dataclasses.dataclass
class FeatureSequence:
    values: np.ndarray
    blank_mask: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError(f"feature sequence must be (T', D) with T' >= 1, got {self.values.shape}")
        if self.blank_mask is None:
            self.blank_mask = np.zeros(self.values.shape[0], dtype=bool)

    @property
    def t_len(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def init_params(config: HeadConfig, rng: Rng) -> dict[str, np.ndarray]:
    bound = 1.0 / math.sqrt(config.dim)
    return {name: rng.uniform_array(shape, -bound, bound) for name, shape in config.shapes().items()}


# ---------------------------------------------------------------------------
# Per-frame features


def _edges(n: int, parts: int) -> list[int]:
    return [(i * n) // parts for i in range(parts + 1)]


def frame_descriptor(img: np.ndarray, grid: int = 4, prev: np.ndarray | None = None) -> np.ndarray:
    """Channel means over a ``grid x grid`` partition, flattened (grid, grid, 3).

    With ``prev`` the luminance means of ``img - prev`` over the same cells are
    appended, giving ``grid*grid*4`` entries instead of ``grid*grid*3``.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w, _ = img.shape
    if grid > min(h, w):
        raise ValueError(f"grid {grid} is finer than the {w}x{h} image")
    re, ce = _edges(h, grid), _edges(w, grid)
    sums = np.add.reduceat(np.add.reduceat(img, re[:-1], axis=0), ce[:-1], axis=1)
    counts = np.outer(np.diff(re), np.diff(ce))[..., None]
    out = (sums / counts).reshape(-1)
    if prev is not None:
        diff = (img - np.asarray(prev, dtype=np.float64)).mean(axis=-1)
        dsum = np.add.reduceat(np.add.reduceat(diff, re[:-1], axis=0), ce[:-1], axis=1)
        out = np.concatenate([out, (dsum / counts[..., 0]).reshape(-1)])
    return out


def featurize_frames(frames: np.ndarray, grid: int = 4) -> np.ndarray:
    return np.stack([frame_descriptor(f, grid) for f in frames])


def temporal_pool(values: np.ndarray, blank_mask: np.ndarray, t_len: int) -> FeatureSequence:
    """Average consecutive slots down to ``t_len`` positions (backbone stride stand-in)."""
    t = values.shape[0]
    if t % t_len:
        raise ValueError(f"{t} slots cannot be pooled evenly to {t_len}")
    k = t // t_len
    pooled = values.reshape(t_len, k, -1).mean(axis=1)
    mask = np.asarray(blank_mask, dtype=bool).reshape(t_len, k).all(axis=1)
    return FeatureSequence(pooled, mask)


def normalize_time(seq: FeatureSequence, eps: float = 1e-6) -> FeatureSequence:
    """Z-score every feature channel across time."""
    if seq.t_len < 2:
        return FeatureSequence(seq.values.copy(), seq.blank_mask.copy())
    mean = seq.values.mean(axis=0)
    std = seq.values.std(axis=0)
    return FeatureSequence((seq.values - mean) / (std + eps), seq.blank_mask.copy())


# ---------------------------------------------------------------------------
# Building blocks


def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 * (1.0 + erf(x / math.sqrt(2.0)))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def focal_loss(logits: np.ndarray, label: int, focal: FocalConfig = FocalConfig()) -> tuple[float, np.ndarray]:
    """Focal loss ``-alpha_t (1 - p_t)^gamma log p_t`` and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    c = logits.shape[0]
    if not 0 <= label < c:
        raise ValueError(f"label {label} outside [0, {c})")
    alpha = focal.alpha_for(c)[label]
    g = focal.gamma
    p = softmax(logits)
    pt = p[label]
    log_pt = math.log(max(pt, 1e-12))
    q = 1.0 - pt
    loss = -alpha * q**g * log_pt
    # d loss / d p_t; the gamma term vanishes at q = 0 in the limit even for gamma < 1.
    focusing = g * q ** (g - 1) * log_pt if (g != 0 and q > 0) else 0.0
    dpt = alpha * (focusing - q**g / max(pt, 1e-12))
    onehot = np.zeros(c)
    onehot[label] = 1.0
    return float(loss), dpt * pt * (onehot - p)


# ---------------------------------------------------------------------------
# Forward / backward


def head_forward(seq: FeatureSequence | np.ndarray, params: dict, config: HeadConfig):
    """Return ``(logits, cache)`` for a single sequence."""
    x = seq.values if isinstance(seq, FeatureSequence) else np.asarray(seq, dtype=np.float64)
    if x.shape != (config.t_len, config.dim):
        raise ValueError(f"sequence shape {x.shape} does not match head ({config.t_len}, {config.dim})")
    h, d = config.heads, config.dim
    dh = d // h
    n_tok = config.t_len + 1
    x0 = np.vstack([params["cls_token"][None, :], x]) + params["pos_embed"]

    def split(m):
        return m.reshape(n_tok, h, dh).transpose(1, 0, 2)

    q = split(x0 @ params["w_q"].T)
    k = split(x0 @ params["w_k"].T)
    v = split(x0 @ params["w_v"].T)
    scale = 1.0 / math.sqrt(dh)
    attn = softmax(q @ k.transpose(0, 2, 1) * scale, axis=-1)
    o = (attn @ v).transpose(1, 0, 2).reshape(n_tok, d)
    x1 = x0 + o @ params["w_o"].T
    u = x1 @ params["w1"].T + params["b1"]
    g = gelu(u)
    x2 = x1 + g @ params["w2"].T + params["b2"]
    c = x2[0]
    mu = c.mean()
    sigma = math.sqrt(((c - mu) ** 2).mean() + LN_EPS)
    z = (c - mu) / sigma
    logits = params["w_c"] @ z + params["b_c"]
    cache = dict(x0=x0, q=q, k=k, v=v, attn=attn, o=o, x1=x1, u=u, g=g, z=z, sigma=sigma,
                 scale=scale, params=params, config=config)
    return logits, cache


def head_backward(cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    p = cache["params"]
    cfg = cache["config"]
    h, d = cfg.heads, cfg.dim
    dh = d // h
    n_tok = cfg.t_len + 1
    z, sigma = cache["z"], cache["sigma"]
    grads = {}
    grads["w_c"] = np.outer(dlogits, z)
    grads["b_c"] = np.array(dlogits, dtype=np.float64)
    dz = p["w_c"].T @ dlogits
    dc = (dz - dz.mean() - z * (dz * z).mean()) / sigma
    # Only the cls row reaches the classifier.
    x1_cls, u_cls, g_cls = cache["x1"][0], cache["u"][0], cache["g"][0]
    grads["w2"] = np.outer(dc, g_cls)
    grads["b2"] = dc.copy()
    du = (p["w2"].T @ dc) * gelu_grad(u_cls)
    grads["w1"] = np.outer(du, x1_cls)
    grads["b1"] = du
    dx1 = np.zeros((n_tok, d))
    dx1[0] = dc + p["w1"].T @ du
    # attention block
    grads["w_o"] = dx1.T @ cache["o"]
    do = (dx1 @ p["w_o"]).reshape(n_tok, h, dh).transpose(1, 0, 2)
    attn, q, k, v = cache["attn"], cache["q"], cache["k"], cache["v"]
    dattn = do @ v.transpose(0, 2, 1)
    dv = attn.transpose(0, 2, 1) @ do
    ds = attn * (dattn - np.sum(dattn * attn, axis=-1, keepdims=True)) * cache["scale"]
    dq = ds @ k
    dk = ds.transpose(0, 2, 1) @ q

    def merge(m):
        return m.transpose(1, 0, 2).reshape(n_tok, d)

    dq, dk, dv = merge(dq), merge(dk), merge(dv)
    x0 = cache["x0"]
    grads["w_q"] = dq.T @ x0
    grads["w_k"] = dk.T @ x0
    grads["w_v"] = dv.T @ x0
    dx0 = dx1 + dq @ p["w_q"] + dk @ p["w_k"] + dv @ p["w_v"]
    grads["pos_embed"] = dx0
    grads["cls_token"] = dx0[0].copy()
    return {name: grads[name] for name in PARAM_NAMES}


def predict_proba(seq: FeatureSequence, params: dict, config: HeadConfig) -> np.ndarray:
    return softmax(head_forward(seq, params, config)[0])
