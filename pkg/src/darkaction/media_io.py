"""Bit-exact frame, tensor and config I/O.

Images are ``(H, W, 3)`` float64 arrays in [0, 1]. Videos are directories of
``frame_000001.ppm`` ... files. Tensors use the little-endian "DSRB" v1 layout:

    magic "DSRB" | version u8 = 1 | dtype u8 (1=f32, 2=f64) | ndim u8 | reserved u8 = 0
    ndim x u32 dims | row-major payload
"""

from __future__ import annotations

import dataclasses
import json
import re
import struct
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """Malformed PPM or tensor bytes."""


class IngestionError(ValueError):
    """A video directory that does not form a valid clip."""


class ConfigError(ValueError):
    """Config that fails to parse or validate."""


# ---------------------------------------------------------------------------
# Images and clips


def validate_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image must have shape (H, W, 3) with H, W >= 1, got {img.shape}")
    if not np.all((img >= 0.0) & (img <= 1.0)):
        raise ValueError("image values must lie in [0, 1]")
    return img


@dataclasses.dataclass
class VideoClip:
    """Ordered frames stacked on the leading axis.

    Frames are usually ``(N, H, W, 3)`` images, but any ``(N, ...)`` per-frame
    payload (e.g. feature vectors) is accepted by the sampling code.
    """

    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim < 1 or self.frames.shape[0] < 1:
            raise ValueError("a clip needs at least one frame")

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])


def _header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # Skip whitespace and comments, then read one token.
    n = len(data)
    while pos < n:
        c = data[pos]
        if c == ord("#"):
            while pos < n and data[pos] not in (10, 13):
                pos += 1
        elif chr(c).isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not chr(data[pos]).isspace() and data[pos] != ord("#"):
        pos += 1
    if start == pos:
        raise FormatError(f"truncated PPM header at byte {start}")
    return data[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode a binary P6 PPM with maxval 255 into an ``(H, W, 3)`` image."""
    if data[:2] != b"P6":
        raise FormatError("bad PPM magic at byte 0 (expected P6)")
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        start = pos
        token, pos = _header_token(data, pos)
        if not token.isdigit():
            raise FormatError(f"non-numeric PPM {name} at byte {start}")
        fields.append((int(token), start))
    (width, w_off), (height, h_off), (maxval, m_off) = fields
    if width < 1:
        raise FormatError(f"PPM width must be >= 1 at byte {w_off}")
    if height < 1:
        raise FormatError(f"PPM height must be >= 1 at byte {h_off}")
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval} at byte {m_off}")
    if pos >= len(data) or not chr(data[pos]).isspace():
        raise FormatError(f"missing whitespace after PPM header at byte {pos}")
    pos += 1
    need = width * height * 3
    body = data[pos : pos + need]
    if len(body) < need:
        raise FormatError(f"truncated PPM payload at byte {pos + len(body)}: need {need} bytes, have {len(body)}")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    return pixels.astype(np.float64) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """[0, 1] floats to bytes, rounding half away from zero."""
    scaled = np.asarray(img, dtype=np.float64) * 255.0
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def encode_ppm(img: np.ndarray) -> bytes:
    img = validate_image(img)
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + quantize(img).tobytes()


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(img))


_FRAME_RE = re.compile(r"^frame_(\d{6})\.ppm$")


def frame_name(index: int) -> str:
    """File name for 1-based frame ``index``."""
    return f"frame_{index:06d}.ppm"


def load_video(directory) -> VideoClip:
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestionError(f"not a directory: {directory}")
    indices = sorted(
        int(m.group(1)) for p in directory.iterdir() if (m := _FRAME_RE.match(p.name))
    )
    if not indices:
        raise IngestionError(f"no frame_NNNNNN.ppm files in {directory}")
    for expected, got in enumerate(indices, start=1):
        if got != expected:
            raise IngestionError(f"missing frame {expected}")
    frames = []
    for i in indices:
        try:
            img = read_ppm(directory / frame_name(i))
        except FormatError as exc:
            raise IngestionError(f"frame {i}: {exc}") from exc
        if frames and img.shape != frames[0].shape:
            raise IngestionError(
                f"frame {i} has dimensions {img.shape[1]}x{img.shape[0]}, "
                f"expected {frames[0].shape[1]}x{frames[0].shape[0]}"
            )
        frames.append(img)
    return VideoClip(np.stack(frames))


def save_video(directory, frames) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(frames, start=1):
        write_ppm(directory / frame_name(i), img)


# ---------------------------------------------------------------------------
# DSRB tensors

TENSOR_MAGIC = b"DSRB"
TENSOR_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DTYPE_CODES = {"f32": 1, "f64": 2}


@dataclasses.dataclass
class TensorFile:
    dtype: str
    dims: tuple[int, ...]
    values: np.ndarray


def encode_tensor(dtype: str, dims, values) -> bytes:
    if dtype not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype {dtype!r}")
    dims = tuple(int(d) for d in dims)
    if len(dims) > 8:
        raise FormatError(f"at most 8 dims supported, got {len(dims)}")
    code = _DTYPE_CODES[dtype]
    arr = np.ascontiguousarray(values, dtype=_DTYPES[code]).reshape(-1)
    if arr.size != int(np.prod(dims, dtype=np.int64)):
        raise FormatError(f"dims {dims} do not match {arr.size} values")
    header = TENSOR_MAGIC + struct.pack("<BBBB", TENSOR_VERSION, code, len(dims), 0)
    return header + struct.pack(f"<{len(dims)}I", *dims) + arr.tobytes()


def decode_tensor(data: bytes) -> TensorFile:
    if len(data) < 8:
        raise FormatError(f"truncated tensor header at byte {len(data)}")
    if data[:4] != TENSOR_MAGIC:
        raise FormatError("bad tensor magic at byte 0")
    version, code, ndim, _reserved = struct.unpack_from("<BBBB", data, 4)
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version} at byte 4")
    if code not in _DTYPES:
        raise FormatError(f"unknown tensor dtype code {code} at byte 5")
    if ndim > 8:
        raise FormatError(f"too many dims ({ndim}) at byte 6")
    end = 8 + 4 * ndim
    if len(data) < end:
        raise FormatError(f"truncated tensor dims at byte {len(data)}")
    dims = struct.unpack_from(f"<{ndim}I", data, 8)
    dt = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) - end != count * dt.itemsize:
        raise FormatError(
            f"tensor payload length mismatch at byte {end}: "
            f"expected {count * dt.itemsize}, got {len(data) - end}"
        )
    values = np.frombuffer(data, dtype=dt, offset=end, count=count).reshape(dims)
    name = "f32" if code == 1 else "f64"
    return TensorFile(name, tuple(dims), values.copy())


def save_tensor(path, values, dtype: str = "f64") -> None:
    values = np.asarray(values)
    Path(path).write_bytes(encode_tensor(dtype, values.shape, values))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes()).values


# ---------------------------------------------------------------------------
# Config

DEFAULT_CONFIG = {
    "t_frames": 64,
    "beta": 0.0,
    "gamma_max": 1.5,
    "alpha": 4.0,
    "w_spa": 10.0,
    "w_col": 5.0,
    "w_tv": 200.0,
    "exposure_e": 0.6,
    "curve_iters": 8,
    "enhance_steps": 200,
    "enhance_lr": 0.01,
    "head_dim": 32,
    "head_heads": 4,
    "head_layers": 1,
    "focal_gamma": 2.0,
    "focal_alpha": 1.0,
    "seed": 0,
    # synthetic length-bias benchmark
    "bias_classes": 2,
    "bias_length_means": [80.0, 120.0],
    "bias_length_stds": [10.0, 10.0],
    "bias_length_min": 33,
    "bias_length_max": 225,
    "bias_signal": 0.0,
    "bias_offset": 1.0,
    "bias_samples_per_class": 200,
    "bias_test_per_class": 100,
    "bias_n_max": 160,
    "bias_head_t_len": 16,
    "bias_epochs": 30,
    "bias_mi_draws": 5000,
    "bias_strategies": ["constant", "length_adjusted", "variable", "delta"],
}

_INT_KEYS = {
    "t_frames", "curve_iters", "enhance_steps", "head_dim", "head_heads", "head_layers",
    "seed", "bias_classes", "bias_length_min", "bias_length_max", "bias_samples_per_class",
    "bias_test_per_class", "bias_n_max", "bias_head_t_len", "bias_epochs", "bias_mi_draws",
}
_LIST_KEYS = {"bias_length_means", "bias_length_stds", "bias_strategies"}


def _check(cond: bool, key: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def validate_config(raw: dict) -> dict:
    unknown = sorted(set(raw) - set(DEFAULT_CONFIG))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = {**DEFAULT_CONFIG, **raw}
    for key, value in cfg.items():
        if key in _LIST_KEYS:
            _check(isinstance(value, list), key, "must be a list")
        elif key in _INT_KEYS:
            _check(isinstance(value, int) and not isinstance(value, bool), key, "must be an integer")
        else:
            _check(isinstance(value, (int, float)) and not isinstance(value, bool), key, "must be a number")
            cfg[key] = float(value)
    _check(cfg["t_frames"] >= 1, "t_frames", "must be >= 1")
    _check(cfg["beta"] >= 0, "beta", "must be >= 0")
    _check(cfg["gamma_max"] >= cfg["beta"], "gamma_max", "must be >= beta")
    _check(cfg["alpha"] >= 1, "alpha", "must be >= 1")
    for key in ("w_spa", "w_col", "w_tv", "focal_gamma", "focal_alpha"):
        _check(cfg[key] >= 0, key, "must be >= 0")
    _check(0 < cfg["exposure_e"] < 1, "exposure_e", "must lie in (0, 1)")
    _check(cfg["curve_iters"] >= 1, "curve_iters", "must be >= 1")
    _check(cfg["enhance_steps"] >= 1, "enhance_steps", "must be >= 1")
    _check(cfg["enhance_lr"] > 0, "enhance_lr", "must be > 0")
    _check(cfg["head_dim"] >= 1, "head_dim", "must be >= 1")
    _check(cfg["head_heads"] >= 1 and cfg["head_dim"] % cfg["head_heads"] == 0,
           "head_heads", "must be >= 1 and divide head_dim")
    _check(cfg["head_layers"] == 1, "head_layers", "only a single layer is supported")
    _check(cfg["seed"] >= 0, "seed", "must be >= 0")
    c = cfg["bias_classes"]
    _check(c >= 2, "bias_classes", "must be >= 2")
    _check(len(cfg["bias_length_means"]) == c, "bias_length_means", f"needs {c} entries")
    _check(len(cfg["bias_length_stds"]) == c, "bias_length_stds", f"needs {c} entries")
    _check(all(s >= 0 for s in cfg["bias_length_stds"]), "bias_length_stds", "must be >= 0")
    _check(1 <= cfg["bias_length_min"] <= cfg["bias_length_max"] <= 1000,
           "bias_length_min", "need 1 <= min <= max <= 1000")
    _check(cfg["bias_signal"] >= 0, "bias_signal", "must be >= 0")
    for key in ("bias_samples_per_class", "bias_test_per_class", "bias_n_max",
                "bias_head_t_len", "bias_epochs"):
        _check(cfg[key] >= 1, key, "must be >= 1")
    _check(set(cfg["bias_strategies"]) <= {"delta", "constant", "length_adjusted", "variable"}
           and len(cfg["bias_strategies"]) >= 1, "bias_strategies", "must list known strategies")
    _check(cfg["bias_mi_draws"] >= 2, "bias_mi_draws", "must be >= 2")
    _check(cfg["t_frames"] % cfg["bias_head_t_len"] == 0, "bias_head_t_len", "must divide t_frames")
    return cfg


def load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return validate_config(raw)
