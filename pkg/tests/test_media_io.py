import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from darkaction import media_io
from darkaction.media_io import (
    ConfigError, FormatError, IngestionError, decode_ppm, decode_tensor, encode_ppm, encode_tensor,
    load_config, load_video, save_video, validate_config,
)


def ppm(w, h, body: bytes, maxval=255) -> bytes:
    return f"P6\n{w} {h}\n{maxval}\n".encode() + body


def test_decode_saturated_pixel():
    np.testing.assert_array_equal(decode_ppm(ppm(1, 1, bytes([255, 0, 0]))), [[[1.0, 0.0, 0.0]]])


def test_decode_black():
    assert not decode_ppm(ppm(1, 1, bytes(3))).any()


def test_decode_two_pixels():
    img = decode_ppm(ppm(2, 1, bytes([128, 128, 128, 64, 0, 255])))
    assert img.shape == (1, 2, 3)
    np.testing.assert_array_equal(img.ravel(), [128 / 255] * 3 + [64 / 255, 0.0, 1.0])


def test_header_comments_are_skipped():
    data = b"P6\n# made by hand\n1 1\n255\n" + bytes([1, 2, 3])
    np.testing.assert_array_equal(decode_ppm(data).ravel() * 255, [1, 2, 3])


@pytest.mark.parametrize("data", [
    b"P5\n1 1\n255\n\x00",
    ppm(2, 2, bytes(3)),
    ppm(1, 1, bytes(3), maxval=65535),
    b"P6\n1",
    ppm(0, 1, b""),
])
def test_malformed_ppm_rejected(data):
    with pytest.raises(FormatError):
        decode_ppm(data)


def test_encode_black_body():
    assert encode_ppm(np.zeros((1, 1, 3))).endswith(bytes(3))


def test_half_rounds_up():
    assert encode_ppm(np.full((1, 1, 3), 0.5))[-3:] == bytes([128] * 3)


@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_ppm_round_trip(w, h, data):
    body = data.draw(st.binary(min_size=w * h * 3, max_size=w * h * 3))
    raw = ppm(w, h, body)
    again = encode_ppm(decode_ppm(raw))
    assert again[-len(body):] == body
    np.testing.assert_array_equal(decode_ppm(again), decode_ppm(raw))


@given(st.binary(max_size=64))
@settings(max_examples=200)
def test_fuzzed_ppm_never_out_of_range(blob):
    try:
        img = decode_ppm(b"P6\n2 2\n255\n" + blob)
    except FormatError:
        return
    assert img.min() >= 0 and img.max() <= 1


def test_tensor_layout():
    raw = encode_tensor("f64", [2], [1.0, 2.0])
    assert len(raw) == 8 + 4 + 16
    assert raw[:8] == b"DSRB\x01\x02\x01\x00"
    assert raw[8:12] == (2).to_bytes(4, "little")


def test_tensor_empty_payload():
    raw = encode_tensor("f32", [0, 3], [])
    assert len(raw) == 8 + 8
    assert decode_tensor(raw).values.shape == (0, 3)


@given(st.lists(st.integers(0, 4), min_size=0, max_size=3), st.sampled_from(["f32", "f64"]), st.integers(0, 2**32))
def test_tensor_round_trip(dims, dtype, seed):
    vals = np.random.default_rng(seed).normal(size=dims).astype(np.float32 if dtype == "f32" else np.float64)
    tf = decode_tensor(encode_tensor(dtype, dims, vals))
    assert tf.dtype == dtype and list(tf.dims) == dims
    assert tf.values.tobytes() == vals.tobytes()


@pytest.mark.parametrize("raw", [b"XXXX\x01\x02\x01\x00" + bytes(12), b"DSRB\x01\x07\x01\x00" + bytes(12),
                                 encode_tensor("f64", [2], [1.0, 2.0])[:-1]])
def test_tensor_format_errors(raw):
    with pytest.raises(FormatError):
        decode_tensor(raw)


def test_load_video(tmp_path):
    save_video(tmp_path, [np.full((2, 3, 3), i / 4) for i in range(3)])
    clip = load_video(tmp_path)
    assert clip.n_frames == 3
    assert clip.frames[2, 0, 0, 0] == pytest.approx(0.5, abs=1 / 255)


def test_load_video_gap(tmp_path):
    save_video(tmp_path, [np.zeros((2, 2, 3))] * 4)
    (tmp_path / media_io.frame_name(3)).unlink()
    with pytest.raises(IngestionError, match="missing frame 3"):
        load_video(tmp_path)


def test_load_video_mixed_dims(tmp_path):
    save_video(tmp_path, [np.zeros((2, 2, 3))] * 2)
    media_io.write_ppm(tmp_path / media_io.frame_name(3), np.zeros((3, 2, 3)))
    with pytest.raises(IngestionError, match="frame 3"):
        load_video(tmp_path)


def test_load_video_minimum_length(tmp_path):
    save_video(tmp_path, [np.zeros((1, 1, 3))] * 33)
    assert load_video(tmp_path).n_frames == 33


def test_default_config():
    cfg = validate_config({})
    assert (cfg["t_frames"], cfg["beta"], cfg["gamma_max"], cfg["alpha"]) == (64, 0.0, 1.5, 4.0)
    assert (cfg["w_spa"], cfg["w_col"], cfg["w_tv"], cfg["exposure_e"]) == (10.0, 5.0, 200.0, 0.6)


def test_config_alpha():
    assert validate_config({"alpha": 4})["alpha"] == 4.0


@pytest.mark.parametrize("raw,key", [({"t_frames": 0}, "t_frames"), ({"nope": 1}, "nope"),
                                     ({"alpha": 0.5}, "alpha"), ({"t_frames": 1.5}, "t_frames")])
def test_config_errors_name_the_key(raw, key):
    with pytest.raises(ConfigError, match=key):
        validate_config(raw)


def test_config_parse_error_position(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "alpha": ,\n}')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)


def test_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"beta": 0.5}))
    assert load_config(p)["beta"] == 0.5
