import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tuni.errors import PNMError
from tuni.pnm import decode, encode, read_pnm, write_pnm


def test_rgb_header_bytes_exact(rng):
    buf = encode(rng.random((64, 64, 3)))
    assert buf.startswith(b"P6\n64 64\n255\n")
    assert len(buf) == len(b"P6\n64 64\n255\n") + 64 * 64 * 3


def test_gray_single_pixel():
    buf = b"P5\n1 1\n255\n\xff"
    img = decode(buf)
    assert img.shape == (1, 1) and img[0, 0] == 1.0
    assert encode(img) == buf


@pytest.mark.parametrize("shape", [(5, 7), (5, 7, 1), (6, 3, 3)])
def test_round_trip_error_bound(shape, rng, tmp_path):
    img = rng.random(shape)
    path = tmp_path / "x.pnm"
    write_pnm(path, img)
    back = read_pnm(path)
    assert np.abs(back - img.reshape(back.shape)).max() <= 1 / 510 + 1e-7


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), c=st.sampled_from([1, 3]), seed=st.integers(0, 2**31))
def test_round_trip_property(h, w, c, seed):
    img = np.random.default_rng(seed).random((h, w, c))
    back = decode(encode(img))
    assert np.abs(back - img.reshape(back.shape)).max() <= 1 / 510 + 1e-7


def test_uint8_is_written_raw_and_read_raw(rng):
    lab = rng.integers(0, 256, (4, 6)).astype(np.uint8)
    assert np.array_equal(decode(encode(lab), raw=True), lab)


def test_rounding_at_half_step():
    # 0.5 / 255 sits exactly on a rounding boundary and goes up
    assert decode(encode(np.array([[0.5 / 255, 0.0, 2.0]])), raw=True).tolist() == [[1, 0, 255]]


def test_comments_and_whitespace_in_header():
    buf = b"P5 # gray\n# size next\n2\t1\n255\n\x00\x80"
    assert decode(buf, raw=True).tolist() == [[0, 128]]


@pytest.mark.parametrize("buf,offset", [
    (b"P", 0),
    (b"P3\n1 1\n255\n\x00", 0),
    (b"P5\n1 x\n255\n\x00", 5),
    (b"P5\n1 1\n65535\n\x00\x00", 12),
    (b"P5\n2 2\n255\n\x00", 12),
    (b"P5\n1 1\n255", 10),
    (b"P5\n0 1\n255\n", 2),
])
def test_malformed_inputs_report_offset(buf, offset):
    with pytest.raises(PNMError) as ei:
        decode(buf)
    assert ei.value.offset == offset
    assert f"byte offset {offset}" in str(ei.value)


def test_unencodable_shape():
    with pytest.raises(ValueError):
        encode(np.zeros((2, 2, 2)))
