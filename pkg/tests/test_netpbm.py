"""Binary PPM/PGM round-trips and malformed-header rejection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iterseg import netpbm
from iterseg.errors import DataError


@given(h=st.integers(1, 12), w=st.integers(1, 12), seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_ppm_round_trip(tmp_path_factory, h, w, seed):
    path = tmp_path_factory.mktemp("ppm") / "img.ppm"
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    netpbm.write_ppm(path, img)
    np.testing.assert_array_equal(netpbm.read_ppm(path), img)


@given(h=st.integers(1, 12), w=st.integers(1, 12), seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_pgm_round_trip(tmp_path_factory, h, w, seed):
    path = tmp_path_factory.mktemp("pgm") / "img.pgm"
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
    netpbm.write_pgm(path, img)
    np.testing.assert_array_equal(netpbm.read_pgm(path), img)


def test_header_comments_are_skipped(tmp_path):
    body = bytes(range(6))
    raw = b"P5\n# a comment\n3 # widths\n2\n255\n" + body
    path = tmp_path / "c.pgm"
    path.write_bytes(raw)
    img = netpbm.read_pgm(path)
    np.testing.assert_array_equal(img, np.arange(6, dtype=np.uint8).reshape(2, 3))


@pytest.mark.parametrize("raw", [
    b"P5\n2 2\n255",                      # header not terminated
    b"P5\n2 2\n255\n\x00\x00\x00",        # truncated pixels
    b"P5\n2 2\n65535\n" + b"\x00" * 8,    # unsupported maxval
    b"P5\n2 x\n255\n" + b"\x00" * 4,      # non-numeric dimension
    b"P6\n2 2\n255\n" + b"\x00" * 4,      # wrong magic for pgm
    b"P5\n0 2\n255\n",                    # zero dimension
])
def test_malformed_pgm_rejected(tmp_path, raw):
    path = tmp_path / "bad.pgm"
    path.write_bytes(raw)
    with pytest.raises(DataError):
        netpbm.read_pgm(path)


def test_write_validates_dtype_and_shape(tmp_path):
    with pytest.raises(DataError):
        netpbm.write_ppm(tmp_path / "x.ppm", np.zeros((4, 4, 3), dtype=np.int32))
    with pytest.raises(DataError):
        netpbm.write_ppm(tmp_path / "x.ppm", np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(DataError):
        netpbm.write_pgm(tmp_path / "x.pgm", np.zeros((4, 4, 3), dtype=np.uint8))


def test_trailing_bytes_are_ignored(tmp_path):
    # Writers never produce them, but readers take the declared extent.
    path = tmp_path / "t.pgm"
    for raw in (b"P5\n2 1\n255\nab", b"P5\n2 1\n255\nabEXTRA"):
        path.write_bytes(raw)
        np.testing.assert_array_equal(netpbm.read_pgm(path),
                                      np.array([[97, 98]], dtype=np.uint8))
