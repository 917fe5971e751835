"""Checkpoint serialization: byte-exact round trips and damage detection."""

import json
import struct

import numpy as np
import pytest

from iterseg import checkpoint
from iterseg.checkpoint import (checkpoint_bytes, load_checkpoint,
                                parse_checkpoint, save_checkpoint)
from iterseg.errors import CheckpointError
from iterseg.model import ArchDescriptor, init_params


def test_round_trip_is_byte_identical(tiny_net):
    blob = checkpoint_bytes(tiny_net, extra={"stage": 3, "note": "x"})
    net, extra = parse_checkpoint(blob)
    assert extra == {"stage": 3, "note": "x"}
    assert checkpoint_bytes(net, extra) == blob
    for a, b in zip(tiny_net.param_list(), net.param_list()):
        np.testing.assert_array_equal(a.kernel, b.kernel)
        np.testing.assert_array_equal(a.bias, b.bias)


def test_file_round_trip(tiny_net, tmp_path):
    path = tmp_path / "model.iseg"
    save_checkpoint(path, tiny_net, extra={"k": [1, 2]})
    net, extra = parse_checkpoint(path.read_bytes())
    assert extra == {"k": [1, 2]}
    save_checkpoint(tmp_path / "again.iseg", net, extra)
    assert (tmp_path / "again.iseg").read_bytes() == path.read_bytes()


def test_arch_travels_with_weights(tiny_net, tiny_arch):
    net, _ = parse_checkpoint(checkpoint_bytes(tiny_net))
    assert net.arch == tiny_arch


def test_missing_file_is_checkpoint_error(tmp_path):
    with pytest.raises(CheckpointError, match="does not exist"):
        load_checkpoint(tmp_path / "nope.iseg")


def _recrc(body: bytes) -> bytes:
    import zlib
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def test_crc_catches_bit_flip(tiny_net):
    blob = bytearray(checkpoint_bytes(tiny_net))
    blob[len(blob) // 2] ^= 0x01
    with pytest.raises(CheckpointError, match="CRC"):
        parse_checkpoint(bytes(blob))


def test_bad_magic(tiny_net):
    body = bytearray(checkpoint_bytes(tiny_net)[:-4])
    body[:4] = b"JUNK"
    with pytest.raises(CheckpointError, match="magic"):
        parse_checkpoint(_recrc(bytes(body)))


def test_unsupported_version(tiny_net):
    body = bytearray(checkpoint_bytes(tiny_net)[:-4])
    body[4:8] = struct.pack("<I", 99)
    with pytest.raises(CheckpointError, match="version 99"):
        parse_checkpoint(_recrc(bytes(body)))


def test_truncation_anywhere_is_detected(tiny_net):
    blob = checkpoint_bytes(tiny_net)
    # every prefix must fail: short ones lack the CRC, longer ones have a
    # CRC that no longer matches or run out of bytes mid-record
    for cut in [0, 3, 8, 20, len(blob) // 2, len(blob) - 5, len(blob) - 1]:
        with pytest.raises(CheckpointError):
            parse_checkpoint(blob[:cut])


def test_trailing_garbage_is_detected(tiny_net):
    blob = checkpoint_bytes(tiny_net)
    with pytest.raises(CheckpointError):
        parse_checkpoint(blob + b"\x00")
    body = checkpoint_bytes(tiny_net)[:-4] + b"\x00" * 8
    with pytest.raises(CheckpointError, match="trailing"):
        parse_checkpoint(_recrc(body))


def test_implausible_rank_rejected(tiny_net):
    blob = checkpoint_bytes(tiny_net)
    header_len = struct.unpack("<I", blob[8:12])[0]
    first_rec = 12 + header_len
    body = bytearray(blob[:-4])
    body[first_rec:first_rec + 4] = struct.pack("<I", 40)
    with pytest.raises(CheckpointError, match="rank"):
        parse_checkpoint(_recrc(bytes(body)))


def test_shape_mismatch_with_arch_rejected(tiny_net):
    blob = checkpoint_bytes(tiny_net)
    header_len = struct.unpack("<I", blob[8:12])[0]
    dim0_at = 12 + header_len + 4
    body = bytearray(blob[:-4])
    old = struct.unpack("<I", body[dim0_at:dim0_at + 4])[0]
    body[dim0_at:dim0_at + 4] = struct.pack("<I", old + 1)
    with pytest.raises(CheckpointError, match="does not match"):
        parse_checkpoint(_recrc(bytes(body)))


def _header_swapped(blob: bytes, new_header: bytes) -> bytes:
    header_len = struct.unpack("<I", blob[8:12])[0]
    body = (blob[:8] + struct.pack("<I", len(new_header)) + new_header
            + blob[12 + header_len:-4])
    return _recrc(body)


def test_corrupt_header_json(tiny_net):
    blob = checkpoint_bytes(tiny_net)
    with pytest.raises(CheckpointError, match="header"):
        parse_checkpoint(_header_swapped(blob, b"{not json"))


def test_header_must_carry_arch(tiny_net):
    blob = checkpoint_bytes(tiny_net)
    with pytest.raises(CheckpointError, match="architecture"):
        parse_checkpoint(_header_swapped(blob, b'{"extra": {}}'))


def test_header_arch_is_validated(tiny_net):
    blob = checkpoint_bytes(tiny_net)
    arch = json.loads(blob[12:12 + struct.unpack("<I", blob[8:12])[0]])["arch"]
    arch["patch_size"] = 17    # not a power of two
    bad = json.dumps({"arch": arch, "extra": {}}, sort_keys=True).encode()
    with pytest.raises(CheckpointError):
        parse_checkpoint(_header_swapped(blob, bad))


def test_extra_must_be_object(tiny_net):
    blob = checkpoint_bytes(tiny_net)
    arch = json.loads(blob[12:12 + struct.unpack("<I", blob[8:12])[0]])["arch"]
    bad = json.dumps({"arch": arch, "extra": [1]}, sort_keys=True).encode()
    with pytest.raises(CheckpointError, match="extra"):
        parse_checkpoint(_header_swapped(blob, bad))


def test_unserializable_extra_rejected(tiny_net):
    with pytest.raises(CheckpointError, match="JSON"):
        checkpoint_bytes(tiny_net, extra={"arr": np.zeros(3)})


def test_default_arch_round_trip():
    net = init_params(ArchDescriptor(), seed=3)
    blob = checkpoint_bytes(net)
    again, extra = parse_checkpoint(blob)
    assert extra == {}
    assert checkpoint_bytes(again) == blob


def test_weight_order_is_stable(tiny_net):
    """Records appear as each block's kernel then bias, then the two heads."""
    blob = checkpoint_bytes(tiny_net)
    header_len = struct.unpack("<I", blob[8:12])[0]
    pos = 12 + header_len
    seen = []
    while pos < len(blob) - 4:
        ndim = struct.unpack("<I", blob[pos:pos + 4])[0]
        pos += 4
        dims = struct.unpack(f"<{ndim}I", blob[pos:pos + 4 * ndim])
        pos += 4 * ndim + 8 * int(np.prod(dims, dtype=np.int64))
        seen.append(dims)
    want = checkpoint._expected_shapes(tiny_net.arch)
    assert seen == [tuple(s) for s in want]
