"""Binary model checkpoints.

Layout, all integers little-endian u32:

    magic  b"ISEG"
    version
    header length, then that many bytes of JSON holding the architecture
    and an "extra" metadata dict
    one record per parameter array, in network order (each conv block's
    kernel then bias, then the two head layers): ndim, each dim, then
    the array as little-endian float64 in C order
    CRC-32 of every preceding byte

Saving the result of a load reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError
from .model import ArchDescriptor, SegNet
from .nn import LayerParams

MAGIC = b"ISEG"
FORMAT_VERSION = 1
_MAX_NDIM = 8


def _expected_shapes(arch: ArchDescriptor) -> list[tuple[int, ...]]:
    """Kernel/bias shapes in file order for the given architecture."""
    shapes: list[tuple[int, ...]] = []
    in_ch = arch.in_channels
    for out_ch in arch.block_channels:
        shapes.append((out_ch, in_ch, 3, 3))
        shapes.append((out_ch,))
        in_ch = out_ch
    hyper = sum(arch.block_channels)
    shapes.append((arch.head_width, hyper, 1, 1))
    shapes.append((arch.head_width,))
    shapes.append((1, arch.head_width, 1, 1))
    shapes.append((1,))
    return shapes


def _net_arrays(net: SegNet) -> list[np.ndarray]:
    arrays: list[np.ndarray] = []
    for params in net.param_list():
        arrays.append(params.kernel)
        arrays.append(params.bias)
    return arrays


def checkpoint_bytes(net: SegNet, extra: dict | None = None) -> bytes:
    """Serialize a net (plus a small JSON metadata dict) to bytes."""
    extra = {} if extra is None else extra
    try:
        header = json.dumps(
            {"arch": net.arch.to_dict(), "extra": extra}, sort_keys=True
        ).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"extra metadata is not JSON-serializable: {exc}")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION),
             struct.pack("<I", len(header)), header]
    for arr in _net_arrays(net):
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8", copy=False).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Cursor:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes for {what} at "
                f"offset {self.pos}, file has {len(self.blob)}"
            )
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def parse_checkpoint(blob: bytes) -> tuple[SegNet, dict]:
    """Inverse of checkpoint_bytes; raises CheckpointError on any damage."""
    if len(blob) < 4:
        raise CheckpointError("truncated checkpoint: missing trailing CRC")
    body, stored = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    actual = zlib.crc32(body) & 0xFFFFFFFF
    if stored != actual:
        raise CheckpointError(
            f"checkpoint CRC mismatch: stored {stored:#010x}, "
            f"computed {actual:#010x}"
        )

    cur = _Cursor(body)
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    version = cur.u32("format version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header_len = cur.u32("header length")
    header_bytes = cur.take(header_len, "header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}")
    if not isinstance(header, dict) or "arch" not in header:
        raise CheckpointError("checkpoint header lacks an architecture entry")
    try:
        arch = ArchDescriptor.from_dict(header["arch"])
    except ConfigError as exc:
        raise CheckpointError(str(exc))
    extra = header.get("extra", {})
    if not isinstance(extra, dict):
        raise CheckpointError("checkpoint extra metadata must be an object")

    arrays: list[np.ndarray] = []
    for shape in _expected_shapes(arch):
        ndim = cur.u32("array rank")
        if ndim > _MAX_NDIM:
            raise CheckpointError(f"array rank {ndim} is not plausible")
        dims = tuple(cur.u32("array dim") for _ in range(ndim))
        if dims != shape:
            raise CheckpointError(
                f"array shape {dims} does not match the architecture's "
                f"expected {shape}"
            )
        count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        raw = cur.take(count * 8, "array data")
        arrays.append(
            np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
        )
    if cur.pos != len(body):
        raise CheckpointError(
            f"{len(body) - cur.pos} unexpected trailing bytes in checkpoint"
        )

    n_blocks = len(arch.block_channels)
    layers = [LayerParams(arrays[2 * i], arrays[2 * i + 1])
              for i in range(n_blocks + 2)]
    net = SegNet(arch=arch, blocks=layers[:n_blocks],
                 head1=layers[n_blocks], head2=layers[n_blocks + 1])
    return net, extra


def save_checkpoint(path, net: SegNet, extra: dict | None = None):
    Path(path).write_bytes(checkpoint_bytes(net, extra))


def load_checkpoint(path) -> tuple[SegNet, dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    return parse_checkpoint(path.read_bytes())
