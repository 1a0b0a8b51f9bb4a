"""Binary checkpoints of a training run.

Layout (all integers little-endian)::

    b"BIOG"  u32 version
    u8 len + ascii algo tag
    u32 n_sizes, u32 * n_sizes        forward layer sizes
    u64 seed, u32 epoch, f64 reference loss (NaN if unset)
    u32 n_matrices, then per matrix:
        u32 rows, u32 cols, u64 n, f64 * n   (row-major)

Matrices are stored as forward weights and biases interleaved, followed by
the feedback channel's matrices (interleaved with biases for BFA).
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..network import BackwardNet, ForwardNet
from ..rules import Algo, Channel, DirectFeedback, FixedChain, Transpose

MAGIC = b"BIOG"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class TrainState:
    algo: Algo
    net: ForwardNet
    channel: Channel
    seed: int
    epoch: int
    ref_loss: float = math.nan


def _interleave(weights, biases):
    out = []
    for w, b in zip(weights, biases):
        out += [w, b]
    return out


def _channel_mats(channel: Channel) -> list[np.ndarray]:
    if isinstance(channel, Transpose):
        return []
    if isinstance(channel, BackwardNet):
        return _interleave(channel.weights, channel.biases)
    return list(channel.mats)


def dumps(state: TrainState) -> bytes:
    buf = io.BytesIO()
    tag = Algo(state.algo).value.encode("ascii")
    sizes = state.net.sizes
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<B", len(tag)) + tag)
    buf.write(struct.pack("<I", len(sizes)) + struct.pack(f"<{len(sizes)}I", *sizes))
    buf.write(struct.pack("<QId", state.seed, state.epoch, state.ref_loss))
    mats = _interleave(state.net.weights, state.net.biases) + _channel_mats(state.channel)
    buf.write(struct.pack("<I", len(mats)))
    for m in mats:
        rows, cols = m.shape
        buf.write(struct.pack("<IIQ", rows, cols, m.size))
        buf.write(np.ascontiguousarray(m, dtype="<f8").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> TrainState:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagicError("not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    (tag_len,) = r.unpack("<B")
    try:
        algo = Algo(r.take(tag_len).decode("ascii"))
    except ValueError as exc:
        raise CheckpointError(f"unknown algorithm tag: {exc}") from None
    (n_sizes,) = r.unpack("<I")
    sizes = list(r.unpack(f"<{n_sizes}I"))
    seed, epoch, ref_loss = r.unpack("<QId")
    (n_mats,) = r.unpack("<I")
    mats = []
    for _ in range(n_mats):
        rows, cols, n = r.unpack("<IIQ")
        if n != rows * cols:
            raise CheckpointError(f"matrix length {n} does not match shape {rows}x{cols}")
        mats.append(np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(rows, cols))
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint payload")

    n_fwd = 2 * (len(sizes) - 1)
    if len(mats) < n_fwd:
        raise TruncatedCheckpointError("checkpoint is missing forward parameters")
    net = ForwardNet(mats[0:n_fwd:2], mats[1:n_fwd:2])
    if net.sizes != sizes:
        raise CheckpointError(f"stored sizes {sizes} disagree with matrices {net.sizes}")
    rest = mats[n_fwd:]
    if algo is Algo.BP:
        channel: Channel = Transpose()
    elif algo is Algo.BFA:
        channel = BackwardNet(rest[0::2], rest[1::2])
        channel.check_mirrors(net)
    elif algo is Algo.FA:
        channel = FixedChain(rest)
    else:
        channel = DirectFeedback(rest, trainable=algo is Algo.BDFA)
    expected = len(_channel_mats(channel))
    if expected != len(rest) or (algo is not Algo.BFA and algo is not Algo.BP and len(rest) != net.n_hidden):
        raise CheckpointError(f"{algo.label} checkpoint has {len(rest)} feedback matrices")
    return TrainState(algo, net, channel, seed, epoch, ref_loss)


def save_checkpoint(state: TrainState, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(state))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> TrainState:
    return loads(Path(path).read_bytes())
