"""OTO1 weights file.

Layout (all integers little-endian)::

    b"OTO1" | version u8 | config digest 8 bytes | entry count u32
    per entry: name length u16 | name utf-8 | rank u32 | dims u32 * rank | float32 data

Entries are the model parameters in registry order followed by the
BatchNorm running statistics (``<layer>.running_mean`` / ``.running_var``),
which a restored model needs for inference.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from oto.net import OtoModel

MAGIC = b"OTO1"
VERSION = 1


class WeightsError(ValueError):
    pass


def _entries(model: OtoModel) -> list[tuple[str, np.ndarray]]:
    out = [(p.name, p.data) for p in model.parameters()]  # parameters() also assigns full names
    for bn in model.bn_layers():
        layer = bn.gamma.name.removesuffix(".gamma")
        out.append((f"{layer}.running_mean", bn.stats.mean))
        out.append((f"{layer}.running_var", bn.stats.var))
    return out


def encode(model: OtoModel) -> bytes:
    entries = _entries(model)
    parts = [MAGIC, struct.pack("<B", VERSION), model.config.digest(), struct.pack("<I", len(entries))]
    for name, arr in entries:
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_weights(model: OtoModel, path) -> None:
    Path(path).write_bytes(encode(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightsError(f"file truncated while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def decode(data: bytes) -> tuple[bytes, list[tuple[str, np.ndarray]]]:
    """Parse a file into ``(digest, [(name, array), ...])`` without touching any model."""
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise WeightsError(f"bad magic {magic!r}; not an OTO1 weights file")
    (version,) = struct.unpack("<B", r.take(1, "version"))
    if version != VERSION:
        raise WeightsError(f"unsupported weights version {version}")
    digest = r.take(8, "config digest")
    (count,) = struct.unpack("<I", r.take(4, "entry count"))
    entries = []
    for i in range(count):
        (n,) = struct.unpack("<H", r.take(2, f"name length of entry {i}"))
        name = r.take(n, f"name of entry {i}").decode()
        (rank,) = struct.unpack("<I", r.take(4, f"rank of {name!r}"))
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"shape of {name!r}"))
        size = int(np.prod(shape, dtype=np.int64))
        raw = r.take(4 * size, f"data of parameter {name!r}")
        entries.append((name, np.frombuffer(raw, dtype="<f4").reshape(shape)))
    if r.pos != len(data):
        raise WeightsError(f"{len(data) - r.pos} trailing bytes after the last entry")
    return digest, entries


def load_weights(model: OtoModel, path) -> OtoModel:
    """Load into ``model`` in place; the model is untouched if anything fails."""
    digest, entries = decode(Path(path).read_bytes())
    expected = model.config.digest()
    if digest != expected:
        raise WeightsError(
            f"config digest mismatch: file {digest.hex()} vs model {expected.hex()} ({model.config.name})"
        )
    targets = _entries(model)
    names = [n for n, _ in targets]
    got = [n for n, _ in entries]
    if names != got:
        missing = sorted(set(names) - set(got)) or sorted(set(got) - set(names))
        raise WeightsError(f"entry names do not match the model (first difference near {missing[:3]})")
    for (name, dst), (_, src) in zip(targets, entries):
        if dst.shape != src.shape:
            raise WeightsError(f"{name}: shape {src.shape} in file, model expects {dst.shape}")
    for (_, dst), (_, src) in zip(targets, entries):
        dst[...] = src
    return model
