"""SPIHT coding of 32x32 wavelet tiles at a fixed bit budget.

Set partitioning in hierarchical trees over a Mallat-layout CDF 9/7 pyramid,
with the usual three lists (LIP, LIS, LSP) and type A/B set entries.  Output
bits are raw (no arithmetic coding), so the stream length is exactly the
budget unless the coder runs out of bitplanes first.

Stream layout (most significant bit first)::

    int8   top bitplane n_max (two's complement; -128 means all-zero)
    uint8  DC offset added back after the inverse transform
    ...    sorting / refinement bits

The top bitplane can be negative: coefficients are real valued and coding
continues through fractional bitplanes down to ``MIN_BITPLANE``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from oto.codecs.jpeg import pad_to_multiple
from oto.codecs.wavelet import dwt2d, idwt2d

HEADER_BITS = 16
EMPTY = -128
MIN_BITPLANE = -24


class BudgetExhausted(Exception):
    pass


class MalformedStream(ValueError):
    pass


@dataclass(frozen=True)
class SpihtParams:
    ratio: int = 8
    block: int = 32
    wavelet_levels: int = 4

    def __post_init__(self):
        if self.ratio < 1:
            raise ValueError(f"compression ratio must be >= 1, got {self.ratio}")
        if self.block % (2**self.wavelet_levels):
            raise ValueError(f"block {self.block} not divisible by 2**{self.wavelet_levels}")

    @property
    def bit_budget(self) -> int:
        return bit_budget(self.block, self.ratio)


def bit_budget(block: int, ratio: int) -> int:
    """Bits available to one ``block x block`` 8-bit tile at ``ratio``:1."""
    return (block * block * 8) // ratio


@dataclass
class Bitstream:
    bits: np.ndarray  # uint8 array of 0/1 values
    length: int = -1

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.length < 0:
            self.length = len(self.bits)
        if self.length > len(self.bits):
            raise ValueError("length exceeds the stored bits")

    def prefix(self, nbits: int) -> Bitstream:
        n = max(0, min(nbits, self.length))
        return Bitstream(self.bits[:n].copy(), n)

    def to_bytes(self) -> bytes:
        """Packed payload, MSB first, zero-padded to a whole byte."""
        return np.packbits(self.bits[: self.length]).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, length: int) -> Bitstream:
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:length]
        if len(bits) < length:
            raise MalformedStream(f"{len(bits)} bits available, {length} declared")
        return cls(bits, length)


# ---------------------------------------------------------------------------
# spatial orientation trees


@lru_cache(maxsize=None)
def _tree(size: int, levels: int):
    """Offspring lists and a bottom-up node order for a ``size``-square pyramid."""
    root = size >> levels
    offspring: dict[tuple[int, int], tuple[tuple[int, int], ...]] = {}
    for i in range(size):
        for j in range(size):
            if i < root and j < root:
                di, dj = i % 2, j % 2
                if di == 0 and dj == 0 or levels == 0:
                    kids = ()
                else:
                    r, c = i - di + di * root, j - dj + dj * root
                    kids = ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1))
            elif 2 * i < size and 2 * j < size:
                r, c = 2 * i, 2 * j
                kids = ((r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1))
            else:
                kids = ()
            offspring[(i, j)] = kids
    # children always lie at a finer (or the first detail) level, so sorting by
    # a depth key gives a valid bottom-up order
    depth: dict[tuple[int, int], int] = {}

    def node_depth(node):
        if node not in depth:
            kids = offspring[node]
            depth[node] = 0 if not kids else 1 + max(node_depth(k) for k in kids)
        return depth[node]

    order = sorted(offspring, key=node_depth)
    roots = [(i, j) for i in range(root) for j in range(root)]
    return offspring, order, roots


def offspring_of(size: int, levels: int, node: tuple[int, int]) -> tuple[tuple[int, int], ...]:
    return _tree(size, levels)[0][node]


def _set_maxima(mag: np.ndarray, levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Per node: max |c| over all descendants D, and over grand-descendants L."""
    size = mag.shape[0]
    offspring, order, _ = _tree(size, levels)
    max_d = np.zeros_like(mag)
    max_l = np.zeros_like(mag)
    for node in order:
        kids = offspring[node]
        if kids:
            max_d[node] = max(max(mag[k], max_d[k]) for k in kids)
            max_l[node] = max(max_d[k] for k in kids)
    return max_d, max_l


# ---------------------------------------------------------------------------
# shared coding passes


class _Encoder:
    def __init__(self, budget: int):
        self.budget = budget
        self.bits: list[int] = []

    def put(self, bit: int) -> int:
        if len(self.bits) >= self.budget:
            raise BudgetExhausted
        self.bits.append(int(bit))
        return int(bit)


class _Decoder:
    def __init__(self, stream: Bitstream, start: int):
        self.bits = stream.bits
        self.length = stream.length
        self.pos = start

    def put(self, _bit=None) -> int:
        if self.pos >= self.length:
            raise BudgetExhausted
        b = int(self.bits[self.pos])
        self.pos += 1
        return b


@dataclass
class CodingTrace:
    """Significance events ``(bitplane, i, j, sign)`` in coding order."""

    events: list[tuple[int, int, int, int]] = field(default_factory=list)
    passes_completed: int = 0


def _run_passes(io, n_max, size, levels, coeffs=None, recon=None, trace=None):
    """Drive the SPIHT sorting/refinement passes.

    Encoding: ``coeffs`` is given and ``io.put`` records the computed bits.
    Decoding: ``recon`` is filled in and ``io.put`` returns the stored bits;
    the bit argument is ignored, so nothing reads ``coeffs``.
    """
    offspring, _, roots = _tree(size, levels)
    encoding = coeffs is not None
    if encoding:
        mag = np.abs(coeffs)
        max_d, max_l = _set_maxima(mag, levels)
    lip = list(roots)
    lis = [[node, "A"] for node in roots if offspring[node]]
    lsp: list[tuple[int, int]] = []
    n = n_max
    try:
        while n >= MIN_BITPLANE:
            thr = math.ldexp(1.0, n)
            half = math.ldexp(1.0, n - 1)
            n_refine = len(lsp)

            def significant(node):
                sig = io.put(mag[node] >= thr if encoding else 0)
                if not sig:
                    return False
                s = io.put(coeffs[node] < 0 if encoding else 0)
                lsp.append(node)
                if recon is not None:
                    recon[node] = -1.5 * thr if s else 1.5 * thr
                if trace is not None:
                    trace.events.append((n, node[0], node[1], -1 if s else 1))
                return True

            # sorting pass: LIP
            lip = [node for node in lip if not significant(node)]
            # sorting pass: LIS (entries appended during the scan are visited in this pass)
            k = 0
            while k < len(lis):
                entry = lis[k]
                node, kind = entry
                kids = offspring[node]
                if kind == "A":
                    if io.put(max_d[node] >= thr if encoding else 0):
                        for kid in kids:
                            if not significant(kid):
                                lip.append(kid)
                        if any(offspring[kid] for kid in kids):
                            lis.append([node, "B"])
                        entry[1] = None
                else:
                    if io.put(max_l[node] >= thr if encoding else 0):
                        for kid in kids:
                            lis.append([kid, "A"])
                        entry[1] = None
                k += 1
            lis = [e for e in lis if e[1] is not None]
            # refinement pass over coefficients found in earlier passes
            for node in lsp[:n_refine]:
                if encoding:
                    bit = int(math.floor(mag[node] / thr)) & 1
                else:
                    bit = 0
                b = io.put(bit)
                if recon is not None:
                    delta = half if b else -half
                    recon[node] += delta if recon[node] > 0 else -delta
            if trace is not None:
                trace.passes_completed += 1
            n -= 1
    except BudgetExhausted:
        pass


def _top_bitplane(coeffs: np.ndarray) -> int:
    peak = float(np.max(np.abs(coeffs))) if coeffs.size else 0.0
    if peak == 0.0:
        return EMPTY
    n = math.floor(math.log2(peak))
    if n < MIN_BITPLANE:
        return EMPTY
    return min(n, 127)


def _int_bits(value: int, width: int) -> list[int]:
    value &= (1 << width) - 1
    return [(value >> (width - 1 - k)) & 1 for k in range(width)]


def _bits_int(bits, signed: bool) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    if signed and v >= 1 << (len(bits) - 1):
        v -= 1 << len(bits)
    return v


def spiht_encode_block(
    coeffs: np.ndarray,
    bit_budget: int,
    levels: int = 4,
    offset: int = 0,
    trace: CodingTrace | None = None,
) -> Bitstream:
    """Encode a square Mallat pyramid into at most ``bit_budget`` bits (header included)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    size = coeffs.shape[0]
    if coeffs.shape != (size, size):
        raise ValueError(f"expected a square pyramid, got {coeffs.shape}")
    if bit_budget < HEADER_BITS:
        raise ValueError(f"bit budget {bit_budget} below the {HEADER_BITS}-bit header")
    if not 0 <= offset <= 255:
        raise ValueError(f"offset {offset} outside [0, 255]")
    n_max = _top_bitplane(coeffs)
    enc = _Encoder(bit_budget)
    for b in _int_bits(n_max, 8) + _int_bits(offset, 8):
        enc.put(b)
    if n_max != EMPTY:
        _run_passes(enc, n_max, size, levels, coeffs=coeffs, trace=trace)
    return Bitstream(np.array(enc.bits, dtype=np.uint8))


def read_header(stream: Bitstream) -> tuple[int, int]:
    if stream.length < HEADER_BITS:
        raise MalformedStream(f"stream of {stream.length} bits is shorter than the {HEADER_BITS}-bit header")
    n_max = _bits_int(stream.bits[:8], signed=True)
    offset = _bits_int(stream.bits[8:16], signed=False)
    if n_max != EMPTY and n_max < MIN_BITPLANE:
        raise MalformedStream(f"top bitplane {n_max} below the minimum {MIN_BITPLANE}")
    return n_max, offset


def spiht_decode_coefficients(
    stream: Bitstream,
    size: int = 32,
    levels: int = 4,
    trace: CodingTrace | None = None,
) -> tuple[np.ndarray, int]:
    """Reconstruct the pyramid (midpoint rule) and return it with the DC offset."""
    n_max, offset = read_header(stream)
    recon = np.zeros((size, size))
    if n_max != EMPTY:
        _run_passes(_Decoder(stream, HEADER_BITS), n_max, size, levels, recon=recon, trace=trace)
    return recon, offset


def spiht_decode_block(stream: Bitstream, levels: int = 4, size: int = 32) -> np.ndarray:
    """Decode a tile stream back to pixels (offset included, not clamped)."""
    recon, offset = spiht_decode_coefficients(stream, size, levels)
    return idwt2d(recon, levels) + offset


def encode_tile(tile: np.ndarray, bit_budget: int, levels: int = 4) -> Bitstream:
    tile = np.asarray(tile, dtype=np.float64)
    offset = int(np.clip(np.round(tile.mean()), 0, 255))
    return spiht_encode_block(dwt2d(tile - offset, levels), bit_budget, levels, offset)


def spiht_compress_image(image: np.ndarray, params: SpihtParams | int) -> np.ndarray:
    """Code every ``block``-square tile independently and reassemble (8-bit rounded output)."""
    out, _ = spiht_compress_image_with_rate(image, params)
    return out


def spiht_compress_image_with_rate(image: np.ndarray, params: SpihtParams | int) -> tuple[np.ndarray, dict]:
    if not isinstance(params, SpihtParams):
        params = SpihtParams(int(params))
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    b = params.block
    padded = pad_to_multiple(image, b)
    out = np.empty_like(padded)
    used = 0
    tiles = 0
    for r in range(0, padded.shape[0], b):
        for c in range(0, padded.shape[1], b):
            stream = encode_tile(padded[r:r + b, c:c + b], params.bit_budget, params.wavelet_levels)
            out[r:r + b, c:c + b] = spiht_decode_block(stream, params.wavelet_levels, b)
            used += stream.length
            tiles += 1
    out = np.clip(np.round(out), 0, 255)[:h, :w]
    rate = {"tiles": tiles, "bits": used, "budget_bits": tiles * params.bit_budget, "bpp": used / (tiles * b * b)}
    return out, rate
