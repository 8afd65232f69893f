"""Content-defined chunking with a Rabin fingerprint over a sliding window.

The fingerprint of the ``window`` bytes ending at position p is the
remainder of their polynomial (over GF(2), one byte = 8 coefficients,
oldest byte highest) modulo an irreducible polynomial.  Because that is
linear in the window bytes, :func:`fingerprints` computes every position at
once as the XOR of per-offset lookup tables.  :func:`rolling_fingerprints`
is the classic byte-at-a-time rolling update and serves as its reference.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np

from .errors import BadParams

# Irreducible over GF(2), degree 53; the polynomial used by restic's chunker tests.
DEFAULT_POLYNOMIAL = 0x3DA3358B4DC173


@dataclass(frozen=True)
class ChunkParams:
    min_size: int = 2 * 1024
    avg_size: int = 8 * 1024
    max_size: int = 64 * 1024
    window: int = 48
    polynomial: int = DEFAULT_POLYNOMIAL

    def validate(self) -> None:
        if self.min_size < 1:
            raise BadParams("min_size must be positive")
        if self.min_size > self.avg_size:
            raise BadParams(f"min_size {self.min_size} > avg_size {self.avg_size}")
        if self.avg_size > self.max_size:
            raise BadParams(f"avg_size {self.avg_size} > max_size {self.max_size}")
        if self.avg_size & (self.avg_size - 1):
            raise BadParams(f"avg_size {self.avg_size} is not a power of two")
        if self.window < 1:
            raise BadParams("window must be positive")
        if degree(self.polynomial) < 9:
            raise BadParams("polynomial degree must exceed 8")

    @property
    def mask(self) -> int:
        return self.avg_size - 1


@dataclass(frozen=True)
class Segment:
    data: bytes
    hash: str

    @classmethod
    def of(cls, data: bytes) -> "Segment":
        return cls(data, block_hash(data))


def block_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# -- GF(2) polynomial arithmetic -------------------------------------------


def degree(p: int) -> int:
    return p.bit_length() - 1


def polymod(a: int, p: int) -> int:
    dp = degree(p)
    while a and degree(a) >= dp:
        a ^= p << (degree(a) - dp)
    return a


def polymulmod(a: int, b: int, p: int) -> int:
    res = 0
    a = polymod(a, p)
    while b:
        if b & 1:
            res ^= a
        b >>= 1
        a = polymod(a << 1, p)
    return res


@lru_cache(maxsize=16)
def _offset_tables(polynomial: int, window: int) -> np.ndarray:
    """tables[i][b] = b * x^(8*(window-1-i)) mod polynomial."""
    tables = np.zeros((window, 256), dtype=np.uint64)
    shift = 1  # x^0
    for i in range(window - 1, -1, -1):
        for b in range(256):
            tables[i, b] = polymulmod(b, shift, polynomial)
        shift = polymulmod(shift, 1 << 8, polynomial)
    return tables


def fingerprints(data: bytes, params: ChunkParams) -> np.ndarray:
    """Window fingerprint ending at every byte position (missing leading bytes count as zero)."""
    n = len(data)
    w = params.window
    tables = _offset_tables(params.polynomial, w)
    padded = np.concatenate([np.zeros(w - 1, dtype=np.uint8), np.frombuffer(data, dtype=np.uint8)])
    fp = np.zeros(n, dtype=np.uint64)
    for i in range(w):
        fp ^= tables[i][padded[i:i + n]]
    return fp


def rolling_fingerprints(data: bytes, params: ChunkParams) -> Iterator[int]:
    p = params.polynomial
    w = params.window
    dp = degree(p)
    low_mask = (1 << dp) - 1
    reduce = [polymulmod(hi, 1 << dp, p) for hi in range(256)]
    out = [polymulmod(b, 1 << (8 * (w - 1)), p) for b in range(256)]
    fp = 0
    for i, byte in enumerate(data):
        if i >= w:
            fp ^= out[data[i - w]]
        fp <<= 8
        fp = (fp & low_mask) ^ reduce[fp >> dp] ^ byte
        yield fp


def boundaries(data: bytes, params: ChunkParams) -> list[int]:
    """End offsets (exclusive) of every segment."""
    params.validate()
    n = len(data)
    if n == 0:
        return [0]
    mask = np.uint64(params.mask)
    fp = fingerprints(data, params)
    candidates = np.flatnonzero((fp & mask) == mask)
    ends = []
    start = 0
    while start < n:
        lo = start + params.min_size - 1
        hi = min(start + params.max_size, n) - 1
        end = hi + 1
        if lo <= hi:
            k = np.searchsorted(candidates, lo)
            if k < len(candidates) and candidates[k] <= hi:
                end = int(candidates[k]) + 1
        ends.append(end)
        start = end
    return ends


def chunk(data: bytes, params: ChunkParams = ChunkParams()) -> list[Segment]:
    ends = boundaries(data, params)
    if ends == [0]:
        return [Segment.of(b"")]
    segs = []
    start = 0
    for end in ends:
        segs.append(Segment.of(data[start:end]))
        start = end
    return segs
