"""Counter-based random numbers.

Every sample is a pure function of ``(seed, stream, frame, index, draw)``,
computed with Philox4x32-10.  Nothing is carried between calls, so a field
can be generated in any order, in pieces, or across threads and the bits
come out the same.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import runtime

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# Fixed chunk boundaries: thread count changes who computes a chunk, never
# how elements are grouped into vectorised calls.
CHUNK = 1 << 16


def philox4x32(counter, key, rounds: int = 10):
    """Philox4x32 block function, vectorised over the counter words.

    ``counter`` is a sequence of four uint32 arrays (or ints) and ``key`` a
    pair of ints.  Returns four uint32 arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for _ in range(rounds):
        p0 = c0 * _M0
        p1 = c2 * _M1
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = (
            hi1 ^ c1 ^ np.uint64(k0),
            lo1,
            hi0 ^ c3 ^ np.uint64(k1),
            lo0,
        )
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return tuple(c.astype(np.uint32) for c in (c0, c1, c2, c3))


def _split64(value: int) -> tuple[int, int]:
    value = int(value) & 0xFFFFFFFFFFFFFFFF
    return value & 0xFFFFFFFF, value >> 32


def _unit_double(hi, lo):
    # 53-bit mantissa, offset by half an ulp so the result is in (0, 1).
    a = (hi >> np.uint32(5)).astype(np.float64)
    b = (lo >> np.uint32(6)).astype(np.float64)
    return (a * 67108864.0 + b + 0.5) / 9007199254740992.0


@dataclass(frozen=True)
class Rng:
    """A (seed, stream) pair naming an infinite table of random numbers."""

    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not 0 <= int(v) < 2**64:
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {v}")

    @property
    def key(self) -> tuple[int, int]:
        s_lo, s_hi = _split64(self.stream)
        k_lo, k_hi = _split64(self.seed)
        out = philox4x32((s_lo, s_hi, 0x5EED, 0x57AE), (k_lo, k_hi))
        return int(out[0]), int(out[1])

    def child(self, stream: int) -> "Rng":
        """Same seed, different stream."""
        return Rng(self.seed, stream)

    def _blocks(self, frame: int, start: int, stop: int, draw: int):
        idx = np.arange(start, stop, dtype=np.uint64)
        lo = idx & _MASK32
        hi = idx >> _SHIFT32
        f = np.uint64(int(frame) & 0xFFFFFFFF)
        d = np.uint64(int(draw) & 0xFFFFFFFF)
        return philox4x32((lo, hi, np.full_like(idx, f), np.full_like(idx, d)), self.key)

    def _normal_chunk(self, frame, start, stop, draw):
        # one Philox block -> one Box-Muller pair
        b0, b1, b2, b3 = self._blocks(frame, start // 2, (stop + 1) // 2, draw)
        u1 = _unit_double(b0, b1)
        u2 = _unit_double(b2, b3)
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        pairs = np.empty((u1.size, 2))
        pairs[:, 0] = r * np.cos(ang)
        pairs[:, 1] = r * np.sin(ang)
        flat = pairs.reshape(-1)
        off = start - 2 * (start // 2)
        return flat[off: off + (stop - start)]

    def _uniform_chunk(self, frame, start, stop, draw):
        b0, b1, b2, b3 = self._blocks(frame, start // 2, (stop + 1) // 2, draw)
        pairs = np.stack([_unit_double(b0, b1), _unit_double(b2, b3)], axis=1).reshape(-1)
        off = start - 2 * (start // 2)
        return pairs[off: off + (stop - start)]

    def _fill(self, fn, size, frame, draw, offset):
        size = int(size)
        out = np.empty(size, dtype=np.float64)
        if size == 0:
            return out
        lo, hi = offset, offset + size
        bounds = list(range((lo // CHUNK) * CHUNK, hi, CHUNK))
        spans = [(max(b, lo), min(b + CHUNK, hi)) for b in bounds]

        def work(span):
            a, b = span
            out[a - lo: b - lo] = fn(frame, a, b, draw)

        threads = runtime.threads()
        if threads > 1 and len(spans) > 1:
            with ThreadPoolExecutor(threads) as pool:
                list(pool.map(work, spans))
        else:
            for span in spans:
                work(span)
        return out

    def normal(self, size: int, *, frame: int = 0, draw: int = 0, offset: int = 0) -> np.ndarray:
        """Standard normals for flat indices ``offset .. offset+size-1``."""
        return self._fill(self._normal_chunk, size, frame, draw, offset)

    def uniform(self, size: int, *, frame: int = 0, draw: int = 0, offset: int = 0) -> np.ndarray:
        """Uniforms in the open interval (0, 1)."""
        return self._fill(self._uniform_chunk, size, frame, draw, offset)

    def generator(self, tag: int = 0) -> np.random.Generator:
        """A sequential numpy Generator keyed from this stream.

        For rejection sampling and training loops where draws are consumed in
        program order anyway.
        """
        k0, k1 = self.key
        return np.random.Generator(np.random.Philox(key=[k0 | (k1 << 32), int(tag) & (2**64 - 1)]))
