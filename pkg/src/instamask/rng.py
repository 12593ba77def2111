"""Counter-based 64-bit random stream with explicit state.

Every routine in this package that consumes randomness takes a ``CounterRng``
argument; nothing reads global state.  The stream is fully defined by two
64-bit integers ``(key, counter)`` and the i-th raw draw past the current
counter is

    raw(i) = mix64((key + (counter + i + 1) * GOLDEN) mod 2**64)

where ``mix64`` is the splitmix64 finalizer (xor-shift / multiply rounds with
the constants below).  Because only fixed-width integer arithmetic is
involved, the stream is bit-identical across platforms and numpy versions,
and any block of draws can be produced without generating its predecessors.

Derived draws and how much counter they consume:

- ``uniform``: top 53 bits of a raw draw divided by 2**53, in [0, 1).
  One raw draw per value.
- ``normal``: Box-Muller cosine branch; every value consumes exactly two
  raw draws (the sine branch is discarded to keep scalar and vector calls
  stream-aligned).
- ``randint``: ``floor(uniform * span) + lo``.  One raw draw per value.

Scalar helpers are implemented with Python integers (numpy scalar uint64
arithmetic warns on wraparound); the vectorized paths use uint64 arrays.
Both produce the same stream, which the test suite asserts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_SPLIT_SALT = 0x5851F42D4C957F2D
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(x: int) -> int:
    """Splitmix64 finalizer on a Python integer, reduced mod 2**64."""
    x &= _MASK64
    x ^= x >> 30
    x = (x * _MIX_A) & _MASK64
    x ^= x >> 27
    x = (x * _MIX_B) & _MASK64
    x ^= x >> 31
    return x


def _mix64_array(x: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps modulo 2**64 without warnings
    x = x.astype(np.uint64, copy=True)
    x ^= x >> np.uint64(30)
    x *= np.uint64(_MIX_A)
    x ^= x >> np.uint64(27)
    x *= np.uint64(_MIX_B)
    x ^= x >> np.uint64(31)
    return x


def hash64(*parts: int | str | bytes) -> int:
    """Stable 64-bit hash of a mixed tuple, for seeding derived streams.

    Each part is rendered to bytes (ints as 8-byte little-endian after
    reduction mod 2**64, strings as UTF-8), length-prefixed so part
    boundaries are unambiguous, and folded with FNV-1a; the digest is
    passed through mix64 once.  Not cryptographic, just reproducible.
    """
    h = _FNV_OFFSET
    for part in parts:
        if isinstance(part, int):
            data = (part & _MASK64).to_bytes(8, "little")
        elif isinstance(part, str):
            data = part.encode("utf-8")
        elif isinstance(part, bytes):
            data = part
        else:
            raise TypeError(f"hash64 takes int/str/bytes parts, got {type(part).__name__}")
        for b in len(data).to_bytes(8, "little"):
            h = ((h ^ b) * _FNV_PRIME) & _MASK64
        for b in data:
            h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return mix64(h)


@dataclass
class CounterRng:
    """Explicit-state generator; see module docstring for the stream law."""

    key: int
    counter: int = 0

    def __post_init__(self) -> None:
        self.key &= _MASK64
        self.counter &= _MASK64

    @classmethod
    def from_seed(cls, seed: int) -> "CounterRng":
        return cls(key=mix64(seed), counter=0)

    def split(self, label: int | str | bytes) -> "CounterRng":
        """Independent child stream; the parent's counter is untouched.

        child key = mix64(key XOR hash64(label) XOR salt).  Distinct labels
        give streams unrelated to each other and to the parent.
        """
        return CounterRng(key=mix64(self.key ^ hash64(label) ^ _SPLIT_SALT), counter=0)

    def clone(self) -> "CounterRng":
        return CounterRng(key=self.key, counter=self.counter)

    @property
    def state(self) -> tuple[int, int]:
        return (self.key, self.counter)

    # raw draws ---------------------------------------------------------

    def raw1(self) -> int:
        self.counter = (self.counter + 1) & _MASK64
        return mix64((self.key + self.counter * _GOLDEN) & _MASK64)

    def raw(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("draw count must be >= 0")
        idx = np.arange(1, n + 1, dtype=np.uint64) + np.uint64(self.counter)
        vals = _mix64_array(np.uint64(self.key) + idx * np.uint64(_GOLDEN))
        self.counter = (self.counter + n) & _MASK64
        return vals

    # derived draws -----------------------------------------------------

    def uniform1(self) -> float:
        return (self.raw1() >> 11) * 2.0**-53

    def uniform(self, n: int) -> np.ndarray:
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal1(self) -> float:
        # delegates to the vector path: numpy's array log/cos may differ from
        # math.log/math.cos in the last ulp, and one stream law must hold
        return float(self.normal(1)[0])

    def normal(self, n: int) -> np.ndarray:
        # Box-Muller, cosine branch only: each normal consumes exactly two
        # uniforms, so scalar and vector calls stay stream-aligned
        if n < 0:
            raise ValueError("draw count must be >= 0")
        u = self.uniform(2 * n)
        u1 = u[0::2]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        return r * np.cos(2.0 * np.pi * u2)

    def randint1(self, lo: int, hi: int) -> int:
        """One integer in [lo, hi). Span must be positive."""
        if hi <= lo:
            raise ValueError("empty range for randint")
        return lo + int(self.uniform1() * (hi - lo))

    def randint(self, lo: int, hi: int, n: int) -> np.ndarray:
        if hi <= lo:
            raise ValueError("empty range for randint")
        return lo + (self.uniform(n) * (hi - lo)).astype(np.int64)
