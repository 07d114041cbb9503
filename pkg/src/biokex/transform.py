"""Keyed swap-permutation of the feature bit string (revocable template).

A user-specific transformation key seeds a deterministic index stream; the
i-th stream value j_i selects the bit swapped with position i, for
i = 1..N in order. The composition is a bijection on N-bit strings, so a
leaked template is revoked by switching to a fresh key. The stream is a
hash counter: index i is SHA-256(token || i as 8 big-endian bytes) reduced
mod N, which keeps the permutation bit-exact across implementations and
unbiased whenever N divides 2**256 (true for all power-of-two N).
"""

from __future__ import annotations

import functools
import hashlib
import secrets
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import FeatureBitString

__all__ = [
    "TransformationKey",
    "RevocableTemplate",
    "TransformError",
    "index_stream",
    "permute",
    "invert",
]

DEFAULT_TOKEN_LEN = 16


class TransformError(ValueError):
    """Invalid transformation key or template."""


@dataclass(frozen=True)
class TransformationKey:
    """Secret permutation seed plus a label identifying the key version."""

    token: bytes
    label: str = "default"

    def __post_init__(self):
        if not self.token:
            raise TransformError("empty transformation token")

    @classmethod
    def random(cls, rng: np.random.Generator | None = None, label: str = "default") -> "TransformationKey":
        token = rng.bytes(DEFAULT_TOKEN_LEN) if rng is not None else secrets.token_bytes(DEFAULT_TOKEN_LEN)
        return cls(token, label)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(f"{self.token.hex()}\n{self.label}\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TransformationKey":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if len(lines) < 2:
            raise TransformError(f"{path}: expected hex token line and label line")
        try:
            token = bytes.fromhex(lines[0].strip())
        except ValueError:
            raise TransformError(f"{path}: bad hex token") from None
        return cls(token, lines[1].strip())


class RevocableTemplate:
    """Permuted feature bit string; same length and popcount as its source."""

    __slots__ = ("bits", "key_label")

    def __init__(self, bits: np.ndarray, key_label: str):
        bits = np.ascontiguousarray(bits, dtype=np.uint8)
        n = bits.shape[0]
        if bits.ndim != 1 or n == 0 or (n & (n - 1)) != 0:
            raise TransformError(f"template length {n} is not a power of two")
        bits.setflags(write=False)
        self.bits = bits
        self.key_label = key_label

    def __len__(self) -> int:
        return self.bits.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, RevocableTemplate):
            return NotImplemented
        return self.key_label == other.key_label and bool(np.array_equal(self.bits, other.bits))

    def __repr__(self) -> str:
        return f"RevocableTemplate(n={len(self)}, popcount={self.popcount}, key_label={self.key_label!r})"

    @property
    def n_p(self) -> int:
        return int(len(self)).bit_length() - 1

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    def serialize(self) -> bytes:
        """Same packed wire form as the source feature bit string."""
        return FeatureBitString(self.bits, self.n_p).serialize()


def index_stream(key: TransformationKey, n: int, count: int) -> list[int]:
    """First ``count`` values of the keyed index stream over [1, n].

    The i-th value (1-based) is 1 + (SHA-256(token || BE64(i)) as a
    big-endian integer, mod n).
    """
    if n < 1:
        raise TransformError(f"stream range n={n} must be >= 1")
    if count < 1:
        raise TransformError(f"stream count={count} must be >= 1")
    token = key.token
    out = []
    for i in range(1, count + 1):
        digest = hashlib.sha256(token + i.to_bytes(8, "big")).digest()
        out.append(1 + int.from_bytes(digest, "big") % n)
    return out


def _arrangement_from_stream(stream: list[int], n: int) -> np.ndarray:
    """Final occupancy after the sequential swap loop.

    Walks i = 1..n swapping positions i and stream[i-1] (both 1-based) in
    order; entry p of the result is the source index whose bit ends up at
    position p.
    """
    if len(stream) != n:
        raise TransformError(f"need {n} stream indices, got {len(stream)}")
    arr = list(range(n))
    for i, j in enumerate(stream):
        arr[i], arr[j - 1] = arr[j - 1], arr[i]
    return np.array(arr, dtype=np.int64)


@functools.lru_cache(maxsize=64)
def _arrangement(token: bytes, n: int) -> np.ndarray:
    key = TransformationKey(token, "cache")
    arr = _arrangement_from_stream(index_stream(key, n, n), n)
    arr.setflags(write=False)
    return arr


def permute(fbs: FeatureBitString, key: TransformationKey) -> RevocableTemplate:
    """Apply the keyed swap permutation; preserves length and popcount."""
    arr = _arrangement(key.token, len(fbs))
    return RevocableTemplate(fbs.bits[arr], key.label)


def invert(template: RevocableTemplate, key: TransformationKey) -> FeatureBitString:
    """Undo ``permute`` under the same key.

    A mismatched key is undetectable here: it yields a valid but different
    bit string, never an error.
    """
    arr = _arrangement(key.token, len(template))
    bits = np.empty(len(template), dtype=np.uint8)
    bits[arr] = template.bits
    return FeatureBitString(bits, template.n_p)
