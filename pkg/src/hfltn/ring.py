"""Fixed-point encoding into Z_{2^64} and K-way additive secret sharing.

Real weights are scaled by ``2**scale_bits``, rounded to the nearest integer
and stored as two's-complement ``uint64``.  All ring arithmetic relies on
numpy's wrap-around semantics for unsigned 64-bit integers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    ConfigInvalid,
    DimMismatch,
    IncompleteShareSet,
    InvalidShareCount,
    MagnitudeExceeded,
)

RING_BITS = 64
_U64 = np.uint64


@dataclass(frozen=True)
class FixedPointCodec:
    scale_bits: int = 32
    w_max: float = float(2**20)

    def __post_init__(self):
        if not 0 < self.scale_bits < 62:
            raise ConfigInvalid("scale_bits", "must lie in (0, 62)")
        if not self.w_max > 0:
            raise ConfigInvalid("w_max", "must be positive")

    @property
    def scale(self) -> float:
        return float(2**self.scale_bits)

    @property
    def resolution(self) -> float:
        """Worst-case absolute round-trip error of one coordinate."""
        return 2.0 ** -(self.scale_bits + 1)

    def max_clients(self) -> int:
        """Largest N for which N * w_max * 2^scale_bits stays below 2^63."""
        bound = 2**63 / (self.w_max * self.scale)
        n = int(bound)
        return n - 1 if n == bound else n

    def check_headroom(self, n_clients: int) -> None:
        if n_clients * self.w_max * self.scale >= 2.0**63:
            raise ConfigInvalid(
                "w_max",
                f"{n_clients} clients x w_max={self.w_max} x 2^{self.scale_bits} "
                "would wrap the true aggregate",
            )


@dataclass(frozen=True, eq=False)
class RingVector:
    """Immutable vector of Z_{2^64} elements."""

    elems: np.ndarray

    def __post_init__(self):
        arr = np.array(self.elems, dtype=_U64, copy=True).reshape(-1)
        if arr.size == 0:
            raise DimMismatch("ring vector must have dim >= 1")
        arr.setflags(write=False)
        object.__setattr__(self, "elems", arr)

    @property
    def dim(self) -> int:
        return int(self.elems.size)

    def __eq__(self, other):
        if not isinstance(other, RingVector):
            return NotImplemented
        return np.array_equal(self.elems, other.elems)

    def __hash__(self):
        return hash(self.elems.tobytes())

    def __repr__(self):
        head = ", ".join(str(int(x)) for x in self.elems[:4])
        more = ", ..." if self.dim > 4 else ""
        return f"RingVector(dim={self.dim}, [{head}{more}])"

    def tolist(self) -> list[int]:
        return [int(x) for x in self.elems]


@dataclass(frozen=True)
class SecretShare:
    sender_id: int
    share_index: int
    share_count: int
    payload: RingVector

    def __post_init__(self):
        if self.share_count < 2:
            raise InvalidShareCount(f"share_count={self.share_count} < 2")
        if not 0 <= self.share_index < self.share_count:
            raise InvalidShareCount(
                f"share_index={self.share_index} outside [0, {self.share_count})"
            )


def encode_vector(weights: Sequence[float], codec: FixedPointCodec) -> RingVector:
    x = np.asarray(weights, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise DimMismatch("cannot encode an empty vector")
    bad = ~np.isfinite(x) | (np.abs(x) > codec.w_max)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise MagnitudeExceeded(f"|weights[{i}]| = {abs(x[i])} exceeds w_max={codec.w_max}")
    q = np.rint(x * codec.scale).astype(np.int64)
    return RingVector(q.view(_U64))


def decode_vector(rv: RingVector, codec: FixedPointCodec) -> np.ndarray:
    """Interpret elements >= 2^63 as negative and undo the fixed-point scale."""
    return rv.elems.view(np.int64).astype(np.float64) / codec.scale


def ring_add(a: RingVector, b: RingVector) -> RingVector:
    if a.dim != b.dim:
        raise DimMismatch(f"dim {a.dim} != {b.dim}")
    return RingVector(a.elems + b.elems)


def ring_neg(a: RingVector) -> RingVector:
    return RingVector(_U64(0) - a.elems)


def ring_sum(vectors: Sequence[RingVector]) -> RingVector:
    """Sum many ring vectors in one pass; no intermediate partial sums are kept."""
    if not vectors:
        raise DimMismatch("nothing to sum")
    dims = {v.dim for v in vectors}
    if len(dims) != 1:
        raise DimMismatch(f"mixed dims {sorted(dims)}")
    stacked = np.stack([v.elems for v in vectors])
    return RingVector(stacked.sum(axis=0, dtype=_U64))


def random_ring_vectors(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    return rng.integers(0, 2**RING_BITS, size=(count, dim), dtype=_U64)


def partition(
    rv: RingVector, k: int, rng: np.random.Generator, sender_id: int = 0
) -> list[SecretShare]:
    """Split ``rv`` into ``k`` additive shares whose ring sum is ``rv``.

    Shares ``0..k-2`` are uniform draws from ``rng``; the last share closes
    the sum.
    """
    if k < 2:
        raise InvalidShareCount(f"k={k}: a single share would reveal the weights")
    masks = random_ring_vectors(rng, k - 1, rv.dim)
    last = rv.elems - masks.sum(axis=0, dtype=_U64)
    payloads = [*masks, last]
    return [
        SecretShare(sender_id, i, k, RingVector(p)) for i, p in enumerate(payloads)
    ]


def reconstruct(shares: Sequence[SecretShare]) -> RingVector:
    if not shares:
        raise IncompleteShareSet("no shares given")
    counts = {s.share_count for s in shares}
    if len(counts) != 1:
        raise IncompleteShareSet(f"mixed share counts {sorted(counts)}")
    (k,) = counts
    indices = sorted(s.share_index for s in shares)
    if indices != list(range(k)):
        missing = sorted(set(range(k)) - set(indices))
        raise IncompleteShareSet(f"need indices 0..{k - 1}; missing {missing}, got {indices}")
    return ring_sum([s.payload for s in shares])
