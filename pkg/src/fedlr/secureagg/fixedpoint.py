from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class EncodingOverflow(OverflowError):
    pass


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed point with ``scale_bits`` fractional bits inside ``slot_bits`` slots.

    ``headroom_bits`` are reserved so that up to ``2**headroom_bits``
    encoded values can be summed inside one slot without carrying out.
    """

    scale_bits: int = 16
    slot_bits: int = 32
    headroom_bits: int = 7

    def __post_init__(self):
        if self.slot_bits not in (16, 32, 64):
            raise ValueError("slot_bits must be 16, 32 or 64")
        if self.slot_bits <= self.scale_bits + self.headroom_bits:
            raise ValueError("slot_bits must exceed scale_bits + headroom_bits")

    @classmethod
    def for_cohort(cls, max_summands: int, scale_bits: int = 16, slot_bits: int = 32):
        return cls(scale_bits, slot_bits, max(1, math.ceil(math.log2(max(max_summands, 2)))))

    @property
    def value_bits(self) -> int:
        return self.slot_bits - self.headroom_bits

    @property
    def limit(self) -> int:
        """Encoded magnitudes must stay strictly below this."""
        return 1 << (self.value_bits - 1)

    @property
    def max_summands(self) -> int:
        return 1 << self.headroom_bits

    @property
    def resolution(self) -> float:
        return 2.0 ** -self.scale_bits

    def encode(self, values) -> np.ndarray:
        """Round half to even onto the 2**-scale_bits grid, as int64."""
        v = np.asarray(values, dtype=np.float64)
        if not np.isfinite(v).all():
            bad = int(np.flatnonzero(~np.isfinite(v.ravel()))[0])
            raise EncodingOverflow(f"non-finite value at index {bad}")
        scaled = np.rint(np.ldexp(v, self.scale_bits))
        over = np.abs(scaled) >= self.limit
        if over.any():
            bad = int(np.flatnonzero(over.ravel())[0])
            raise EncodingOverflow(
                f"value {v.ravel()[bad]!r} at index {bad} exceeds the "
                f"{self.value_bits}-bit signed range at scale 2^{self.scale_bits}"
            )
        return scaled.astype(np.int64)

    def decode(self, ints) -> np.ndarray:
        return np.ldexp(np.asarray(ints, dtype=np.float64), -self.scale_bits)


def fp_encode(values, codec: FixedPointCodec) -> np.ndarray:
    return codec.encode(values)


def fp_decode(ints, codec: FixedPointCodec) -> np.ndarray:
    return codec.decode(ints)
