"""Slot-packed and per-element encrypted vectors, and ciphertext-only aggregation.

Packed mode emulates a vector HE scheme with fixed 8096-slot blocks.  Each
logical block is a fixed number of Paillier ciphertexts ("chunks"); each
chunk holds as many offset-binary slots as fit under the modulus plus one
guard slot.  Every client writes 1 into the guard, so after summation the
guard must equal the number of summands.  Blocks are always full size
(padding slots are encrypted too), which makes ciphertext size and cost a
step function of the slot count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import gmpy2
import numpy as np

from .fixedpoint import FixedPointCodec
from .paillier import KeyMismatch, PrivateKey, PublicKey

SLOTS_PER_BLOCK = 8096

_DTYPES = {16: "<u2", 32: "<u4", 64: "<u8"}


class SecureAggOverflow(OverflowError):
    pass


@dataclass
class SecurePayload:
    """Encrypted vector.  ``blocks[b]`` is a list of ciphertext integers."""

    blocks: list[list[int]]
    n_slots: int
    slots_per_block: int
    chunk_slots: int  # data slots per ciphertext (1 in per-element mode)
    ciphertext_bytes: int
    modulus: int
    packed: bool
    summands: int = 1

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    @property
    def nbytes(self) -> int:
        return sum(len(b) for b in self.blocks) * self.ciphertext_bytes


def block_count(n_slots: int, slots_per_block: int = SLOTS_PER_BLOCK) -> int:
    return -(-n_slots // slots_per_block)


def chunk_slots(public: PublicKey, codec: FixedPointCodec) -> int:
    """Data slots per Paillier plaintext, leaving one guard slot."""
    k = (public.bits - 1) // codec.slot_bits - 1
    if k < 1:
        raise ValueError(f"a {public.bits}-bit key cannot hold a {codec.slot_bits}-bit slot plus guard")
    return k


def packed_block_bytes(public: PublicKey, codec: FixedPointCodec, slots_per_block: int = SLOTS_PER_BLOCK) -> int:
    return math.ceil(slots_per_block / chunk_slots(public, codec)) * public.ciphertext_bytes


def packed_size(n_slots: int, public: PublicKey, codec: FixedPointCodec, slots_per_block: int = SLOTS_PER_BLOCK) -> int:
    return block_count(n_slots, slots_per_block) * packed_block_bytes(public, codec, slots_per_block)


def per_element_size(n_slots: int, public: PublicKey) -> int:
    return n_slots * public.ciphertext_bytes


def _to_chunk_ints(ints: np.ndarray, codec: FixedPointCodec, k: int, n_chunks: int) -> list[int]:
    dt = _DTYPES[codec.slot_bits]
    offset = 1 << (codec.value_bits - 1)
    grid = np.full((n_chunks, k + 1), offset, dtype=np.uint64)
    flat = grid[:, :k].reshape(-1)
    flat[: len(ints)] = np.asarray(ints, dtype=np.int64) + offset
    grid[:, :k] = flat.reshape(n_chunks, k)
    grid[:, k] = 1  # guard
    raw = grid.astype(dt).tobytes()
    width = (k + 1) * codec.slot_bits // 8
    return [int.from_bytes(raw[i * width:(i + 1) * width], "little") for i in range(n_chunks)]


def _from_chunk_ints(chunks, codec: FixedPointCodec, k: int, summands: int) -> np.ndarray:
    dt = _DTYPES[codec.slot_bits]
    width = (k + 1) * codec.slot_bits // 8
    offset = 1 << (codec.value_bits - 1)
    out = []
    for c in chunks:
        if c >> (width * 8):
            raise SecureAggOverflow("chunk plaintext exceeds its slot budget")
        digits = np.frombuffer(int(c).to_bytes(width, "little"), dtype=dt).astype(np.int64)
        if digits[k] != summands:
            raise SecureAggOverflow(
                f"guard slot holds {digits[k]}, expected {summands}: a slot carried over"
            )
        out.append(digits[:k] - summands * offset)
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def pack_slots(
    ints,
    public: PublicKey,
    codec: FixedPointCodec,
    slots_per_block: int = SLOTS_PER_BLOCK,
    rng=None,
) -> SecurePayload:
    """Encrypt fixed-point integers into ``ceil(n / slots_per_block)`` full blocks."""
    ints = np.asarray(ints, dtype=np.int64)
    if len(ints) and int(np.max(np.abs(ints))) >= codec.limit:
        bad = int(np.argmax(np.abs(ints) >= codec.limit))
        raise SecureAggOverflow(f"slot {bad} value {int(ints[bad])} violates the headroom budget")
    k = chunk_slots(public, codec)
    per_block = math.ceil(slots_per_block / k)
    n_blocks = block_count(len(ints), slots_per_block)
    blocks = []
    for b in range(n_blocks):
        seg = ints[b * slots_per_block:(b + 1) * slots_per_block]
        chunks = _to_chunk_ints(seg, codec, k, per_block)
        blocks.append([int(public.raw_encrypt(c, rng)) for c in chunks])
    return SecurePayload(blocks, len(ints), slots_per_block, k, public.ciphertext_bytes,
                         int(public.n), packed=True)


def unpack_slots(payload: SecurePayload, private: PrivateKey, codec: FixedPointCodec) -> np.ndarray:
    """Decrypt a packed payload back to the (summed) fixed-point integers."""
    _check_key(payload, private.public)
    if payload.summands > codec.max_summands:
        raise SecureAggOverflow(f"{payload.summands} summands exceed the headroom of {codec.max_summands}")
    parts = []
    for blk in payload.blocks:
        chunks = [private.raw_decrypt(c) for c in blk]
        vals = _from_chunk_ints(chunks, codec, payload.chunk_slots, payload.summands)
        parts.append(vals[: payload.slots_per_block])
    out = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    return out[: payload.n_slots]


def encrypt_elements(ints, public: PublicKey, rng=None) -> SecurePayload:
    """One ciphertext per value; negatives wrap modulo n."""
    n = int(public.n)
    blocks = [[int(public.raw_encrypt(int(v) % n, rng))] for v in np.asarray(ints, dtype=np.int64)]
    return SecurePayload(blocks, len(blocks), 1, 1, public.ciphertext_bytes, n, packed=False)


def decrypt_elements(payload: SecurePayload, private: PrivateKey) -> np.ndarray:
    _check_key(payload, private.public)
    n = int(private.public.n)
    half = n // 2
    out = []
    for (c,) in payload.blocks:
        m = private.raw_decrypt(c)
        out.append(m - n if m > half else m)
    return np.array(out, dtype=object).astype(np.int64)


def _check_key(payload: SecurePayload, public: PublicKey):
    if payload.modulus != int(public.n):
        raise KeyMismatch("payload was encrypted under a different key")


class ServerAggregator:
    """Ciphertext-only aggregation.  Holds the public key and nothing else."""

    def __init__(self, public: PublicKey):
        self.public = public

    def add(self, payloads: list[SecurePayload]) -> SecurePayload:
        if not payloads:
            raise ValueError("nothing to aggregate")
        first = payloads[0]
        n_sq = self.public.n_sq
        for p in payloads:
            _check_key(p, self.public)
            if (p.n_slots, p.packed, p.slots_per_block, p.chunk_slots) != (
                first.n_slots, first.packed, first.slots_per_block, first.chunk_slots
            ):
                raise ValueError("payload layouts differ")
        acc = [[gmpy2.mpz(c) for c in blk] for blk in first.blocks]
        for p in payloads[1:]:
            for ab, pb in zip(acc, p.blocks):
                for j, c in enumerate(pb):
                    ab[j] = ab[j] * c % n_sq
        return SecurePayload(
            [[int(c) for c in blk] for blk in acc], first.n_slots, first.slots_per_block,
            first.chunk_slots, first.ciphertext_bytes, first.modulus, first.packed,
            summands=sum(p.summands for p in payloads),
        )

    def add_sparse(self, payloads: list["SparseSecurePayload"]) -> "SparseSecurePayload":
        """Sum per-element ciphertexts coordinate by coordinate."""
        n_sq = self.public.n_sq
        acc: dict[int, gmpy2.mpz] = {}
        for p in payloads:
            if p.modulus != int(self.public.n):
                raise KeyMismatch("payload was encrypted under a different key")
            for coord, c in zip(p.coords.tolist(), p.ciphertexts):
                prev = acc.get(coord)
                acc[coord] = gmpy2.mpz(c) if prev is None else prev * c % n_sq
        coords = np.array(sorted(acc), dtype=np.int64)
        return SparseSecurePayload(coords, [int(acc[c]) for c in coords.tolist()],
                                   payloads[0].ciphertext_bytes, payloads[0].modulus)


@dataclass
class SparseSecurePayload:
    """Per-element ciphertexts for a sparse vector with plaintext coordinates."""

    coords: np.ndarray
    ciphertexts: list[int] = field(repr=False)
    ciphertext_bytes: int
    modulus: int

    @property
    def nbytes(self) -> int:
        return len(self.ciphertexts) * self.ciphertext_bytes


def encrypt_sparse(coords, ints, public: PublicKey, rng=None) -> SparseSecurePayload:
    n = int(public.n)
    cts = [int(public.raw_encrypt(int(v) % n, rng)) for v in np.asarray(ints, dtype=np.int64)]
    return SparseSecurePayload(np.asarray(coords, dtype=np.int64), cts, public.ciphertext_bytes, n)


def decrypt_sparse(payload: SparseSecurePayload, private: PrivateKey) -> tuple[np.ndarray, np.ndarray]:
    if payload.modulus != int(private.public.n):
        raise KeyMismatch("payload was encrypted under a different key")
    n = int(private.public.n)
    half = n // 2
    vals = []
    for c in payload.ciphertexts:
        m = private.raw_decrypt(c)
        vals.append(m - n if m > half else m)
    return payload.coords, np.array(vals, dtype=np.int64)
