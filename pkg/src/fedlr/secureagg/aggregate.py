from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .fixedpoint import FixedPointCodec
from .packing import (
    SecureAggOverflow,
    ServerAggregator,
    decrypt_elements,
    decrypt_sparse,
    encrypt_elements,
    encrypt_sparse,
    pack_slots,
    unpack_slots,
)
from .paillier import PaillierKeys

MODES = ("per-element", "packed")


@dataclass
class HEStats:
    client_encrypt_s: float  # mean over clients
    client_decrypt_s: float
    server_s: float
    ciphertext_bytes: int  # one client's upload
    plaintext_bytes: int  # one client's plaintext upload at 4-byte values
    aggregate_ciphertext_bytes: int

    @property
    def client_s(self) -> float:
        return self.client_encrypt_s + self.client_decrypt_s


def secure_aggregate(
    vectors,
    weights,
    mode: str,
    keys: PaillierKeys,
    codec: FixedPointCodec,
    rng=None,
    return_ints: bool = False,
):
    """Weighted sum of client vectors computed on ciphertexts only.

    Each client scales its vector by its weight, encodes it in fixed point
    and encrypts it.  The server adds ciphertexts with the public key; the
    result is decrypted on the client side and decoded.  Returns
    ``(aggregate, HEStats)``, plus the exact integer sum if ``return_ints``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    vectors = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    if not vectors:
        raise ValueError("no client vectors")
    if len({len(v) for v in vectors}) != 1:
        raise ValueError("client vectors differ in length")
    if mode == "packed" and len(vectors) > codec.max_summands:
        raise SecureAggOverflow(
            f"cohort of {len(vectors)} exceeds the codec headroom of {codec.max_summands}"
        )
    payloads = []
    t_enc = 0.0
    for v, w in zip(vectors, weights):
        ints = codec.encode(w * v)
        t0 = time.perf_counter()
        if mode == "packed":
            payloads.append(pack_slots(ints, keys.public, codec, rng=rng))
        else:
            payloads.append(encrypt_elements(ints, keys.public, rng=rng))
        t_enc += time.perf_counter() - t0
    server = ServerAggregator(keys.public)
    t0 = time.perf_counter()
    total = server.add(payloads)
    t_srv = time.perf_counter() - t0
    t0 = time.perf_counter()
    if mode == "packed":
        ints = unpack_slots(total, keys.private, codec)
    else:
        ints = decrypt_elements(total, keys.private)
    t_dec = time.perf_counter() - t0
    stats = HEStats(
        client_encrypt_s=t_enc / len(vectors),
        client_decrypt_s=t_dec,
        server_s=t_srv,
        ciphertext_bytes=payloads[0].nbytes,
        plaintext_bytes=4 * len(vectors[0]),
        aggregate_ciphertext_bytes=total.nbytes,
    )
    out = codec.decode(ints)
    if return_ints:
        return out, stats, ints
    return out, stats


def secure_aggregate_sparse(entries, weights, size: int, keys: PaillierKeys, codec: FixedPointCodec, rng=None):
    """Per-element aggregation of sparse vectors given as ``(coords, values)`` pairs.

    Coordinates travel in the clear; only values are encrypted.
    """
    payloads = []
    t_enc = 0.0
    for (coords, vals), w in zip(entries, weights):
        ints = codec.encode(w * np.asarray(vals, dtype=np.float64))
        t0 = time.perf_counter()
        payloads.append(encrypt_sparse(coords, ints, keys.public, rng=rng))
        t_enc += time.perf_counter() - t0
    server = ServerAggregator(keys.public)
    t0 = time.perf_counter()
    total = server.add_sparse(payloads)
    t_srv = time.perf_counter() - t0
    t0 = time.perf_counter()
    coords, ints = decrypt_sparse(total, keys.private)
    t_dec = time.perf_counter() - t0
    out = np.zeros(size)
    out[coords] = codec.decode(ints)
    stats = HEStats(
        client_encrypt_s=t_enc / max(len(payloads), 1),
        client_decrypt_s=t_dec,
        server_s=t_srv,
        ciphertext_bytes=max(p.nbytes for p in payloads),
        plaintext_bytes=max(8 * len(p.coords) for p in payloads),
        aggregate_ciphertext_bytes=total.nbytes,
    )
    return out, stats
