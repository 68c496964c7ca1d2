"""Secure additive aggregation: fixed point, Paillier, slot packing."""

from .aggregate import HEStats, MODES, secure_aggregate, secure_aggregate_sparse
from .fixedpoint import EncodingOverflow, FixedPointCodec, fp_decode, fp_encode
from .packing import (
    SLOTS_PER_BLOCK,
    SecureAggOverflow,
    SecurePayload,
    ServerAggregator,
    block_count,
    pack_slots,
    packed_size,
    per_element_size,
    unpack_slots,
)
from .paillier import (
    Ciphertext,
    KeyMismatch,
    PaillierKeys,
    PrivateKey,
    PublicKey,
    he_add,
    keypair_from_primes,
    paillier_keygen,
)

__all__ = [
    "Ciphertext", "EncodingOverflow", "FixedPointCodec", "HEStats", "KeyMismatch", "MODES",
    "PaillierKeys", "PrivateKey", "PublicKey", "SLOTS_PER_BLOCK", "SecureAggOverflow",
    "SecurePayload", "ServerAggregator", "block_count", "fp_decode", "fp_encode", "he_add",
    "keypair_from_primes", "pack_slots", "packed_size", "paillier_keygen", "per_element_size",
    "secure_aggregate", "secure_aggregate_sparse", "unpack_slots",
]
