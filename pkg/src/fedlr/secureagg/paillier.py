"""Paillier cryptosystem (g = n + 1 variant) on gmpy2 integers.

The public and private halves are separate objects: whoever only holds a
:class:`PublicKey` can encrypt and add, but has no decryption method.
"""

from __future__ import annotations

import math
import random
import secrets
from dataclasses import dataclass

import gmpy2

DEFAULT_KEY_BITS = 2048
TEST_KEY_BITS = 256


class KeyMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Ciphertext:
    value: int
    n: int


class PublicKey:
    def __init__(self, n: int):
        self.n = gmpy2.mpz(n)
        self.g = self.n + 1
        self.n_sq = self.n * self.n
        self.bits = int(self.n).bit_length()

    @property
    def ciphertext_bytes(self) -> int:
        return (int(self.n_sq).bit_length() + 7) // 8

    def __eq__(self, other):
        return isinstance(other, PublicKey) and self.n == other.n

    def __hash__(self):
        return hash(int(self.n))

    def _random_unit(self, rng) -> gmpy2.mpz:
        while True:
            r = gmpy2.mpz(rng.randrange(1, int(self.n)))
            if gmpy2.gcd(r, self.n) == 1:
                return r

    def raw_encrypt(self, m: int, rng=None) -> gmpy2.mpz:
        """Encrypt an integer in [0, n).  ``rng`` defaults to the OS CSPRNG."""
        m = gmpy2.mpz(m)
        if not 0 <= m < self.n:
            raise ValueError("plaintext outside [0, n)")
        r = self._random_unit(rng or _SYSTEM)
        # g^m = 1 + m n (mod n^2) for g = n + 1
        return ((1 + m * self.n) % self.n_sq) * gmpy2.powmod(r, self.n, self.n_sq) % self.n_sq

    def encrypt(self, m: int, rng=None) -> Ciphertext:
        """Encrypt a signed integer; negatives are stored as n - |m|."""
        return Ciphertext(int(self.raw_encrypt(int(m) % int(self.n), rng)), int(self.n))

    def raw_add(self, c1, c2) -> gmpy2.mpz:
        return gmpy2.mpz(c1) * gmpy2.mpz(c2) % self.n_sq


class PrivateKey:
    def __init__(self, public: PublicKey, p: int, q: int):
        if p == q:
            raise ValueError("p and q must differ")
        if public.n != gmpy2.mpz(p) * gmpy2.mpz(q):
            raise ValueError("n != p q")
        self.public = public
        self.lam = gmpy2.mpz(math.lcm(p - 1, q - 1))
        x = gmpy2.powmod(public.g, self.lam, public.n_sq)
        self.mu = gmpy2.invert((x - 1) // public.n, public.n)

    def raw_decrypt(self, c) -> int:
        n = self.public.n
        x = gmpy2.powmod(gmpy2.mpz(c), self.lam, self.public.n_sq)
        return int(((x - 1) // n) * self.mu % n)

    def decrypt(self, c: Ciphertext) -> int:
        """Decrypt to a signed integer in (-n/2, n/2]."""
        if c.n != int(self.public.n):
            raise KeyMismatch("ciphertext was produced under a different key")
        m = self.raw_decrypt(c.value)
        n = int(self.public.n)
        return m - n if m > n // 2 else m


@dataclass
class PaillierKeys:
    public: PublicKey
    private: PrivateKey

    @property
    def bits(self) -> int:
        return self.public.bits


_SYSTEM = secrets.SystemRandom()


def keypair_from_primes(p: int, q: int) -> PaillierKeys:
    pub = PublicKey(p * q)
    return PaillierKeys(pub, PrivateKey(pub, p, q))


def paillier_keygen(bits: int = DEFAULT_KEY_BITS, seed: int | None = None, max_attempts: int = 1000) -> PaillierKeys:
    """Generate keys with an n of exactly ``bits`` bits.

    A ``seed`` makes generation reproducible; that is for tests only.
    """
    if bits < 64:
        raise ValueError("key size must be at least 64 bits")
    rng = random.Random(seed) if seed is not None else _SYSTEM
    half = bits // 2
    for _ in range(max_attempts):
        p = _prime(half, rng)
        q = _prime(bits - half, rng)
        if p != q and (p * q).bit_length() == bits:
            return keypair_from_primes(p, q)
    raise RuntimeError(f"failed to generate a {bits}-bit modulus in {max_attempts} attempts")


def _prime(bits: int, rng) -> int:
    # top two bits set so the product has the full bit length
    start = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
    p = int(gmpy2.next_prime(start))
    if p.bit_length() != bits:
        return _prime(bits, rng)
    return p


def he_add(c1: Ciphertext, c2: Ciphertext, public: PublicKey) -> Ciphertext:
    """Homomorphic addition: decrypts to the sum of the plaintexts mod n."""
    if c1.n != c2.n or c1.n != int(public.n):
        raise KeyMismatch("ciphertexts use different moduli")
    return Ciphertext(int(public.raw_add(c1.value, c2.value)), c1.n)
