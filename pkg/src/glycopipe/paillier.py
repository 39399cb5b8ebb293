"""Paillier additive-homomorphic cryptosystem on plain Python integers.

Standard construction with g = n + 1, which makes encryption cheap:
Enc(m, r) = (1 + m*n) * r^n mod n^2. Decryption uses lam = lcm(p-1, q-1)
and mu = (L(g^lam mod n^2))^-1 mod n with L(u) = (u - 1) // n. Ciphertext
multiplication decrypts to plaintext addition; ciphertext exponentiation
decrypts to scalar multiplication.

A fixed-point codec maps bounded reals into Z_n (negatives as n - |v*F|)
so that summing a few ciphertexts realizes real addition at resolution
1/F.

Primality is Miller-Rabin with 40 rounds (error < 2^-80). Key generation
draws primes with the top two bits set so the product has exactly the
requested bit length. All randomness flows through numpy Generators so
results are reproducible from a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .checkpoint import (
    bytes_tensor_to_int,
    int_to_bytes_tensor,
    load_checkpoint,
    save_checkpoint,
)

_MR_ROUNDS = 40
_SMALL_PRIMES = (
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67,
    71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139,
    149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199,
)


@dataclass(frozen=True)
class PublicKey:
    n: int
    g: int

    @property
    def n_sq(self) -> int:
        return self.n * self.n

    @property
    def bits(self) -> int:
        return self.n.bit_length()


@dataclass(frozen=True)
class PrivateKey:
    lam: int
    mu: int
    public: PublicKey


def _rand_bits(rng: np.random.Generator, k: int) -> int:
    """Uniform integer in [0, 2^k) from a numpy Generator."""
    n_bytes = (k + 7) // 8
    raw = rng.integers(0, 256, size=n_bytes, dtype=np.uint8)
    return int.from_bytes(raw.tobytes(), "big") & ((1 << k) - 1)


def _rand_below(rng: np.random.Generator, bound: int) -> int:
    """Uniform integer in [0, bound) by rejection."""
    k = bound.bit_length()
    while True:
        v = _rand_bits(rng, k)
        if v < bound:
            return v


def is_probable_prime(n: int, rng: np.random.Generator | None = None) -> bool:
    """Miller-Rabin with 40 random rounds; error probability < 2^-80."""
    if n < 2:
        return False
    if n in (2, 3):
        return True
    if n % 2 == 0:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    if rng is None:
        rng = np.random.default_rng(0xA11CE)
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(_MR_ROUNDS):
        a = 2 + _rand_below(rng, n - 3)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = (x * x) % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(rng: np.random.Generator, bits: int) -> int:
    """Random prime with the top two bits and the low bit set."""
    if bits < 3:
        raise ValueError("prime size too small")
    top = (1 << (bits - 1)) | (1 << (bits - 2))
    while True:
        candidate = _rand_bits(rng, bits) | top | 1
        if is_probable_prime(candidate, rng):
            return candidate


def keypair_from_primes(p: int, q: int) -> tuple[PublicKey, PrivateKey]:
    """Build a keypair from explicit primes (toy/test sizes included)."""
    if p == q:
        raise ValueError("primes must be distinct")
    if not (is_probable_prime(p) and is_probable_prime(q)):
        raise ValueError("both factors must be prime")
    n = p * q
    if math.gcd(n, (p - 1) * (q - 1)) != 1:
        raise ValueError("gcd(n, (p-1)(q-1)) must be 1")
    g = n + 1
    lam = math.lcm(p - 1, q - 1)
    n_sq = n * n
    l_val = (pow(g, lam, n_sq) - 1) // n
    mu = pow(l_val, -1, n)
    public = PublicKey(n=n, g=g)
    return public, PrivateKey(lam=lam, mu=mu, public=public)


def paillier_keygen(bits: int = 2048, seed: int = 0) -> tuple[PublicKey, PrivateKey]:
    """Deterministic keypair whose modulus has exactly `bits` bits."""
    if bits < 64:
        raise ValueError("key size below 64 bits is not supported")
    if bits % 2 != 0:
        raise ValueError("key size must be even")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9A111]))
    half = bits // 2
    while True:
        p = _random_prime(rng, half)
        q = _random_prime(rng, half)
        if p == q:
            continue
        n = p * q
        # top-two-bits-set primes make this the common case
        if n.bit_length() != bits:
            continue
        if math.gcd(n, (p - 1) * (q - 1)) != 1:
            continue
        return keypair_from_primes(p, q)


def paillier_encrypt(pk: PublicKey, m: int, rng: np.random.Generator | None = None) -> int:
    """Encrypt m in [0, n); randomized via r coprime to n."""
    m = int(m)
    if not 0 <= m < pk.n:
        raise ValueError(f"message {m} outside [0, n)")
    if rng is None:
        rng = np.random.default_rng()
    n, n_sq = pk.n, pk.n_sq
    while True:
        r = 1 + _rand_below(rng, n - 1)
        if math.gcd(r, n) == 1:
            break
    return ((1 + m * n) * pow(r, n, n_sq)) % n_sq


def paillier_decrypt(sk: PrivateKey, c: int) -> int:
    n, n_sq = sk.public.n, sk.public.n_sq
    c = int(c)
    if not 0 < c < n_sq:
        raise ValueError("ciphertext outside (0, n^2)")
    l_val = (pow(c, sk.lam, n_sq) - 1) // n
    return (l_val * sk.mu) % n


def paillier_add(pk: PublicKey, c1: int, c2: int) -> int:
    """Ciphertext whose plaintext is the sum (mod n) of the operands'."""
    return (int(c1) * int(c2)) % pk.n_sq


def paillier_scalar_mul(pk: PublicKey, c: int, k: int) -> int:
    """Ciphertext whose plaintext is k times the operand's (mod n)."""
    k = int(k)
    if k < 0:
        raise ValueError("scalar must be nonnegative")
    return pow(int(c), k, pk.n_sq)


@dataclass(frozen=True)
class FixedPointCodec:
    """Maps reals with |v| <= max_magnitude into Z_n at resolution 1/F.

    Negative values encode as n - |round(v*F)|; decoding treats residues
    above n/2 as negative. Sums stay decodable while the total magnitude
    is below n / (2F); `max_terms` reports how many worst-case encodings
    that allows.
    """

    n: int
    scale_bits: int = 40
    max_magnitude: float = 2.0**20

    def __post_init__(self):
        if self.scale_bits < 1:
            raise ValueError("scale_bits must be >= 1")
        if self.max_magnitude <= 0:
            raise ValueError("max_magnitude must be positive")
        if self.max_terms < 1:
            raise ValueError("modulus too small for this codec")

    @property
    def factor(self) -> int:
        return 1 << self.scale_bits

    @property
    def max_terms(self) -> int:
        """How many worst-case encodings can be summed without wraparound."""
        limit = (self.n - 1) // 2
        per_term = int(self.max_magnitude * self.factor)
        return limit // per_term if per_term else 0


def encode_fixed(codec: FixedPointCodec, v: float) -> int:
    v = float(v)
    if not np.isfinite(v):
        raise ValueError("cannot encode a non-finite value")
    if abs(v) > codec.max_magnitude:
        raise ValueError(f"value {v} above codec magnitude {codec.max_magnitude}")
    mag = round(abs(v) * codec.factor)
    return (codec.n - mag) % codec.n if v < 0 else mag


def decode_fixed(codec: FixedPointCodec, z: int, expected_terms: int = 1) -> float:
    """Invert encode after up to expected_terms modular additions."""
    if expected_terms < 1:
        raise ValueError("expected_terms must be >= 1")
    if expected_terms > codec.max_terms:
        raise ValueError(
            f"{expected_terms} terms exceed codec capacity {codec.max_terms}"
        )
    z = int(z) % codec.n
    centered = z - codec.n if z > codec.n // 2 else z
    return centered / codec.factor


def save_public_key(path, pk: PublicKey) -> None:
    tensors = {"n": int_to_bytes_tensor(pk.n), "g": int_to_bytes_tensor(pk.g)}
    save_checkpoint(path, tensors, {"kind": "paillier_public", "bits": pk.bits})


def save_private_key(path, sk: PrivateKey) -> None:
    tensors = {
        "n": int_to_bytes_tensor(sk.public.n),
        "g": int_to_bytes_tensor(sk.public.g),
        "lam": int_to_bytes_tensor(sk.lam),
        "mu": int_to_bytes_tensor(sk.mu),
    }
    save_checkpoint(
        path, tensors, {"kind": "paillier_private", "bits": sk.public.bits}
    )


def load_public_key(path) -> PublicKey:
    tensors, config = load_checkpoint(path)
    if config.get("kind") not in ("paillier_public", "paillier_private"):
        raise ValueError("file does not hold a key")
    return PublicKey(
        n=bytes_tensor_to_int(tensors["n"]), g=bytes_tensor_to_int(tensors["g"])
    )


def load_private_key(path) -> PrivateKey:
    tensors, config = load_checkpoint(path)
    if config.get("kind") != "paillier_private":
        raise ValueError("file does not hold a private key")
    public = PublicKey(
        n=bytes_tensor_to_int(tensors["n"]), g=bytes_tensor_to_int(tensors["g"])
    )
    return PrivateKey(
        lam=bytes_tensor_to_int(tensors["lam"]),
        mu=bytes_tensor_to_int(tensors["mu"]),
        public=public,
    )
