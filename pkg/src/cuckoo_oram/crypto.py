"""Seed chains, SHA-256 cuckoo locations and cell encryption."""

import hashlib
import os
from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import _kernels
from .errors import IntegrityError, UsageError

MASK64 = (1 << 64) - 1
NONCE_BYTES = 12


@dataclass(frozen=True)
class Seed:
    value: int
    chain_index: int


def derive_seed(master_seed, chain_index):
    """Value at position ``chain_index`` of the SHA-256 chain rooted at ``master_seed``.

    Position 0 is the master seed itself. Position 1 hashes its 8-byte
    big-endian encoding; every later position hashes the previous full
    32-byte digest. Each value is the first 8 digest bytes, big-endian.
    """
    if chain_index < 0:
        raise UsageError("chain_index must be nonnegative")
    chain = SeedChain.start(master_seed)
    for _ in range(chain_index):
        chain = chain.advance()
    return Seed(chain.value, chain_index)


@dataclass(frozen=True)
class SeedChain:
    """Cursor into a seed chain; ``head`` is the raw bytes hashed next."""

    head: bytes
    position: int

    @classmethod
    def start(cls, master_seed):
        return cls((master_seed & MASK64).to_bytes(8, "big"), 0)

    @property
    def value(self):
        return int.from_bytes(self.head[:8], "big")

    def advance(self):
        return SeedChain(hashlib.sha256(self.head).digest(), self.position + 1)

    def take(self, count):
        """Advance ``count`` times, returning the new cursor and the seeds passed."""
        seeds = []
        chain = self
        for _ in range(count):
            chain = chain.advance()
            seeds.append(chain.value)
        return chain, seeds


def prf_location(seed, x, m):
    """SHA256(x_be64 || seed_be64), read as a big-endian integer, mod m."""
    if m < 1:
        raise UsageError("m must be at least 1")
    value = seed.value if isinstance(seed, Seed) else seed
    digest = hashlib.sha256(
        (x & MASK64).to_bytes(8, "big") + (value & MASK64).to_bytes(8, "big")
    ).digest()
    return int.from_bytes(digest, "big") % m


def prf_locations(seed, xs, m):
    """Vectorised ``prf_location`` over an integer array."""
    if m < 1:
        raise UsageError("m must be at least 1")
    value = seed.value if isinstance(seed, Seed) else seed
    xs = np.asarray(xs, dtype=np.int64)
    if m >= 1 << 48:
        return np.array([prf_location(value, int(x), m) for x in xs], dtype=np.int64)
    return _kernels.batch_locations(xs, value & MASK64, m)


@dataclass(frozen=True, slots=True)
class Cell:
    ciphertext: bytes
    nonce: bytes


def _nonce(rng):
    if rng is None:
        return os.urandom(NONCE_BYTES)
    return rng.bytes(NONCE_BYTES)


def generate_key(rng=None):
    """A fresh 128-bit group key."""
    return os.urandom(16) if rng is None else rng.bytes(16)


def encrypt(key, plaintext, rng=None):
    """AES-GCM under ``key`` with a fresh random nonce."""
    nonce = _nonce(rng)
    return Cell(AESGCM(key).encrypt(nonce, plaintext, None), nonce)


def decrypt(key, cell):
    try:
        return AESGCM(key).decrypt(cell.nonce, cell.ciphertext, None)
    except (InvalidTag, ValueError, TypeError) as exc:
        raise IntegrityError("cell failed authentication") from exc


class AesGcmCipher:
    """Authenticated randomized encryption; the default cell cipher."""

    name = "aesgcm"

    def __init__(self, key, rng=None):
        self._aead = AESGCM(key)
        self._rng = rng

    def encrypt(self, plaintext):
        nonce = _nonce(self._rng)
        return Cell(self._aead.encrypt(nonce, plaintext, None), nonce)

    def decrypt(self, cell):
        try:
            return self._aead.decrypt(cell.nonce, cell.ciphertext, None)
        except (InvalidTag, ValueError, TypeError) as exc:
            raise IntegrityError("cell failed authentication") from exc


class TransparentCipher:
    """Debug cipher: plaintext in the clear plus a random nonce.

    Cells still differ on every write, which is all the trace tooling
    needs; it provides no confidentiality.
    """

    name = "transparent"

    def __init__(self, key=None, rng=None):
        self._rng = rng

    def encrypt(self, plaintext):
        return Cell(bytes(plaintext), _nonce(self._rng))

    def decrypt(self, cell):
        return cell.ciphertext


CIPHERS = {"aesgcm": AesGcmCipher, "transparent": TransparentCipher}


def make_cipher(name, key, rng=None):
    try:
        return CIPHERS[name](key, rng)
    except KeyError:
        raise UsageError(f"unknown cipher {name!r}") from None
