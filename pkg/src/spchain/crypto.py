"""Hashing and the deterministic simulated signature scheme.

Signatures are ``sha256(secret_key || message)``.  Verification looks the
secret up in the :class:`Keystore` registry, so a key pair that was never
registered (a forged identity) can never verify.  Anything that offers the
same ``sign``/``verify`` surface can be swapped in via :class:`SignatureScheme`.
"""
from __future__ import annotations

import hashlib
import random
from typing import Protocol

HASH_SIZE = 32
EMPTY_DIGEST = hashlib.sha256(b"").digest()


def hash_bytes(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def sign(secret_key: bytes, message: bytes) -> bytes:
    return hashlib.sha256(secret_key + message).digest()


def public_key_for(secret_key: bytes) -> bytes:
    return hashlib.sha256(b"pk:" + secret_key).digest()


class SignatureScheme(Protocol):
    def sign(self, secret_key: bytes, message: bytes) -> bytes: ...

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool: ...


class Keystore:
    """Registry of simulated key pairs held by the harness.

    ``verify`` results are memoised: every vote or digest is checked by many
    recipients, and the answer only depends on ``(pk, message, signature)``.
    """

    def __init__(self, seed: int = 0):
        self._rng = random.Random(seed)
        self._secrets: dict[bytes, bytes] = {}
        self._cache: dict[tuple[bytes, bytes, bytes], bool] = {}

    def generate(self) -> tuple[bytes, bytes]:
        """Create and register a key pair, returning ``(secret, public)``."""
        sk = self._rng.getrandbits(256).to_bytes(32, "big")
        pk = public_key_for(sk)
        self._secrets[pk] = sk
        return sk, pk

    def generate_unregistered(self) -> tuple[bytes, bytes]:
        sk = self._rng.getrandbits(256).to_bytes(32, "big")
        return sk, public_key_for(sk)

    def is_registered(self, public_key: bytes) -> bool:
        return public_key in self._secrets

    def sign(self, secret_key: bytes, message: bytes) -> bytes:
        return sign(secret_key, message)

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        key = (public_key, message, signature)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        sk = self._secrets.get(public_key)
        ok = sk is not None and sign(sk, message) == signature
        self._cache[key] = ok
        return ok


def verify(public_key: bytes, message: bytes, signature: bytes, keystore: Keystore) -> bool:
    return keystore.verify(public_key, message, signature)
