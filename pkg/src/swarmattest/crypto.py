"""Symmetric primitives used throughout the protocol.

The protocol is written against three abstract operations: a one-way hash,
a keyed MAC and a stream cipher.  They are bound here, and only here, to
SHA-256, HMAC-SHA-256 and AES-128-CTR.
"""

from __future__ import annotations

import hashlib
import hmac
import struct

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import EmptyKey

DIGEST_SIZE = 32
KEY16_SIZE = 16
KEY32_SIZE = 32

HASH_NAME = "SHA-256"
MAC_NAME = "HMAC-SHA-256"
CIPHER_NAME = "AES-128-CTR"

ZERO_DIGEST = bytes(DIGEST_SIZE)


def hash(data: bytes) -> bytes:  # noqa: A001 - mirrors the protocol's F
    return hashlib.sha256(data).digest()


def mac(key: bytes, msg: bytes) -> bytes:
    if not key:
        raise EmptyKey("MAC key must be non-empty")
    return hmac.new(key, msg, hashlib.sha256).digest()


def mac_ok(key: bytes, msg: bytes, tag: bytes) -> bool:
    """Constant-time tag comparison; an empty key never verifies."""
    if not key:
        return False
    return hmac.compare_digest(mac(key, msg), tag)


def _ctr(key: bytes, nonce_iv: bytes):
    if len(key) != KEY16_SIZE:
        raise ValueError(f"cipher key must be {KEY16_SIZE} bytes, got {len(key)}")
    if len(nonce_iv) != 16:
        raise ValueError("CTR initial counter block must be 16 bytes")
    return Cipher(algorithms.AES(key), modes.CTR(nonce_iv))


def encrypt(key: bytes, nonce_iv: bytes, plaintext: bytes) -> bytes:
    enc = _ctr(key, nonce_iv).encryptor()
    return enc.update(plaintext) + enc.finalize()


def decrypt(key: bytes, nonce_iv: bytes, ciphertext: bytes) -> bytes:
    dec = _ctr(key, nonce_iv).decryptor()
    return dec.update(ciphertext) + dec.finalize()


def derive_key16(*material: bytes) -> bytes:
    """First 16 bytes of the hash over the concatenated inputs."""
    if not any(material):
        raise ValueError("derive_key16 needs at least one non-empty input")
    return hash(b"".join(material))[:KEY16_SIZE]


def iv_for(epoch: int, sub_interval: int) -> bytes:
    """Counter block for a message: epoch and sub-interval, 8 bytes each."""
    return struct.pack(">QQ", epoch, sub_interval)


def xor_bytes(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


class HashDRBG:
    """Deterministic byte stream: SHA-256 over (seed || counter).

    Used for every protocol secret (keychain tips, fresh nonces, device
    keys) so that simulations are reproducible from a single seed.
    """

    def __init__(self, seed: bytes | int | str):
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "big", signed=True)
        elif isinstance(seed, str):
            seed = seed.encode()
        self._seed = hash(b"drbg" + seed)
        self._counter = 0

    def read(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            out += hash(self._seed + self._counter.to_bytes(8, "big"))
            self._counter += 1
        return bytes(out[:n])

    def fork(self, label: str) -> "HashDRBG":
        """Independent child stream; does not advance this one."""
        return HashDRBG(self._seed + label.encode())
