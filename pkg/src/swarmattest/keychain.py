"""One-way keychain: generation, delayed-disclosure authentication, recovery.

The chain is built backwards from a random tip ``K_j`` by repeated hashing,
so ``K_{i-1} = F(K_i)`` and ``K_0`` is the commitment every prover holds.
Keys are disclosed in the forward direction ``K_1, K_2, ...``; a prover
can check any later key by hashing it back to the last key it accepted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from . import crypto
from .errors import ChainTooShort, ForgedKey, StaleKey

KEYS_PER_EPOCH = 4


@dataclass(frozen=True)
class KeyChain:
    keys: tuple[bytes, ...]  # K_0 .. K_j

    @property
    def length(self) -> int:
        return len(self.keys) - 1

    @property
    def commitment(self) -> bytes:
        return self.keys[0]

    def __getitem__(self, i: int) -> bytes:
        return self.keys[i]


@dataclass
class KeyCursor:
    last_authenticated: bytes
    last_index: int = 0


def generate_chain(seed: bytes, j: int) -> KeyChain:
    if j < 1:
        raise ChainTooShort(f"chain length must be >= 1, got {j}")
    tip = crypto.HashDRBG(seed).read(crypto.KEY32_SIZE)
    keys = [tip]
    for _ in range(j):
        keys.append(crypto.hash(keys[-1]))
    keys.reverse()
    return KeyChain(tuple(keys))


def hash_walk(key: bytes, steps: int) -> bytes:
    for _ in range(steps):
        key = crypto.hash(key)
    return key


def authenticate_key(cursor: KeyCursor, candidate: bytes, claimed_index: int) -> KeyCursor:
    """Return the advanced cursor, or raise StaleKey / ForgedKey.

    The input cursor is left untouched.
    """
    gap = claimed_index - cursor.last_index
    if gap <= 0:
        raise StaleKey(f"index {claimed_index} not after {cursor.last_index}")
    if len(candidate) != crypto.KEY32_SIZE or hash_walk(candidate, gap) != cursor.last_authenticated:
        raise ForgedKey(f"key for index {claimed_index} does not reach the cursor")
    return KeyCursor(candidate, claimed_index)


def recover_intermediate(before: KeyCursor, accepted: bytes, accepted_index: int) -> list[tuple[int, bytes]]:
    """Keys skipped between ``before`` and a newly accepted key, ascending."""
    out = []
    key = accepted
    for idx in range(accepted_index - 1, before.last_index, -1):
        key = crypto.hash(key)
        out.append((idx, key))
    out.reverse()
    return out


ROTATE_SUB_INTERVAL = 3


def _rotate_header(epoch: int) -> bytes:
    return struct.pack(">BI", 7, epoch)


def rotate_commitment(old_k0: bytes, new_k0: bytes, epoch: int) -> tuple[bytes, bytes]:
    """Encrypt-then-MAC the next commitment under the current one.

    Returns ``(ciphertext, tag)``; the wire module frames them.
    """
    ct = crypto.encrypt(crypto.derive_key16(old_k0), crypto.iv_for(epoch, ROTATE_SUB_INTERVAL), new_k0)
    tag = crypto.mac(old_k0, _rotate_header(epoch) + ct)
    return ct, tag


def open_rotation(k0: bytes, epoch: int, ciphertext: bytes, tag: bytes) -> bytes | None:
    """Inverse of :func:`rotate_commitment`; None if the tag does not verify."""
    if not crypto.mac_ok(k0, _rotate_header(epoch) + ciphertext, tag):
        return None
    return crypto.decrypt(crypto.derive_key16(k0), crypto.iv_for(epoch, ROTATE_SUB_INTERVAL), ciphertext)
