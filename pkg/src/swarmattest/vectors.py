"""Crypto conformance vectors checked by ``swarmattest verify-vectors``.

Published vectors pin the primitives (FIPS 180-2 SHA-256, RFC 4231
HMAC-SHA-256, SP 800-38A AES-128-CTR).  Protocol constructions built on top
of them are recomputed here with :mod:`hashlib` and :mod:`hmac` directly, so
a regression in either layer shows up as a mismatch.
"""

from __future__ import annotations

import hashlib
import hmac
import struct

from . import crypto, wire
from .keychain import generate_chain, rotate_commitment

PUBLISHED = [
    # (name, primitive, inputs, expected hex)
    ("sha256-abc", "hash", {"data": "616263"},
     "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"),
    ("sha256-empty", "hash", {"data": ""},
     "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
    ("hmac-rfc4231-1", "mac", {"key": "0b" * 20, "data": "4869205468657265"},
     "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"),
    ("hmac-rfc4231-2", "mac", {"key": "4a656665",
                               "data": "7768617420646f2079612077616e7420666f72206e6f7468696e673f"},
     "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"),
    ("aes128ctr-sp800-38a-f51", "encrypt",
     {"key": "2b7e151628aed2a6abf7158809cf4f3c", "iv": "f0f1f2f3f4f5f6f7f8f9fafbfcfdfeff",
      "data": "6bc1bee22e409f96e93d7e117393172aae2d8a571e03ac9c9eb76fac45af8e51"},
     "874d6191b620e3261bef6864990db6ce9806f66b7970fdff8617187bb9fffdff"),
]


def _published():
    for name, prim, args, expected in PUBLISHED:
        b = {k: bytes.fromhex(v) for k, v in args.items()}
        if prim == "hash":
            got = crypto.hash(b["data"])
        elif prim == "mac":
            got = crypto.mac(b["key"], b["data"])
        else:
            got = crypto.encrypt(b["key"], b["iv"], b["data"])
            if crypto.decrypt(b["key"], b["iv"], got) != b["data"]:
                yield name, False
                continue
        yield name, got.hex() == expected


def _derived():
    sha = lambda d: hashlib.sha256(d).digest()  # noqa: E731

    chain = generate_chain(b"conformance-seed", 16)
    links = all(chain.keys[i - 1] == sha(chain.keys[i]) for i in range(1, len(chain.keys)))
    yield "chain-links", links

    k = sha(b"k")
    yield "derive-key16", crypto.derive_key16(k, b"n") == sha(k + b"n")[:16]
    yield "iv-layout", crypto.iv_for(5, 3) == (5).to_bytes(8, "big") + (3).to_bytes(8, "big")

    old, new = sha(b"old"), sha(b"new")
    ct, tag = rotate_commitment(old, new, 9)
    expect_tag = hmac.new(old, struct.pack(">BI", 7, 9) + ct, hashlib.sha256).digest()
    yield "commit-rotate-mac", tag == expect_tag

    k16 = k[:16]
    block = wire.pack_persistent_block(1, 0, 1, k16, k16, k16, k, k, k)
    yield "persistent-block-153", len(block) == 153
    yield "mutable-block-64", len(wire.pack_mutable_block(k, k)) == 64


def check_all() -> list[tuple[str, bool]]:
    """Every vector as ``(name, passed)``."""
    return [*_published(), *_derived()]
