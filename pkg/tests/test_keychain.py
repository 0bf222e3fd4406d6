import hashlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from swarmattest import crypto
from swarmattest.errors import ChainTooShort, ForgedKey, StaleKey
from swarmattest.keychain import (KeyCursor, authenticate_key, generate_chain, hash_walk, open_rotation,
                                  recover_intermediate, rotate_commitment)


def sha(b):
    return hashlib.sha256(b).digest()


def test_three_link_chain():
    ch = generate_chain(b"seed", 3)
    assert ch.length == 3
    assert ch[0] == sha(sha(sha(ch[3])))
    assert ch.commitment == ch[0]


def test_minimal_chain():
    ch = generate_chain(b"seed", 1)
    assert ch[0] == sha(ch[1])


def test_chain_deterministic():
    assert generate_chain(b"x", 8) == generate_chain(b"x", 8)
    assert generate_chain(b"x", 8) != generate_chain(b"y", 8)


def test_chain_too_short():
    with pytest.raises(ChainTooShort):
        generate_chain(b"x", 0)


@given(st.binary(max_size=16), st.integers(1, 40), st.data())
def test_any_two_links(seed, j, data):
    ch = generate_chain(seed, j)
    a = data.draw(st.integers(0, j - 1))
    b = data.draw(st.integers(a + 1, j))
    assert hash_walk(ch[b], b - a) == ch[a]


def test_authenticate_single_and_double_hop():
    ch = generate_chain(b"s", 4)
    cur = KeyCursor(ch[0], 0)
    c1 = authenticate_key(cur, ch[1], 1)
    assert (c1.last_authenticated, c1.last_index) == (ch[1], 1)
    assert cur.last_index == 0  # input untouched
    c2 = authenticate_key(cur, ch[2], 2)
    assert c2.last_index == 2


def test_authenticate_rejects():
    ch = generate_chain(b"s", 4)
    cur = KeyCursor(ch[0], 0)
    with pytest.raises(ForgedKey):
        authenticate_key(cur, crypto.HashDRBG(1).read(32), 1)
    with pytest.raises(ForgedKey):
        authenticate_key(cur, ch[1], 2)  # right key, wrong index
    with pytest.raises(StaleKey):
        authenticate_key(KeyCursor(ch[2], 2), ch[1], 1)
    with pytest.raises(StaleKey):
        authenticate_key(KeyCursor(ch[2], 2), ch[2], 2)


@given(st.binary(min_size=32, max_size=32), st.integers(1, 6))
def test_off_chain_candidates_rejected(candidate, idx):
    ch = generate_chain(b"fuzz", 6)
    if candidate == ch[idx]:
        return
    with pytest.raises(ForgedKey):
        authenticate_key(KeyCursor(ch[0], 0), candidate, idx)


def test_recover_intermediate():
    ch = generate_chain(b"r", 4)
    k0 = KeyCursor(ch[0], 0)
    assert recover_intermediate(k0, ch[1], 1) == []
    assert recover_intermediate(k0, ch[2], 2) == [(1, sha(ch[2]))]
    regenerated = generate_chain(b"r", 4)
    assert recover_intermediate(k0, ch[3], 3) == [(1, regenerated[1]), (2, regenerated[2])]


def test_recovered_key_authenticates_buffered_packet():
    ch = generate_chain(b"r", 4)
    tag = crypto.mac(ch[1], b"buffered")
    (idx, k1), = recover_intermediate(KeyCursor(ch[0], 0), ch[2], 2)
    assert idx == 1 and crypto.mac_ok(k1, b"buffered", tag)


def test_rotation_round_trip_and_chain_swap():
    old, new = generate_chain(b"old", 4), generate_chain(b"new", 4)
    ct, tag = rotate_commitment(old.commitment, new.commitment, 3)
    installed = open_rotation(old.commitment, 3, ct, tag)
    assert installed == new.commitment
    assert authenticate_key(KeyCursor(installed, 0), new[2], 2).last_index == 2
    with pytest.raises(ForgedKey):
        authenticate_key(KeyCursor(old.commitment, 0), new[1], 1)


def test_rotation_wrong_key_or_epoch_ignored():
    old, new = generate_chain(b"old", 2), generate_chain(b"new", 2)
    ct, tag = rotate_commitment(old.commitment, new.commitment, 3)
    assert open_rotation(sha(b"other"), 3, ct, tag) is None
    assert open_rotation(old.commitment, 4, ct, tag) is None
