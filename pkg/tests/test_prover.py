import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import SCHED, deliver, epoch_packets, swarm
from swarmattest import crypto, wire
from swarmattest.prover import (OP_HPRIME, apply_nonce_update, attest_value, derive_kenc, group_key)
from swarmattest.simnet.adversary import tamper_image


def test_first_copy_buffered_and_relayed_second_dropped():
    v, ps = swarm()
    pkts = epoch_packets(v)
    p = ps[1]
    t, raw = pkts["update"]
    fx = p.on_packet(raw, t + 1, 0)
    assert fx.sends == [(0, None, raw, True)]
    assert p.buffer[1]
    fx2 = p.on_packet(raw, t + 2, 3)
    assert fx2.sends == [] and p.stats.duplicates == 1


def test_late_packet_dropped():
    v, ps = swarm()
    pkts = epoch_packets(v)
    p = ps[1]
    _, raw = pkts["update"]
    p.on_packet(raw, SCHED.disclosure_time(0, 1) + 5, 0)
    assert p.stats.late == 1 and not p.buffer


def test_nonce_update_is_ordered_hash():
    n0, a, b = crypto.hash(b"0"), crypto.hash(b"a"), crypto.hash(b"b")
    assert apply_nonce_update(n0, a) == crypto.hash(n0 + a)
    assert apply_nonce_update(apply_nonce_update(n0, a), b) != apply_nonce_update(apply_nonce_update(n0, b), a)


def test_full_epoch_synchronises_with_verifier():
    v, ps = swarm()
    pkts = epoch_packets(v)
    p = ps[1]
    fxs = deliver(p, pkts)
    assert p.synchronized and p.nonce == v.nonce and p.par_id == 0
    ack = [raw for fx in fxs for _, dest, raw, _ in fx.sends if dest == 0]
    assert len(ack) == 1
    msg = wire.parse(ack[0])
    assert (msg.child, msg.parent) == (1, 0)
    assert wire.verify(msg, group_key(v.k_0, v.nonce))


def test_kenc_agrees_and_stale_nonce_fails():
    v, ps = swarm()
    nonce_before = v.nonce
    pkts = epoch_packets(v)
    p = ps[1]
    p.nonce = crypto.hash(b"stale")  # missed an earlier update
    deliver(p, pkts)
    assert not p.synchronized and p.stats.undecryptable == 1
    assert derive_kenc(v.chain[2], v.nonce_after_first) != derive_kenc(v.chain[2], nonce_before)


def test_key_alone_does_not_open_request():
    v, ps = swarm()
    pkts = epoch_packets(v)
    req = wire.parse(pkts["request"][1])
    k2 = v.chain[2]
    # an outsider knows K_2 and the transcript, but not the group nonce
    plain = crypto.decrypt(derive_kenc(k2, crypto.hash(b"guess")), crypto.iv_for(0, 1), req.ciphertext)
    try:
        wire.AttestRequestBody.decode(plain)
        opened = True
    except ValueError:
        opened = False
    assert not opened


def test_missed_update_breaks_group_mac():
    v, ps = swarm()
    pkts = epoch_packets(v)
    good, bad = ps[1], ps[2]
    deliver(good, pkts)
    deliver(bad, pkts, order=("request", "k1", "k2"))  # never heard the nonce update
    assert good.synchronized and not bad.synchronized
    ack = wire.seal(wire.AckMsg(0, 1, 2), good.group_key)
    assert not wire.verify(ack, bad.group_key)


def test_missed_key_recovered():
    """Missing K_1 but getting K_2 ends in the same state as hearing everything."""
    v, ps = swarm()
    pkts = epoch_packets(v)
    a, b = ps[1], ps[2]
    deliver(a, pkts)
    deliver(b, pkts, order=("update", "request", "k2"))
    assert b.stats.recovery_used and b.stats.recovered_keys == 1
    assert (a.nonce, a.synchronized, a.cursor.last_index) == (b.nonce, b.synchronized, b.cursor.last_index)
    assert a.request == b.request


def test_earliest_sender_becomes_parent():
    v, ps = swarm()
    pkts = epoch_packets(v)
    p = ps[3]
    deliver(p, pkts, order=("update", "request", "k1"))
    t, raw = pkts["k2"]
    p.on_packet(raw, t + 5, 2)
    p.on_packet(raw, t + 6, 1)
    assert p.par_id == 2 and p.upstream == [2, 1]


def test_no_key_no_parent():
    v, ps = swarm()
    pkts = epoch_packets(v)
    p = ps[3]
    deliver(p, pkts, order=("update", "request", "k1"))
    assert p.par_id is None
    fx = p.on_timer("child_wait", 0)
    assert fx.sends == []


def _leaf_report(p):
    fx = p.on_timer("ack_window", 0)
    raws = [raw for _, _, raw, _ in fx.sends]
    assert len(raws) == 1
    return wire.parse(raws[0])


def test_healthy_leaf_report():
    v, ps = swarm()
    pkts = epoch_packets(v, a_send=(1,))
    p = ps[1]
    deliver(p, pkts)
    rep = _leaf_report(p)
    assert rep.presence.ids() == [1]
    assert rep.aggregate.ids == (1,)
    assert rep.aggregate.attest_xor == crypto.hash(crypto.mac(p.k_t, p.memory_image) + v.nonce)
    assert wire.verify(rep, group_key(v.k_0, v.nonce))


def test_tampered_leaf_reports_presence_only():
    v, ps = swarm()
    p = ps[1]
    p.memory_image = tamper_image(p.memory_image, 0)
    p.h_prime = crypto.mac(p.k_t, p.memory_image)
    pkts = epoch_packets(v, a_send=(1,))
    deliver(p, pkts)
    rep = _leaf_report(p)
    assert rep.presence.ids() == [1]
    assert rep.aggregate == wire.AggregateReport()


def test_unasked_cluster_reports_presence_only():
    v, ps = swarm(n=4, clusters=2)
    pkts = epoch_packets(v, a_send=(1,))
    p = ps[4]  # cluster 2
    deliver(p, pkts)
    assert _leaf_report(p).aggregate.ids == ()


def test_parent_folds_children():
    v, ps = swarm(n=3, clusters=1)
    pkts = epoch_packets(v, a_send=(1,))
    parent, c1, c2 = ps[1], ps[2], ps[3]
    deliver(parent, pkts)
    for c in (c1, c2):
        deliver(c, pkts, order=("update", "request", "k1"))
        t, raw = pkts["k2"]
        fx = c.on_packet(raw, t + 10, 1)
        ack = next(r for _, dest, r, _ in fx.sends if dest == 1)
        parent.on_packet(ack, t + 20, c.id)
    assert parent.children == {2, 3}
    parent.on_timer("ack_window", 0)
    out = []
    for c in (c1, c2):
        rep_raw = [r for _, _, r, _ in c.on_timer("ack_window", 0).sends][0]
        fx = parent.on_packet(rep_raw, 0, c.id)
        out.extend(r for _, _, r, _ in fx.sends)
    rep = wire.parse(out[0])
    expect = 0
    for i in (1, 2, 3):
        expect ^= int.from_bytes(attest_value(v.registry.devices[i].h_s, v.nonce), "big")
    assert rep.aggregate.ids == (1, 2, 3)
    assert rep.aggregate.attest_xor == expect.to_bytes(32, "big")
    assert rep.presence.ids() == [1, 2, 3]


def test_late_report_forwarded_after_own_report():
    v, ps = swarm(n=3, clusters=1)
    pkts = epoch_packets(v, a_send=(1,))
    a, b = ps[1], ps[2]
    deliver(a, pkts)
    deliver(b, pkts, order=("update", "request", "k1"))
    b.on_packet(pkts["k2"][1], pkts["k2"][0] + 3, 1)
    a.on_timer("ack_window", 0)  # a reports alone, b never acked
    rep_raw = [r for _, _, r, _ in b.on_timer("ack_window", 0).sends][0]
    fx = a.on_packet(rep_raw, 0, 2)
    assert a.stats.forwarded == 1
    assert fx.sends[0][1][0] == 0 and fx.sends[0][2] == rep_raw


def test_a_calc_recomputes_hprime_in_background():
    v, ps = swarm()
    pkts = epoch_packets(v, a_send=(), a_calc=(1,))
    p = ps[1]
    p.memory_image = tamper_image(p.memory_image, 1)
    deliver(p, pkts)
    fx = p.on_timer("ack_window", 0)
    assert OP_HPRIME in fx.ops
    assert p.h_prime == crypto.mac(p.k_t, p.memory_image) != p.h_s


def test_storage_block_sizes():
    v, ps = swarm()
    assert len(ps[1].persistent_block()) == 153
    assert len(ps[1].mutable_block()) == 64


def _feed_rotation(provers, msgs):
    for raw, _ in msgs:
        for p in provers.values():
            p.on_packet(raw, 0, 0)


def test_secret_update_variants():
    v, ps = swarm(n=9, clusters=3)
    pkts = epoch_packets(v, a_send=(1, 2, 3))
    for p in ps.values():
        deliver(p, pkts)
    captured = ps[4]  # cluster 2
    old = (captured.nonce, captured.k_0, captured.k_c)
    msgs = v.rotate_group_secrets({4})
    kinds = [(wire.secret_update_header(r)[1:], dep) for r, dep in msgs]
    assert kinds == [((wire.VARIANT_A, 1), None), ((wire.VARIANT_A, 3), None),
                     ((wire.VARIANT_B, 2), None), ((wire.VARIANT_A, 2), 2)]
    others = {i: p for i, p in ps.items() if i != 4}
    _feed_rotation(others, msgs)
    for p in others.values():
        assert (p.nonce, p.k_0) == (v.nonce, v.k_0)
    # the captured device holds only stale secrets and learns nothing
    _feed_rotation({4: captured}, msgs)
    assert (captured.nonce, captured.k_0, captured.k_c) == old


def test_fully_compromised_cluster_gets_nothing():
    v, ps = swarm(n=6, clusters=3)
    with pytest.raises(ValueError):
        v.rotate_group_secrets({3, 4})  # nothing to rotate before the first epoch
    epoch_packets(v)
    msgs = v.rotate_group_secrets({3, 4})
    assert all(wire.secret_update_header(r)[2] != 2 for r, _ in msgs)
    assert len(msgs) == 2


def test_commitment_rotation_installs_next_chain():
    v, ps = swarm()
    pkts = epoch_packets(v)
    p = ps[1]
    deliver(p, pkts)
    next_k0 = v.next_chain.commitment
    p.on_packet(v.rotate_commitment_msg(), 0, 0)
    assert p.k_0 == next_k0 == v.k_0


@given(st.integers(1, 6), st.permutations(["update", "request", "k1"]).filter(
    lambda o: o.index("update") < o.index("k1")))
def test_arrival_order_before_k2_does_not_matter(n_copies, order):
    """Any order works as long as the update is buffered before its key arrives."""
    v, ps = swarm(n=2, clusters=1)
    pkts = epoch_packets(v)
    p = ps[1]
    for _ in range(n_copies):
        deliver(p, pkts, order=order)
    deliver(p, pkts, order=("k2",))
    assert p.synchronized and p.nonce == v.nonce
