import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import deliver, epoch_packets, swarm
from swarmattest import crypto, wire
from swarmattest.prover import attest_value
from swarmattest.verifier import (HEALTHY, NOT_ASKED, PHYSICAL, REMOTE, UNVERIFIED, DeviceRegistry,
                                  contiguous_clusters, verify_reports)


def _aggregate(v, ids):
    acc = 0
    for i in ids:
        acc ^= int.from_bytes(attest_value(v.registry.devices[i].h_s, v.nonce), "big")
    return wire.AggregateReport(acc.to_bytes(32, "big"), tuple(sorted(ids)))


def test_contiguous_clusters():
    assert contiguous_clusters(8, 4) == {1: 1, 2: 1, 3: 2, 4: 2, 5: 3, 6: 3, 7: 4, 8: 4}
    sizes = {}
    for c in contiguous_clusters(100_000, 8).values():
        sizes[c] = sizes.get(c, 0) + 1
    assert set(sizes.values()) == {12_500}
    with pytest.raises(ValueError):
        contiguous_clusters(3, 4)


def test_registry_must_partition():
    v, _ = swarm(n=4, clusters=2)
    reg = v.registry
    with pytest.raises(ValueError):
        DeviceRegistry({i: reg.devices[i] for i in (1, 2, 4)}, reg.clusters)


def test_physical_only_full_presence():
    v, _ = swarm(n=4, clusters=2)
    epoch_packets(v, a_send=())
    labels, ok = verify_reports(v.registry, v.nonce, wire.PresenceVector.of(4, range(1, 5)), None, ())
    assert ok and set(labels.values()) == {NOT_ASKED}


def test_labels_from_presence_and_aggregate():
    v, _ = swarm(n=6, clusters=2)
    epoch_packets(v, a_send=(1,))
    presence = wire.PresenceVector.of(6, [1, 2, 4, 5, 6])  # device 3 absent
    labels, ok = verify_reports(v.registry, v.nonce, presence, _aggregate(v, [1]), (1,))
    assert ok
    assert labels == {1: HEALTHY, 2: REMOTE, 3: PHYSICAL, 4: NOT_ASKED, 5: NOT_ASKED, 6: NOT_ASKED}


def test_aggregate_for_unasked_or_absent_device_rejected():
    v, _ = swarm(n=4, clusters=2)
    epoch_packets(v, a_send=(1,))
    full = wire.PresenceVector.of(4, range(1, 5))
    assert not verify_reports(v.registry, v.nonce, full, _aggregate(v, [1, 3]), (1,))[1]
    assert not verify_reports(v.registry, v.nonce, wire.PresenceVector.of(4, [2, 3, 4]),
                              _aggregate(v, [1]), (1,))[1]


@given(st.integers(0, 255), st.integers(0, 31))
def test_bit_flip_is_never_healthy(bit, byte):
    v, _ = swarm(n=4, clusters=2)
    epoch_packets(v, a_send=(1, 2))
    agg = _aggregate(v, [1, 2, 3, 4])
    xor = bytearray(agg.attest_xor)
    xor[byte] ^= 1 << (bit % 8)
    bad = wire.AggregateReport(bytes(xor), agg.ids)
    labels, ok = verify_reports(v.registry, v.nonce, wire.PresenceVector.of(4, range(1, 5)), bad, (1, 2))
    assert not ok
    assert HEALTHY not in labels.values()
    assert set(labels.values()) == {UNVERIFIED}


def test_eight_clusters_one_compromised():
    v, ps = swarm(n=16, clusters=8)
    epoch_packets(v)
    msgs = v.rotate_group_secrets({5})
    variants = [wire.secret_update_header(r)[1] for r, _ in msgs]
    assert variants.count(wire.VARIANT_A) == 8 and variants.count(wire.VARIANT_B) == 1
    deps = [(i, d) for i, (_, d) in enumerate(msgs) if d is not None]
    assert len(deps) == 1
    i, d = deps[0]
    assert wire.secret_update_header(msgs[d][0])[1] == wire.VARIANT_B
    assert wire.secret_update_header(msgs[i][0])[2] == wire.secret_update_header(msgs[d][0])[2] == 3


def test_nonce_lockstep_over_epochs():
    v, ps = swarm(n=2, clusters=1)
    p = ps[1]
    for e in range(4):
        pkts = epoch_packets(v, epoch=e)
        deliver(p, pkts)
        assert p.nonce == v.nonce
        assert p.group_key == v.group_key
        p.on_packet(v.rotate_commitment_msg(), 0, 0)
        assert p.k_0 == v.k_0


def test_report_collection_and_finish():
    v, ps = swarm(n=2, clusters=1)
    pkts = epoch_packets(v, a_send=(1,))
    p = ps[1]
    fxs = deliver(p, pkts)
    ack = next(raw for fx in fxs for _, dest, raw, _ in fx.sends if dest == 0)
    v.on_packet(ack, 0, 1)
    assert v.children == {1}
    v.on_timer("ack_window", 0)
    assert not v.complete
    rep = [raw for _, _, raw, _ in p.on_timer("ack_window", 0).sends][0]
    fx = v.on_packet(rep, 1234.0, 1)
    assert not v.complete  # device 2 is still missing from the vector
    v.on_timer("deadline", 5000.0)
    out = v.finish_epoch()
    assert out.labels == {1: HEALTHY, 2: PHYSICAL}
    assert out.verified and out.duration == 5000.0
    assert fx.notes == []


def test_forged_report_ignored():
    v, ps = swarm(n=1, clusters=1)
    epoch_packets(v, a_send=(1,))
    fake = wire.seal(wire.ReportUpMsg(0, 1, wire.PresenceVector.of(1, [1]), _aggregate(v, [1])),
                     crypto.hash(b"wrong"))
    v.on_packet(wire.serialize(fake), 0, 1)
    assert not v.child_reports
    out = v.finish_epoch()
    assert out.degenerate and out.labels == {1: PHYSICAL}


def test_duplicate_contribution_is_unverified():
    v, _ = swarm(n=2, clusters=1)
    epoch_packets(v, a_send=(1,))
    agg = _aggregate(v, [1])
    for sender in (1, 2):
        rep = wire.seal(wire.ReportUpMsg(0, sender, wire.PresenceVector.of(2, [1, 2]), agg), v.group_key)
        v.on_packet(wire.serialize(rep), 0, sender)
    out = v.finish_epoch()
    assert not out.verified and set(out.labels.values()) == {UNVERIFIED}
