"""Small harness for feeding verifier broadcasts to provers by hand."""

from swarmattest import crypto, wire
from swarmattest.schedule import EpochSchedule
from swarmattest.verifier import provision_swarm

SCHED = EpochSchedule.from_durations([200, 300, 300, 2000], d=30, sync_error=10, t_att=5000)


def swarm(n=4, clusters=2, seed=b"t", **kw):
    return provision_swarm(n, clusters, SCHED, seed, **kw)


def epoch_packets(verifier, epoch=0, a_send=(1,), a_calc=()):
    """Verifier broadcasts of one epoch keyed by role, with their send times."""
    bcasts, _ = verifier.begin_epoch(epoch, a_send, a_calc)
    names = ("update", "request", "k1", "k2")
    return {name: (t, raw) for name, (t, raw) in zip(names, bcasts)}


def deliver(prover, pkts, order=("update", "request", "k1", "k2"), sender=0, lag=1.0):
    """Hand each named packet to ``prover`` shortly after it was sent; returns the effects."""
    return [prover.on_packet(pkts[name][1], pkts[name][0] + lag, sender) for name in order]


def oracle_aggregate(registry, provers, nonce, a_send):
    """XOR of every healthy asked device's attest, recomputed from the images."""
    acc, ids = 0, []
    for i, p in sorted(provers.items()):
        rec = registry.devices[i]
        if rec.clus_id not in a_send:
            continue
        if crypto.mac(p.k_t, p.memory_image) != rec.h_s:
            continue
        acc ^= int.from_bytes(crypto.hash(rec.h_s + nonce), "big")
        ids.append(i)
    return wire.AggregateReport(acc.to_bytes(32, "big"), tuple(ids))
