"""Swarm attestation with delayed key disclosure, plus a network simulator.

The protocol layers (``crypto``, ``keychain``, ``schedule``, ``wire``,
``prover``, ``verifier``, ``cluster_select``) are usable on their own;
``simnet`` drives them over simulated topologies and ``cli`` wraps it all
for batch runs.
"""

__version__ = "0.1.0"
