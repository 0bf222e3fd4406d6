"""Discrete-event simulation of the attestation protocol on mesh networks."""

from .adversary import AdversaryConfig, Eavesdropper, PhysicalCapture, RemoteTamper
from .delays import TABLE_I, DelayModel, auto_schedule
from .engine import Engine
from .mobility import RandomWaypoint
from .scenario import (MODE_FULL, MODE_PARTIAL, MODE_PHYSICAL, EpochMetrics, ScenarioMetrics, TimingPlan, plan_timing,
                       SelectionPolicy, run_scenario)
from .topology import GEOMETRIC_MESH, KARY_TREE, MOBILE, Topology, gen_topology

__all__ = [
    "AdversaryConfig", "Eavesdropper", "PhysicalCapture", "RemoteTamper", "TABLE_I", "DelayModel",
    "auto_schedule", "Engine", "RandomWaypoint", "MODE_FULL", "MODE_PARTIAL", "MODE_PHYSICAL",
    "EpochMetrics", "ScenarioMetrics", "TimingPlan", "plan_timing", "SelectionPolicy", "run_scenario", "GEOMETRIC_MESH", "KARY_TREE",
    "MOBILE", "Topology", "gen_topology",
]
