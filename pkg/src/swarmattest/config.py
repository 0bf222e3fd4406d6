"""Scenario configuration: a JSON document validated on load.

Layout (every section optional except ``topology``)::

    {
      "name": "demo",
      "topology": {"kind": "kary_tree", "devices": 6, "k": 2},
      "platform_mix": 1.0,
      "schedule": {"sub_intervals_ms": [200, 300, 300, 1500], "d_ms": 30, "sync_error_ms": 10},
      "delay": {"propagation": 17.0, "costs": {"A": {"mac_verify": 12.7}}},
      "adversary": {"t_adv_ms": 60000, "remote": [...], "physical": [...], "sophisticated": false},
      "selection": {"mode": "partial", "clusters": 8, "partial_share": 0.25},
      "epochs": 1,
      "seed": 0
    }

Omitting ``schedule`` sizes the epoch from the topology depth.  Errors are
raised as :class:`ConfigError` naming the dotted path of the bad field.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError, GenerationFailed
from .schedule import DEFAULT_D_MS, DEFAULT_SYNC_ERROR_MS, EpochSchedule
from .simnet.adversary import AdversaryConfig, PhysicalCapture, RemoteTamper
from .simnet.delays import TABLE_I, DelayModel
from .simnet.scenario import MODE_FULL, MODE_PARTIAL, MODE_PHYSICAL, SelectionPolicy, plan_timing
from .simnet.topology import GEOMETRIC_MESH, KARY_TREE, MOBILE, Topology, gen_topology

MODE_OPTIMIZED = "optimized"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TopologySpec(_Strict):
    kind: Literal["kary_tree", "geometric_mesh", "mobile"]
    devices: int = Field(ge=1)
    k: int = Field(default=2, ge=1)
    area_m: float = Field(default=999.0, gt=0)
    comm_range_m: float = Field(default=50.0, gt=0)
    stationary_fraction: float = Field(default=0.2, ge=0, le=1)
    speed_mps: float = Field(default=10.0, ge=0)
    tick_ms: float = Field(default=100.0, gt=0)


class ScheduleSpec(_Strict):
    sub_intervals_ms: tuple[float, float, float, float]
    t_att_ms: float | None = Field(default=None, gt=0)
    d_ms: float = Field(default=DEFAULT_D_MS, ge=0)
    sync_error_ms: float = Field(default=DEFAULT_SYNC_ERROR_MS, ge=0)


class RemoteSpec(_Strict):
    device: int = Field(ge=1)
    time_ms: float


class PhysicalSpec(_Strict):
    device: int = Field(ge=1)
    start_ms: float
    duration_ms: float = Field(gt=0)


class AdversarySpec(_Strict):
    t_adv_ms: float = Field(gt=0)
    remote: tuple[RemoteSpec, ...] = ()
    physical: tuple[PhysicalSpec, ...] = ()
    sophisticated: bool = False


class SelectionSpec(_Strict):
    mode: Literal["optimized", "full", "partial", "physical-only"] = MODE_OPTIMIZED
    clusters: int = Field(default=8, ge=1)
    partial_share: float = Field(default=0.25, gt=0, lt=1)
    a_send: tuple[int, ...] | None = None
    a_calc: tuple[int, ...] | None = None
    tr_cov: float = Field(default=1.0, ge=0, le=1)
    t_max_min: float = Field(default=60.0, gt=0)

    @model_validator(mode="after")
    def _ids_in_range(self):
        for name in ("a_send", "a_calc"):
            ids = getattr(self, name)
            if ids is not None and any(not 1 <= c <= self.clusters for c in ids):
                raise ValueError(f"{name} holds a cluster id outside 1..{self.clusters}")
        return self


class ScenarioConfig(_Strict):
    name: str = "scenario"
    topology: TopologySpec
    platform_mix: float = Field(default=1.0, ge=0, le=1)
    schedule: ScheduleSpec | None = None
    delay: dict = Field(default_factory=dict)
    adversary: AdversarySpec | None = None
    selection: SelectionSpec = SelectionSpec()
    epochs: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    image_size: int = Field(default=64, ge=1)

    def to_json(self) -> dict:
        return self.model_dump(mode="json")

    def digest(self) -> str:
        """Hex SHA-256 of the canonical JSON form; stamped on every output row."""
        canon = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_overrides(self, **fields) -> "ScenarioConfig":
        data = self.to_json()
        data.update({k: v for k, v in fields.items() if v is not None})
        return parse_config(data)


def _field_path(err: dict) -> str:
    return ".".join(str(p) for p in err["loc"]) or "<root>"


def parse_config(data) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(_field_path(first), first["msg"]) from None


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(data)


def set_path(data: dict, dotted: str, value) -> dict:
    """Copy of ``data`` with the entry at ``dotted`` (e.g. ``topology.k``) replaced."""
    out = copy.deepcopy(data)
    node = out
    *parents, leaf = dotted.split(".")
    for key in parents:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[leaf] = value
    return out


@dataclass
class BuiltScenario:
    """Everything :func:`run_scenario` needs, derived from a validated config."""
    config: ScenarioConfig
    topology: Topology
    schedule: EpochSchedule | None
    delay: DelayModel
    adversary: AdversaryConfig | None
    selection: SelectionPolicy
    t_att: float

    def run_kwargs(self) -> dict:
        cfg = self.config
        return dict(schedule=self.schedule, delay=self.delay, adversary=self.adversary,
                    selection=self.selection, epochs=cfg.epochs, seed=cfg.seed,
                    n_clusters=cfg.selection.clusters, image_size=cfg.image_size,
                    speed=cfg.topology.speed_mps / 1000.0, tick=cfg.topology.tick_ms)


def _selection(spec: SelectionSpec, n_clusters: int) -> SelectionPolicy:
    if spec.a_send is not None:
        return SelectionPolicy(a_send=spec.a_send, a_calc=spec.a_calc)
    if spec.mode == MODE_FULL:
        a_send = tuple(range(1, n_clusters + 1))
    elif spec.mode == MODE_PHYSICAL:
        a_send = ()
    elif spec.mode == MODE_PARTIAL:
        a_send = tuple(range(1, max(1, round(spec.partial_share * n_clusters)) + 1))
    else:
        return SelectionPolicy(a_calc=spec.a_calc, tr_cov=spec.tr_cov, t_max=spec.t_max_min)
    return SelectionPolicy(a_send=a_send, a_calc=spec.a_calc)


def build(cfg: ScenarioConfig) -> BuiltScenario:
    """Generate the topology and check cross-field constraints, T_att <= T_adv among them."""
    topo_spec = cfg.topology
    try:
        topo = gen_topology(topo_spec.kind, topo_spec.devices + 1, cfg.seed, k=topo_spec.k,
                            area=topo_spec.area_m, comm_range=topo_spec.comm_range_m,
                            stationary_fraction=topo_spec.stationary_fraction,
                            platform_mix=cfg.platform_mix)
    except (ValueError, GenerationFailed) as exc:
        raise ConfigError("topology", str(exc)) from None
    for plat, table in cfg.delay.get("costs", {}).items():
        unknown = set(table) - set(TABLE_I["A"])
        if unknown:
            raise ConfigError(f"delay.costs.{plat}", f"unknown operation(s) {sorted(unknown)}")
    try:
        delay = DelayModel().with_overrides(cfg.delay)
    except (TypeError, ValueError) as exc:
        raise ConfigError("delay", str(exc)) from None

    schedule = None
    if cfg.schedule is not None:
        s = cfg.schedule
        try:
            schedule = EpochSchedule.from_durations(s.sub_intervals_ms, d=s.d_ms, sync_error=s.sync_error_ms,
                                                    t_att=s.t_att_ms)
        except ValueError as exc:
            raise ConfigError("schedule", str(exc)) from None
        t_att = schedule.t_att
    else:
        t_att = plan_timing(topo, delay, n_clusters=cfg.selection.clusters).schedule.t_att

    n_dev = topo_spec.devices
    adversary = None
    if cfg.adversary is not None:
        a = cfg.adversary
        if t_att > a.t_adv_ms:
            raise ConfigError("adversary.t_adv_ms", f"epoch length {t_att:.3f} ms exceeds T_adv {a.t_adv_ms} ms")
        for i, r in enumerate(a.remote):
            if r.device > n_dev:
                raise ConfigError(f"adversary.remote.{i}.device", f"no device {r.device} in a swarm of {n_dev}")
        for i, p in enumerate(a.physical):
            if p.device > n_dev:
                raise ConfigError(f"adversary.physical.{i}.device", f"no device {p.device} in a swarm of {n_dev}")
        try:
            adversary = AdversaryConfig(
                a.t_adv_ms, [RemoteTamper(r.device, r.time_ms) for r in a.remote],
                [PhysicalCapture(p.device, p.start_ms, p.duration_ms) for p in a.physical], a.sophisticated)
        except ValueError as exc:
            raise ConfigError("adversary.physical", str(exc)) from None
    n_clusters = min(cfg.selection.clusters, n_dev)
    return BuiltScenario(cfg, topo, schedule, delay, adversary, _selection(cfg.selection, n_clusters), t_att)


__all__ = ["ScenarioConfig", "TopologySpec", "ScheduleSpec", "AdversarySpec", "SelectionSpec", "RemoteSpec",
           "PhysicalSpec", "BuiltScenario", "parse_config", "load_config", "build", "set_path",
           "MODE_OPTIMIZED", "KARY_TREE", "GEOMETRIC_MESH", "MOBILE"]
