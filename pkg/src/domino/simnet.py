"""Deterministic discrete-event simulation of the extended service set.

Access points emit beacons on their own cadence; hearability (which stations
receive which AP's beacons) is explicit scenario input, not computed from
geometry.  FUP broadcasts ride three legs: a wireless uplink from the sender
to its AP, a lossless wired backbone relay to every AP, and a wireless
downlink per BSS to each associated station.  Mobility scripts mutate
hearability and associations at scheduled times.

Everything is reproducible: a scenario plus seed yields a byte-identical
event sequence and trace.  Ties at equal true time break on (event kind,
node id, insertion order).
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .analysis import NodeInfo, Trace
from .engine import (
    AdjustOffset,
    AdjustRate,
    Engine,
    EngineConfig,
    Ignored,
    NodeRole,
    Paired,
    ParentChanged,
    QrefChanged,
)
from .timebase import VirtualClock
from .wire import Beacon, FupMessage, NodeId

SECOND_NS = 1_000_000_000


class ConfigurationError(Exception):
    """A scenario violates a structural invariant; message names the culprit."""


# --- scenario model ------------------------------------------------------------


@dataclass(frozen=True)
class ApSpec:
    node_id: NodeId
    beacon_period: int = 102_400_000  # 102.4 ms
    tsf_start: int = 0  # microseconds
    beacon_phase: int = 0  # ns offset of the first beacon

    def __post_init__(self):
        if self.beacon_period <= 0:
            raise ConfigurationError(
                f"ap {self.node_id}: beacon_period must be positive"
            )


@dataclass(frozen=True)
class StaSpec:
    node_id: NodeId
    role: NodeRole
    freq_error_ppm: float = 0.0
    gc_error_ns: Optional[int] = None
    engine: EngineConfig = field(default_factory=EngineConfig)
    initial_offset_ns: int = 0

    def __post_init__(self):
        if self.gc_error_ns is not None and not self.role.gc_capable:
            raise ConfigurationError(
                f"sta {self.node_id}: gc_error_ns set on a non-grandmaster-capable node"
            )


@dataclass
class Topology:
    aps: dict[NodeId, ApSpec]
    stas: dict[NodeId, StaSpec]
    association: dict[NodeId, NodeId]  # sta -> ap
    hearability: set[tuple[NodeId, NodeId]]  # (ap, sta)
    prop_delay: dict[tuple[NodeId, NodeId], int] = field(default_factory=dict)

    def validate(self) -> None:
        for ap, sta in self.hearability:
            if ap not in self.aps:
                raise ConfigurationError(f"hearability names unknown ap {ap}")
            if sta not in self.stas:
                raise ConfigurationError(f"hearability names unknown sta {sta}")
        for sta in self.stas:
            if sta not in self.association:
                raise ConfigurationError(f"sta {sta} has no association")
        for sta, ap in self.association.items():
            if sta not in self.stas:
                raise ConfigurationError(f"association names unknown sta {sta}")
            if ap not in self.aps:
                raise ConfigurationError(f"association names unknown ap {ap}")
            if (ap, sta) not in self.hearability:
                raise ConfigurationError(
                    f"association {sta} -> {ap} is outside hearability"
                )

    def hearers(self, ap: NodeId) -> list[NodeId]:
        return sorted(sta for a, sta in self.hearability if a == ap)

    def members(self, ap: NodeId) -> list[NodeId]:
        return sorted(sta for sta, a in self.association.items() if a == ap)

    def copy(self) -> "Topology":
        return Topology(
            aps=dict(self.aps),
            stas=dict(self.stas),
            association=dict(self.association),
            hearability=set(self.hearability),
            prop_delay=dict(self.prop_delay),
        )


@dataclass(frozen=True)
class MobilityEvent:
    time: int  # true time, ns
    action: str  # "add" | "remove"
    ap: NodeId
    sta: NodeId
    reassociate_to: Optional[NodeId] = None

    def __post_init__(self):
        if self.action not in ("add", "remove"):
            raise ConfigurationError(f"mobility action {self.action!r} unknown")


def apply_mobility(topology: Topology, event: MobilityEvent) -> None:
    pair = (event.ap, event.sta)
    if event.action == "add":
        topology.hearability.add(pair)
    if event.reassociate_to is not None:
        if (event.reassociate_to, event.sta) not in topology.hearability:
            raise ConfigurationError(
                f"mobility at {event.time}: re-association of {event.sta} to "
                f"{event.reassociate_to} is outside hearability"
            )
        topology.association[event.sta] = event.reassociate_to
    if event.action == "remove":
        topology.hearability.discard(pair)
        if topology.association.get(event.sta) == event.ap:
            raise ConfigurationError(
                f"mobility at {event.time}: removing {event.ap} -> {event.sta} "
                f"breaks the association invariant (re-associate first)"
            )


@dataclass(frozen=True)
class LossModel:
    wireless_loss_prob: float = 0.0
    beacon_loss_prob: Optional[float] = None  # defaults to wireless_loss_prob
    fup_loss_prob: Optional[float] = None  # defaults to wireless_loss_prob
    burst_mean_len: Optional[float] = None  # enables the two-state burst model
    burst_loss_prob: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        for name in ("wireless_loss_prob", "beacon_loss_prob", "fup_loss_prob"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"loss: {name}={value} outside [0, 1]")
        if self.burst_mean_len is not None:
            if self.burst_mean_len < 1.0:
                raise ConfigurationError("loss: burst_mean_len must be >= 1")
            if not 0.0 < self.burst_loss_prob <= 1.0:
                raise ConfigurationError("loss: burst_loss_prob outside (0, 1]")

    def prob_for(self, kind: str) -> float:
        if kind == "beacon" and self.beacon_loss_prob is not None:
            return self.beacon_loss_prob
        if kind.startswith("fup") and self.fup_loss_prob is not None:
            return self.fup_loss_prob
        return self.wireless_loss_prob


class LossProcess:
    """Stateful per-link loss draws; identical seeds reproduce identical drops.

    Without a burst length the drops are independent Bernoulli trials.  With
    one, each link runs a two-state chain: lossless in the good state, losing
    with burst_loss_prob in the bad state, tuned so the long-run loss rate
    still matches the configured probability.
    """

    GOOD, BAD = 0, 1

    def __init__(self, model: LossModel, seed: int):
        self.model = model
        self.rng = random.Random(f"{model.seed if model.seed is not None else seed}:loss")
        self.states: dict[tuple, int] = {}

    def dropped(self, kind: str, src: NodeId, dst: NodeId) -> bool:
        p = self.model.prob_for(kind)
        if self.model.burst_mean_len is None:
            return p > 0 and self.rng.random() < p
        if p <= 0:
            return False
        h = self.model.burst_loss_prob
        if p >= h:
            # Loss demand saturates the bad state: always bad.
            return self.rng.random() < h
        p_bg = 1.0 / self.model.burst_mean_len  # bad -> good
        pi_bad = p / h
        p_gb = pi_bad * p_bg / (1.0 - pi_bad)  # good -> bad
        key = (kind, src, dst)
        state = self.states.get(key, self.GOOD)
        roll = self.rng.random()
        state = (
            (self.BAD if roll < p_gb else self.GOOD)
            if state == self.GOOD
            else (self.GOOD if roll < p_bg else self.BAD)
        )
        self.states[key] = state
        return state == self.BAD and self.rng.random() < h


@dataclass
class Scenario:
    topology: Topology
    loss: LossModel = field(default_factory=LossModel)
    mobility: list[MobilityEvent] = field(default_factory=list)
    duration: int = 60 * SECOND_NS
    seed: int = 0
    name: str = "scenario"
    snapshot_period: int = 100_000_000  # 100 ms
    tick_period: int = 50_000_000  # 50 ms
    backbone_latency: int = 1_000_000  # 1 ms, FUP relay legs
    timestamp_jitter_ns: int = 50  # stddev of capture noise
    propagation_delay: int = 0  # default per hearability pair

    def validate(self) -> None:
        self.topology.validate()
        if self.duration <= 0:
            raise ConfigurationError("duration must be positive")
        if self.snapshot_period <= 0 or self.tick_period <= 0:
            raise ConfigurationError("snapshot and tick periods must be positive")
        max_beacon = max(
            (ap.beacon_period for ap in self.topology.aps.values()), default=0
        )
        for sta in self.topology.stas.values():
            if sta.engine.t_fup <= max_beacon:
                raise ConfigurationError(
                    f"sta {sta.node_id}: t_fup={sta.engine.t_fup} must be strictly "
                    f"longer than the largest beacon period {max_beacon}"
                )
        # Mobility must preserve invariants at every step, applied in the
        # same order the runtime will use.
        probe = self.topology.copy()
        for event in sorted(self.mobility, key=lambda e: (e.time, e.sta, e.ap)):
            if event.ap not in probe.aps or event.sta not in probe.stas:
                raise ConfigurationError(
                    f"mobility at {event.time} names unknown nodes"
                )
            apply_mobility(probe, event)
            probe.validate()


# --- event queue ----------------------------------------------------------------

# Tie-break ranks at equal true time: topology changes first, then message
# traffic, timers, and finally snapshots observing the settled instant.
RANK_MOBILITY = 0
RANK_BEACON_EMIT = 1
RANK_BEACON_DELIVER = 2
RANK_FUP_DELIVER = 3
RANK_TICK = 4
RANK_SNAPSHOT = 9


class EventQueue:
    def __init__(self):
        self._heap: list[tuple] = []
        self._seq = 0

    def push(self, t: int, rank: int, key: bytes, kind: str, payload) -> None:
        heapq.heappush(self._heap, (t, rank, key, self._seq, kind, payload))
        self._seq += 1

    def pop(self):
        return heapq.heappop(self._heap)

    def __len__(self):
        return len(self._heap)

    def snapshot_order(self) -> list[tuple]:
        """The full event sequence in dispatch order (for determinism checks)."""
        return sorted(self._heap)


def schedule_scenario(
    topology: Topology,
    loss: LossModel,
    mobility: Iterable[MobilityEvent],
    duration: int,
    seed: int,
    *,
    tick_period: int = 50_000_000,
    snapshot_period: int = 100_000_000,
) -> EventQueue:
    """Prime the queue with beacon emissions, ticks, mobility, and snapshots."""
    queue = EventQueue()
    for ap_id in sorted(topology.aps):
        spec = topology.aps[ap_id]
        t = spec.beacon_phase
        while t < duration:
            queue.push(t, RANK_BEACON_EMIT, ap_id.octets, "beacon_emit", ap_id)
            t += spec.beacon_period
    stas = sorted(topology.stas)
    for idx, sta_id in enumerate(stas):
        phase = (idx * tick_period) // max(len(stas), 1)
        t = phase
        while t < duration:
            queue.push(t, RANK_TICK, sta_id.octets, "tick", sta_id)
            t += tick_period
    for event in sorted(mobility, key=lambda e: (e.time, e.sta, e.ap)):
        queue.push(event.time, RANK_MOBILITY, event.sta.octets, "mobility", event)
    t = 0
    while t <= duration:
        queue.push(t, RANK_SNAPSHOT, b"", "snapshot", None)
        t += snapshot_period
    return queue


# --- delivery ---------------------------------------------------------------------


def deliver_beacon(
    beacon: Beacon,
    emit_t: int,
    topology: Topology,
    loss: LossProcess,
    default_prop_delay: int = 0,
) -> list[tuple[NodeId, int]]:
    """Stations that receive this beacon, with per-station arrival true time."""
    if beacon.ap not in topology.aps:
        raise ConfigurationError(f"beacon from unknown ap {beacon.ap}")
    delivered = []
    for sta in topology.hearers(beacon.ap):
        if loss.dropped("beacon", beacon.ap, sta):
            continue
        delay = topology.prop_delay.get((beacon.ap, sta), default_prop_delay)
        delivered.append((sta, emit_t + delay))
    return delivered


@dataclass(frozen=True)
class FupDelivery:
    delivered: tuple[tuple[NodeId, int], ...]
    uplink_ok: bool


def deliver_fup(
    msg: FupMessage,
    sender: NodeId,
    emit_t: int,
    topology: Topology,
    loss: LossProcess,
    backbone_latency: int = 1_000_000,
) -> FupDelivery:
    """Fan a FUP out across uplink, backbone, and per-BSS downlinks.

    The uplink is a single point of failure; the wired relay is lossless;
    each downlink delivery is an independent loss draw.  The sender never
    receives its own message.
    """
    sender_ap = topology.association.get(sender)
    if sender_ap is None:
        raise ConfigurationError(f"fup sender {sender} is not associated to any ap")
    if loss.dropped("fup_up", sender, sender_ap):
        return FupDelivery(delivered=(), uplink_ok=False)
    arrivals = []
    for ap_id in sorted(topology.aps):
        for sta in topology.members(ap_id):
            if sta == sender:
                continue
            if loss.dropped("fup_down", ap_id, sta):
                continue
            arrivals.append((sta, emit_t + backbone_latency))
    return FupDelivery(delivered=tuple(arrivals), uplink_ok=True)


# --- the simulation -----------------------------------------------------------------


@dataclass
class SimNode:
    spec: StaSpec
    engine: Engine
    clock: VirtualClock


def build_nodes(scenario: Scenario) -> dict[NodeId, SimNode]:
    nodes = {}
    for sta_id in sorted(scenario.topology.stas):
        spec = scenario.topology.stas[sta_id]
        cfg = spec.engine
        if spec.gc_error_ns is not None:
            cfg = replace(cfg, gc_error_ns=spec.gc_error_ns)
        engine = Engine(
            sta_id,
            spec.role,
            cfg,
            rng=random.Random(f"{scenario.seed}:engine:{sta_id.hex()}"),
        )
        clock = VirtualClock(
            freq_error_ppm=spec.freq_error_ppm,
            offset_correction=spec.initial_offset_ns,
        )
        nodes[sta_id] = SimNode(spec=spec, engine=engine, clock=clock)
    return nodes


class Simulation:
    def __init__(self, scenario: Scenario, queue: EventQueue, nodes: dict[NodeId, SimNode]):
        scenario.validate()
        self.scenario = scenario
        self.queue = queue
        self.nodes = nodes
        self.topology = scenario.topology.copy()
        self.loss = LossProcess(scenario.loss, scenario.seed)
        self.noise_rng = random.Random(f"{scenario.seed}:noise")
        self.trace = Trace(
            nodes={
                sta_id.hex(): NodeInfo(
                    node_id=sta_id.hex(),
                    kind=node.spec.role.kind.value,
                    gc_capable=node.spec.role.gc_capable,
                    q_local=node.spec.role.q_local,
                    freq_error_ppm=node.spec.freq_error_ppm,
                    t_fup=node.engine.config.t_fup,
                )
                for sta_id, node in nodes.items()
            },
            aps=[ap.hex() for ap in sorted(scenario.topology.aps)],
            duration=scenario.duration,
            seed=scenario.seed,
            snapshot_period=scenario.snapshot_period,
        )

    # -- helpers --

    def _capture_noise(self) -> int:
        sigma = self.scenario.timestamp_jitter_ns
        if sigma <= 0:
            return 0
        return round(self.noise_rng.gauss(0.0, sigma))

    def _apply_actions(self, sta_id: NodeId, now: int, actions) -> dict:
        """Apply engine actions to the node's clock; returns intake metadata."""
        node = self.nodes[sta_id]
        meta = {"matches": 0, "ignored": ""}
        for act in actions:
            if isinstance(act, AdjustOffset):
                before = node.clock.read(now)
                node.clock.apply_offset(act.offset_ns)
                after = node.clock.read(now)
                self.trace.add(
                    now,
                    sta_id.hex(),
                    "offset",
                    offset_ns=act.offset_ns,
                    warp_ns=after - before,
                )
            elif isinstance(act, AdjustRate):
                total = node.clock.apply_rate(act.rate, now)
                self.trace.add(
                    now, sta_id.hex(), "rate", factor=act.rate, total=total
                )
            elif isinstance(act, ParentChanged):
                self.trace.add(
                    now,
                    sta_id.hex(),
                    "parent_change",
                    old=act.old.hex() if act.old else None,
                    new=act.new.hex() if act.new else None,
                )
            elif isinstance(act, QrefChanged):
                self.trace.add(now, sta_id.hex(), "qref_change", quality=act.quality)
            elif isinstance(act, Paired):
                meta["matches"] = act.matches
            elif isinstance(act, Ignored):
                meta["ignored"] = act.reason
        return meta

    # -- event handlers --

    def _on_beacon_emit(self, now: int, ap_id: NodeId) -> None:
        spec = self.topology.aps[ap_id]
        beacon = Beacon(ap=ap_id, tsf=spec.tsf_start + now // 1000)
        hearers = self.topology.hearers(ap_id)
        self.trace.add(
            now, ap_id.hex(), "beacon_tx", tsf=beacon.tsf, receivers=len(hearers)
        )
        delivered = deliver_beacon(
            beacon, now, self.topology, self.loss, self.scenario.propagation_delay
        )
        got = {sta for sta, _ in delivered}
        for sta in hearers:
            if sta not in got:
                self.trace.add(
                    now, sta.hex(), "beacon_drop", ap=ap_id.hex(), tsf=beacon.tsf
                )
        for sta, arrival in delivered:
            self.queue.push(
                arrival,
                RANK_BEACON_DELIVER,
                sta.octets,
                "beacon_deliver",
                (sta, beacon),
            )

    def _on_beacon_deliver(self, now: int, sta_id: NodeId, beacon: Beacon) -> None:
        node = self.nodes[sta_id]
        local = node.clock.read(now) + self._capture_noise()
        node.engine.on_beacon(beacon, local)
        self.trace.add(
            now,
            sta_id.hex(),
            "beacon_rx",
            ap=beacon.ap.hex(),
            tsf=beacon.tsf,
            local_ns=local,
        )

    def _on_tick(self, now: int, sta_id: NodeId) -> None:
        node = self.nodes[sta_id]
        local_now = node.clock.read(now)
        actions, fups = node.engine.tick(local_now)
        self._apply_actions(sta_id, now, actions)
        for msg in fups:
            self._broadcast_fup(now, sta_id, msg)

    def _broadcast_fup(self, now: int, sta_id: NodeId, msg: FupMessage) -> None:
        everyone = [s for s in sorted(self.topology.stas) if s != sta_id]
        self.trace.add(
            now,
            sta_id.hex(),
            "fup_tx",
            seq=msg.seq,
            n_records=len(msg.records),
            error_ns=msg.error_ns,
            quality=msg.quality,
            receivers=len(everyone),
        )
        result = deliver_fup(
            msg,
            sta_id,
            now,
            self.topology,
            self.loss,
            self.scenario.backbone_latency,
        )
        got = {sta for sta, _ in result.delivered}
        leg = "uplink" if not result.uplink_ok else "downlink"
        for sta in everyone:
            if sta not in got:
                self.trace.add(
                    now,
                    sta.hex(),
                    "fup_drop",
                    sender=sta_id.hex(),
                    seq=msg.seq,
                    leg=leg,
                )
        for sta, arrival in result.delivered:
            self.queue.push(
                arrival, RANK_FUP_DELIVER, sta.octets, "fup_deliver", (sta, msg)
            )

    def _on_fup_deliver(self, now: int, sta_id: NodeId, msg: FupMessage) -> None:
        node = self.nodes[sta_id]
        tau = node.clock.read(now)
        actions = node.engine.on_fup(msg, tau)
        meta = self._apply_actions(sta_id, now, actions)
        self.trace.add(
            now,
            sta_id.hex(),
            "fup_rx",
            sender=msg.sender.hex(),
            seq=msg.seq,
            matches=meta["matches"],
            ignored=meta["ignored"],
        )

    def _on_mobility(self, now: int, event: MobilityEvent) -> None:
        apply_mobility(self.topology, event)
        self.trace.add(
            now,
            None,
            "mobility",
            action=event.action,
            ap=event.ap.hex(),
            sta=event.sta.hex(),
            reassociate=event.reassociate_to.hex() if event.reassociate_to else None,
        )

    def _on_snapshot(self, now: int) -> None:
        for sta_id in sorted(self.nodes):
            node = self.nodes[sta_id]
            eng = node.engine
            self.trace.add(
                now,
                sta_id.hex(),
                "snapshot",
                local=node.clock.read(now),
                parent=eng.parent.hex() if eng.parent else None,
                qref=eng.q_ref,
                acting_gc=eng.acting_gc,
                synchronized=eng.sync_status.value == "synchronized",
            )

    def run(self) -> Trace:
        duration = self.scenario.duration
        while len(self.queue):
            t, rank, key, seq, kind, payload = self.queue.pop()
            if t > duration:
                continue
            if kind == "beacon_emit":
                self._on_beacon_emit(t, payload)
            elif kind == "beacon_deliver":
                self._on_beacon_deliver(t, payload[0], payload[1])
            elif kind == "fup_deliver":
                self._on_fup_deliver(t, payload[0], payload[1])
            elif kind == "tick":
                self._on_tick(t, payload)
            elif kind == "mobility":
                self._on_mobility(t, payload)
            elif kind == "snapshot":
                self._on_snapshot(t)
        return self.trace


def run(queue: EventQueue, nodes: dict[NodeId, SimNode], scenario: Scenario) -> Trace:
    """Process all events in (true time, tiebreak) order into a trace."""
    return Simulation(scenario, queue, nodes).run()


def run_scenario(scenario: Scenario) -> Trace:
    """Schedule and run one scenario end to end."""
    scenario.validate()
    queue = schedule_scenario(
        scenario.topology,
        scenario.loss,
        scenario.mobility,
        scenario.duration,
        scenario.seed,
        tick_period=scenario.tick_period,
        snapshot_period=scenario.snapshot_period,
    )
    nodes = build_nodes(scenario)
    return run(queue, nodes, scenario)
