"""Per-station DOMINO state machine.

Pure event-in/action-out: the engine owns no clocks or sockets.  The harness
feeds it beacon arrivals, decoded FUP messages, and timer ticks, all stamped
with readings from the node's own (possibly disciplined) clock, and applies
the returned actions (clock corrections, parent changes) itself.

Per node the engine combines three protocol functions:

* beacon logging -- every heard beacon lands in a bounded Sync list;
* follow-up broadcasting (full-function stations only) -- the not yet
  announced Sync-list entries are batched into periodic FUP messages carrying
  the node's own error estimate and the reference clock quality it follows;
* clock synchronization -- records in a received FUP are paired with the
  local Sync list on equal (AP, TSF); matches against the current parent turn
  into offset/rate corrections.

Parent selection keeps one quality entry per heard master.  An entry is
created only when the carried source quality (SQ) is strictly better than the
reference quality currently followed; messages from the current parent bypass
that gate so its updates (including downgrades) always propagate.  The entry
with the lowest SQ wins; the estimated link error discriminates among equal
SQ values, with hysteresis so statistical fluctuations do not flap the
parent.  Entries that stop pairing expire after the parent-clock lifetime; a
node left with an empty table falls back to acting as grandmaster (if
capable) or free-runs.

Loop prevention relies on the strict quality ordering plus a demotion hold:
whenever the followed reference quality gets worse, the previous descriptor
is refused for a hold period.  Without it, a station falling back can re-adopt
its own stale quality echoed by a former descendant and lock a parent cycle.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Union

from .timebase import SyncSample, cda_offset, cda_rate
from .wire import (
    ERROR_CEILING_NS,
    INFINITE_QUALITY,
    Beacon,
    BeaconRecord,
    ClockQuality,
    FupMessage,
    NodeId,
    Ordering,
    compare_quality,
)

SECOND_NS = 1_000_000_000


class NodeKind(enum.Enum):
    FFTS = "ffts"  # full-function: master + slave sides (boundary clock)
    RFTS = "rfts"  # reduced-function: slave role only


class SyncStatus(enum.Enum):
    UNSYNCHRONIZED = "unsynchronized"
    SYNCHRONIZED = "synchronized"


@dataclass(frozen=True)
class NodeRole:
    kind: NodeKind
    gc_capable: bool
    q_local: ClockQuality

    def __post_init__(self):
        if self.kind is NodeKind.RFTS:
            if self.gc_capable:
                raise ValueError("reduced-function stations cannot act as grandmaster")
            if not self.q_local.is_infinite:
                raise ValueError("pure slave clocks must carry the infinite quality")
        if not self.gc_capable and not self.q_local.is_infinite:
            raise ValueError("non-grandmaster-capable stations carry infinite quality")


@dataclass
class EngineConfig:
    """Protocol timing and selection knobs, durations in nanoseconds."""

    t_fup: int = 2 * SECOND_NS  # FUP broadcast period
    ema_alpha: float = 0.125  # intertime smoothing factor
    beta: float = 2.0  # multiplicative inertial coefficient (first estimate)
    t0: int = SECOND_NS  # additive inertial coefficient (first estimate)
    hysteresis_alpha: float = 0.875  # switch only below this fraction of parent error
    t_pcl: int = 60 * SECOND_NS  # parent-clock entry lifetime
    e_f_local_ppm: float = 10.0  # assumed residual oscillator tolerance
    fup_records_max: int = 8
    sync_list_capacity: int = 64
    gc_error_ns: int = 100  # own error while acting as grandmaster
    rate_baseline_min: int = SECOND_NS // 2  # skip rate correction below this span
    rate_correction_enabled: bool = True
    fup_jitter_frac: float = 0.05  # uniform +/- fraction of t_fup per period
    sq_gate_enabled: bool = True  # test hook: disabling it permits loops

    def __post_init__(self):
        if not 0 < self.ema_alpha < 1:
            raise ValueError(f"ema_alpha must be in (0,1), got {self.ema_alpha}")
        if not 0 < self.hysteresis_alpha < 1:
            raise ValueError(
                f"hysteresis_alpha must be in (0,1), got {self.hysteresis_alpha}"
            )
        if self.beta < 1:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.t0 < 0:
            raise ValueError(f"t0 must be >= 0, got {self.t0}")
        if self.t_fup <= 0 or self.t_pcl <= 0:
            raise ValueError("t_fup and t_pcl must be positive")
        if self.fup_records_max < 1 or self.sync_list_capacity < 1:
            raise ValueError("record limits must be positive")

    @property
    def demotion_hold(self) -> int:
        # Must outlive both the entry lifetime (stale entries die before the
        # refused quality can look fresh again) and the per-hop downgrade
        # propagation along the deepest stale chain.
        return self.t_pcl + 5 * self.t_fup


@dataclass
class SyncList:
    """Bounded beacon log ordered by arrival; oldest entries evicted first."""

    capacity: int = 64
    entries: list[BeaconRecord] = field(default_factory=list)
    _seen: set[tuple[NodeId, int]] = field(default_factory=set)
    _next_seq: int = 0
    _seqs: list[int] = field(default_factory=list)

    def append(self, record: BeaconRecord) -> bool:
        """Add a record; returns False for a duplicate (ap, tsf)."""
        key = (record.ap, record.tsf)
        if key in self._seen:
            return False
        if len(self.entries) >= self.capacity:
            old = self.entries.pop(0)
            self._seqs.pop(0)
            self._seen.discard((old.ap, old.tsf))
        self.entries.append(record)
        self._seqs.append(self._next_seq)
        self._next_seq += 1
        self._seen.add(key)
        return True

    def newer_than(self, seq: int) -> list[tuple[int, BeaconRecord]]:
        return [(s, r) for s, r in zip(self._seqs, self.entries) if s > seq]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class ClockQualityEntry:
    """Per-master state driving parent selection.

    mean_intertime stays None until the second successful pairing from this
    master; until then the link error estimate is treated as infinite.
    """

    master: NodeId
    error_ns: int  # remote error estimate from the last paired FUP
    tau: int  # local arrival time of the last paired FUP
    mean_intertime: Optional[int]  # smoothed SYNOP intertime, ns
    quality: ClockQuality  # SQ of the last paired FUP


# --- engine actions ---------------------------------------------------------


@dataclass(frozen=True)
class AdjustOffset:
    offset_ns: int
    sample: SyncSample


@dataclass(frozen=True)
class AdjustRate:
    rate: float


@dataclass(frozen=True)
class ParentChanged:
    old: Optional[NodeId]
    new: Optional[NodeId]


@dataclass(frozen=True)
class QrefChanged:
    quality: ClockQuality


@dataclass(frozen=True)
class Ignored:
    sender: NodeId
    reason: str  # self | quality | no_match | stale_quality


@dataclass(frozen=True)
class Paired:
    master: NodeId
    matches: int


Action = Union[AdjustOffset, AdjustRate, ParentChanged, QrefChanged, Ignored, Paired]


class RoleViolation(Exception):
    """An operation was invoked on a node whose role does not support it."""


# --- pure helpers -----------------------------------------------------------


def pair(
    remote: list[BeaconRecord] | tuple[BeaconRecord, ...],
    local: SyncList,
) -> list[tuple[BeaconRecord, BeaconRecord]]:
    """Match remote against local records on equal (AP, TSF).

    Returns (remote, local) couples ordered by ascending local timestamp; an
    empty list means pairing failed.
    """
    index = {(rec.ap, rec.tsf): rec for rec in local.entries}
    matches = []
    for rem in remote:
        loc = index.get((rem.ap, rem.tsf))
        if loc is not None:
            matches.append((rem, loc))
    matches.sort(key=lambda m: (m[1].t_ns, m[1].ap, m[1].tsf))
    return matches


def estimate_link_error(entry: ClockQualityEntry, e_f_local_ppm: float) -> float:
    """Mean synchronization error over this link, nanoseconds.

    remote error + half the local drift accumulated over the mean SYNOP
    intertime; infinite until the intertime is known.
    """
    if entry.mean_intertime is None:
        return math.inf
    drift = round(e_f_local_ppm * entry.mean_intertime / 2_000_000)
    return min(entry.error_ns + drift, ERROR_CEILING_NS)


def update_mean_intertime(
    entry: ClockQualityEntry, tau_new: int, cfg: EngineConfig
) -> None:
    """Fold a new paired-FUP arrival into the smoothed SYNOP intertime."""
    if tau_new <= entry.tau:
        raise ValueError(f"tau must increase: {tau_new} <= {entry.tau}")
    gap = tau_new - entry.tau
    if entry.mean_intertime is None:
        # First measurable gap: inflate it so a brand-new link does not
        # displace a settled parent too early.
        entry.mean_intertime = round(cfg.beta * gap) + cfg.t0
    else:
        entry.mean_intertime = round(
            cfg.ema_alpha * gap + (1 - cfg.ema_alpha) * entry.mean_intertime
        )
    entry.tau = tau_new


# --- the state machine -------------------------------------------------------


class Engine:
    """DOMINO state machine for one time-synchronized station."""

    def __init__(
        self,
        node_id: NodeId,
        role: NodeRole,
        config: EngineConfig | None = None,
        rng: random.Random | None = None,
    ):
        self.node_id = node_id
        self.role = role
        self.config = config or EngineConfig()
        self.rng = rng or random.Random(int.from_bytes(node_id.octets, "big"))
        self.sync_list = SyncList(capacity=self.config.sync_list_capacity)
        self.parent_table: dict[NodeId, ClockQualityEntry] = {}
        self.parent: Optional[NodeId] = None
        self.q_ref: ClockQuality = role.q_local
        self.sync_status = (
            SyncStatus.SYNCHRONIZED if role.gc_capable else SyncStatus.UNSYNCHRONIZED
        )
        self.last_samples: list[SyncSample] = []
        self.duplicate_beacons = 0
        self._fup_seq = 0
        self._last_sent_seq = -1  # high-water mark into the sync list
        self._next_fup_at: Optional[int] = None
        self._refused_quality: Optional[ClockQuality] = None
        self._refused_until = 0

    # -- role/status helpers --

    @property
    def acting_gc(self) -> bool:
        """A grandmaster-capable node with no parent treats itself as the GC."""
        return self.role.gc_capable and self.parent is None

    def _better(self, a: ClockQuality, b: ClockQuality) -> bool:
        return compare_quality(a, b) is Ordering.BETTER

    # -- beacon logging --

    def on_beacon(self, beacon: Beacon, local_t: int) -> None:
        """Log a heard beacon with its precise local arrival timestamp."""
        if not self.sync_list.append(BeaconRecord(beacon.ap, beacon.tsf, local_t)):
            self.duplicate_beacons += 1

    # -- follow-up broadcasting --

    def estimate_own_error(self) -> float:
        """This node's mean error versus the reference, nanoseconds."""
        if self.acting_gc:
            return self.config.gc_error_ns
        if self.parent is None:
            return math.inf
        return estimate_link_error(
            self.parent_table[self.parent], self.config.e_f_local_ppm
        )

    def build_fup(self, now: int) -> Optional[FupMessage]:
        """Assemble the next FUP, or None when there is nothing to announce.

        Only records not carried by an earlier FUP are included (capped at
        fup_records_max, most recent first in time order), so every announced
        timestamp was captured with the node's current clock discipline.
        Nodes following nothing better than the infinite quality stay silent.
        """
        if self.role.kind is not NodeKind.FFTS:
            raise RoleViolation("reduced-function stations never emit FUP messages")
        if self.q_ref.is_infinite:
            return None
        fresh = self.sync_list.newer_than(self._last_sent_seq)
        if not fresh:
            return None
        fresh = fresh[-self.config.fup_records_max :]
        self._last_sent_seq = max(seq for seq, _ in fresh)
        records = tuple(sorted((rec for _, rec in fresh), key=lambda r: r.t_ns))
        error = self.estimate_own_error()
        error_ns = ERROR_CEILING_NS if math.isinf(error) else int(error)
        msg = FupMessage(
            sender=self.node_id,
            seq=self._fup_seq,
            records=records,
            error_ns=error_ns,
            quality=self.q_ref,
        )
        self._fup_seq += 1
        return msg

    def tick(self, now: int) -> tuple[list[Action], list[FupMessage]]:
        """Timer entry point: expire stale entries, emit due FUP messages."""
        actions = self.expire_entries(now)
        fups: list[FupMessage] = []
        if self.role.kind is not NodeKind.FFTS:
            return actions, fups
        cfg = self.config
        if self._next_fup_at is None:
            # Stagger first emissions across the period.
            self._next_fup_at = now + int(self.rng.uniform(0, cfg.t_fup))
        if now >= self._next_fup_at:
            msg = self.build_fup(now)
            if msg is not None:
                fups.append(msg)
            jitter = cfg.fup_jitter_frac * cfg.t_fup
            while self._next_fup_at <= now:
                self._next_fup_at += cfg.t_fup + int(self.rng.uniform(-jitter, jitter))
        return actions, fups

    # -- parent maintenance --

    def expire_entries(self, now: int) -> list[Action]:
        """Drop entries that stopped pairing for longer than the lifetime."""
        stale = [
            mid
            for mid, entry in self.parent_table.items()
            if now - entry.tau > self.config.t_pcl
        ]
        if not stale:
            return []
        parent_lost = self.parent in stale
        for mid in stale:
            del self.parent_table[mid]
        if not parent_lost:
            return []
        return self._reselect_after_loss(now)

    def _reselect_after_loss(self, now: int) -> list[Action]:
        old_parent = self.parent
        self.parent = None
        self.last_samples.clear()
        if self.parent_table:
            actions = self.select_parent(now, previous=old_parent)
            if self.parent is None:
                # No acceptable candidate survived pruning.
                actions.extend(self._fallback(now, old_parent))
            return actions
        return self._fallback(now, old_parent)

    def _fallback(self, now: int, old_parent: Optional[NodeId]) -> list[Action]:
        """Empty table: act as grandmaster if capable, else free-run."""
        actions: list[Action] = []
        if old_parent is not None or self.parent is not None:
            actions.append(ParentChanged(old_parent or self.parent, None))
        self.parent = None
        self.last_samples.clear()
        self.sync_status = (
            SyncStatus.SYNCHRONIZED
            if self.role.gc_capable
            else SyncStatus.UNSYNCHRONIZED
        )
        self._set_q_ref(self.role.q_local, now, actions)
        return actions

    def _set_q_ref(self, quality: ClockQuality, now: int, actions: list[Action]) -> None:
        if quality == self.q_ref:
            return
        if self._better(self.q_ref, quality):
            # Demotion: refuse the old descriptor for a hold period so a stale
            # echo of it cannot be re-adopted from a former descendant.
            self._refused_quality = self.q_ref
            self._refused_until = now + self.config.demotion_hold
        self.q_ref = quality
        actions.append(QrefChanged(quality))

    def _is_refused(self, quality: ClockQuality, now: int) -> bool:
        return (
            self._refused_quality is not None
            and now < self._refused_until
            and quality == self._refused_quality
        )

    def select_parent(
        self, now: int, previous: Optional[NodeId] = None
    ) -> list[Action]:
        """Re-evaluate the best potential parent after any table change.

        The candidate minimizing (quality, estimated link error, id) wins; a
        strictly better quality switches immediately, an equal quality only
        when its error clears the hysteresis fraction of the parent's.
        """
        actions: list[Action] = []
        if not self.parent_table:
            return actions
        cfg = self.config

        def rank(item: tuple[NodeId, ClockQualityEntry]):
            mid, entry = item
            return (entry.quality, estimate_link_error(entry, cfg.e_f_local_ppm), mid)

        best_id, best = min(self.parent_table.items(), key=rank)
        old_parent = previous if previous is not None else self.parent
        switch = False
        if self.parent is None:
            switch = True
        elif best_id != self.parent:
            current = self.parent_table[self.parent]
            if self._better(best.quality, current.quality):
                switch = True
            elif best.quality == current.quality:
                best_err = estimate_link_error(best, cfg.e_f_local_ppm)
                cur_err = estimate_link_error(current, cfg.e_f_local_ppm)
                switch = best_err < cfg.hysteresis_alpha * cur_err
        if switch:
            self.parent = best_id
            self.last_samples.clear()
            self.sync_status = SyncStatus.SYNCHRONIZED
            actions.append(ParentChanged(old_parent, best_id))
        # Follow the parent's quality (it may have changed even without a switch).
        self._set_q_ref(self.parent_table[self.parent].quality, now, actions)
        return actions

    # -- FUP intake --

    def on_fup(self, msg: FupMessage, arrival_tau: int) -> list[Action]:
        """Process a received FUP message; returns the resulting actions."""
        cfg = self.config
        if msg.sender == self.node_id:
            return [Ignored(msg.sender, "self")]
        if (
            cfg.sq_gate_enabled
            and self.acting_gc
            and not self._better(msg.quality, self.role.q_local)
        ):
            return [Ignored(msg.sender, "quality")]
        matches = pair(msg.records, self.sync_list)
        if not matches:
            return [Ignored(msg.sender, "no_match")]
        actions: list[Action] = [Paired(msg.sender, len(matches))]
        is_parent = msg.sender == self.parent
        if not is_parent and self._is_refused(msg.quality, arrival_tau):
            actions.append(Ignored(msg.sender, "stale_quality"))
            return actions
        if (
            cfg.sq_gate_enabled
            and not is_parent
            and self.sync_status is SyncStatus.SYNCHRONIZED
            and not self._better(msg.quality, self.q_ref)
        ):
            actions.append(Ignored(msg.sender, "quality"))
            return actions

        entry = self.parent_table.get(msg.sender)
        if entry is None:
            self.parent_table[msg.sender] = ClockQualityEntry(
                master=msg.sender,
                error_ns=msg.error_ns,
                tau=arrival_tau,
                mean_intertime=None,
                quality=msg.quality,
            )
        else:
            update_mean_intertime(entry, arrival_tau, cfg)
            entry.error_ns = msg.error_ns
            entry.quality = msg.quality

        # A parent update may have dragged the entry below this node's own
        # local quality; following it would be pointless, so drop it instead.
        if (
            cfg.sq_gate_enabled
            and self.role.gc_capable
            and not self._better(
                self.parent_table[msg.sender].quality, self.role.q_local
            )
        ):
            del self.parent_table[msg.sender]
            if is_parent:
                actions.extend(self._reselect_after_loss(arrival_tau))
            return actions

        actions.extend(self.select_parent(arrival_tau))

        if self.parent == msg.sender:
            remote, local = matches[-1]  # highest local timestamp
            sample = SyncSample(local_ns=local.t_ns, remote_ns=remote.t_ns)
            self.last_samples.append(sample)
            if len(self.last_samples) > 2:
                self.last_samples.pop(0)
            actions.append(AdjustOffset(cda_offset(sample), sample))
            if cfg.rate_correction_enabled and len(self.last_samples) == 2:
                s1, s2 = self.last_samples
                if s2.local_ns - s1.local_ns >= cfg.rate_baseline_min:
                    actions.append(AdjustRate(cda_rate(s1, s2)))
        return actions
