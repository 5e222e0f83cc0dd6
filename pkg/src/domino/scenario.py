"""Scenario file loading and validation.

Scenarios are TOML documents.  All durations are seconds as decimals and all
identifiers are 12-hex-digit strings; they are converted to integer
nanoseconds and :class:`~domino.wire.NodeId` internally.

Schema (see README for the full reference)::

    duration = 300.0            # required, seconds
    seed = 42                   # required, integer
    # optional scalars: snapshot_period, tick_period, backbone_latency,
    # propagation_delay (seconds), timestamp_jitter_ns (integer ns)

    [engine_defaults]           # optional, merged into every station
    t_fup = 2.0                 # seconds; other EngineConfig fields likewise

    [[aps]]
    id = "aa0000000001"
    beacon_period = 0.1024      # seconds, optional
    beacon_phase = 0.0          # seconds, optional
    tsf_start = 0               # microseconds, optional

    [[stas]]
    id = "bb0000000001"
    kind = "ffts"               # ffts | rfts
    gc_capable = true
    freq_error_ppm = 10.0
    gc_error_ns = 100           # gc_capable nodes only
    initial_offset_ns = 0       # optional
    quality = { priority1 = 0, clock_class = 6, accuracy = 32, variance = 100, priority2 = 0 }
    engine = { t_fup = 2.0 }    # optional per-station overrides

    hearability = [["aa0000000001", "bb0000000001"], ...]

    [association]
    "bb0000000001" = "aa0000000001"

    [loss]
    wireless_loss_prob = 0.1    # optional: beacon_loss_prob, fup_loss_prob,
                                # burst_mean_len, burst_loss_prob, seed

    [[mobility]]
    time = 120.0
    action = "add"              # add | remove
    ap = "aa0000000002"
    sta = "bb0000000001"
    reassociate_to = "aa0000000002"   # optional
"""

from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .engine import EngineConfig, NodeKind, NodeRole
from .simnet import (
    ApSpec,
    ConfigurationError,
    LossModel,
    MobilityEvent,
    Scenario,
    StaSpec,
    Topology,
)
from .wire import INFINITE_QUALITY, ClockQuality, NodeId

SECOND_NS = 1_000_000_000

# EngineConfig fields expressed as second-valued decimals in scenario files.
_ENGINE_DURATION_FIELDS = {"t_fup", "t0", "t_pcl", "rate_baseline_min"}
_ENGINE_FIELDS = {
    "t_fup",
    "ema_alpha",
    "beta",
    "t0",
    "hysteresis_alpha",
    "t_pcl",
    "e_f_local_ppm",
    "fup_records_max",
    "sync_list_capacity",
    "gc_error_ns",
    "rate_baseline_min",
    "rate_correction_enabled",
    "fup_jitter_frac",
    "sq_gate_enabled",
}


class ScenarioError(ConfigurationError):
    """Scenario file rejected; the message names the offending key."""


def _seconds_to_ns(value, key: str) -> int:
    if not isinstance(value, (int, float)):
        raise ScenarioError(f"{key}: expected seconds as a number, got {value!r}")
    return round(value * SECOND_NS)


def _node_id(value, key: str) -> NodeId:
    if not isinstance(value, str):
        raise ScenarioError(f"{key}: expected a 12-hex-digit id, got {value!r}")
    try:
        return NodeId.from_hex(value)
    except ValueError as exc:
        raise ScenarioError(f"{key}: {exc}") from exc


def _require(table: dict, key: str, context: str):
    if key not in table:
        raise ScenarioError(f"{context}: missing required key {key!r}")
    return table[key]


def _engine_config(defaults: dict, overrides: dict, context: str) -> EngineConfig:
    merged = dict(defaults)
    merged.update(overrides)
    kwargs = {}
    for key, value in merged.items():
        if key not in _ENGINE_FIELDS:
            raise ScenarioError(f"{context}: unknown engine key {key!r}")
        if key in _ENGINE_DURATION_FIELDS:
            kwargs[key] = _seconds_to_ns(value, f"{context}.{key}")
        else:
            kwargs[key] = value
    try:
        return EngineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{context}: {exc}") from exc


def _quality(table: dict, identity: NodeId, context: str) -> ClockQuality:
    allowed = {"priority1", "clock_class", "accuracy", "variance", "priority2"}
    unknown = set(table) - allowed
    if unknown:
        raise ScenarioError(f"{context}: unknown quality key {sorted(unknown)[0]!r}")
    try:
        return ClockQuality(
            priority1=table.get("priority1", 128),
            clock_class=table.get("clock_class", 248),
            accuracy=table.get("accuracy", 254),
            variance=table.get("variance", 65535),
            priority2=table.get("priority2", 128),
            identity=identity,
        )
    except ValueError as exc:
        raise ScenarioError(f"{context}: {exc}") from exc


def _sta_spec(table: dict, defaults: dict, index: int) -> StaSpec:
    context = f"stas[{index}]"
    sta_id = _node_id(_require(table, "id", context), f"{context}.id")
    kind_raw = table.get("kind", "ffts")
    try:
        kind = NodeKind(kind_raw)
    except ValueError:
        raise ScenarioError(f"{context}.kind: expected 'ffts' or 'rfts', got {kind_raw!r}")
    gc_capable = bool(table.get("gc_capable", False))
    if kind is NodeKind.RFTS and gc_capable:
        raise ScenarioError(f"{context}: rfts stations cannot be gc_capable")
    if gc_capable:
        q_local = _quality(table.get("quality", {}), sta_id, f"{context}.quality")
    else:
        if "quality" in table:
            raise ScenarioError(
                f"{context}.quality: only gc_capable stations carry a quality"
            )
        q_local = INFINITE_QUALITY
    gc_error_ns = table.get("gc_error_ns")
    if gc_error_ns is not None and not gc_capable:
        raise ScenarioError(f"{context}.gc_error_ns: requires gc_capable = true")
    known = {
        "id",
        "kind",
        "gc_capable",
        "freq_error_ppm",
        "gc_error_ns",
        "initial_offset_ns",
        "quality",
        "engine",
    }
    unknown = set(table) - known
    if unknown:
        raise ScenarioError(f"{context}: unknown key {sorted(unknown)[0]!r}")
    try:
        role = NodeRole(kind=kind, gc_capable=gc_capable, q_local=q_local)
        return StaSpec(
            node_id=sta_id,
            role=role,
            freq_error_ppm=float(table.get("freq_error_ppm", 0.0)),
            gc_error_ns=gc_error_ns,
            engine=_engine_config(defaults, table.get("engine", {}), context),
            initial_offset_ns=int(table.get("initial_offset_ns", 0)),
        )
    except (ValueError, ConfigurationError) as exc:
        raise ScenarioError(f"{context}: {exc}") from exc


def _ap_spec(table: dict, index: int) -> ApSpec:
    context = f"aps[{index}]"
    known = {"id", "beacon_period", "tsf_start", "beacon_phase"}
    unknown = set(table) - known
    if unknown:
        raise ScenarioError(f"{context}: unknown key {sorted(unknown)[0]!r}")
    ap_id = _node_id(_require(table, "id", context), f"{context}.id")
    kwargs = {"node_id": ap_id}
    if "beacon_period" in table:
        kwargs["beacon_period"] = _seconds_to_ns(
            table["beacon_period"], f"{context}.beacon_period"
        )
    if "beacon_phase" in table:
        kwargs["beacon_phase"] = _seconds_to_ns(
            table["beacon_phase"], f"{context}.beacon_phase"
        )
    if "tsf_start" in table:
        kwargs["tsf_start"] = int(table["tsf_start"])
    return ApSpec(**kwargs)


def _loss_model(table: dict) -> LossModel:
    known = {
        "wireless_loss_prob",
        "beacon_loss_prob",
        "fup_loss_prob",
        "burst_mean_len",
        "burst_loss_prob",
        "seed",
    }
    unknown = set(table) - known
    if unknown:
        raise ScenarioError(f"loss: unknown key {sorted(unknown)[0]!r}")
    try:
        return LossModel(**table)
    except ConfigurationError as exc:
        raise ScenarioError(str(exc)) from exc


def _mobility_event(table: dict, index: int) -> MobilityEvent:
    context = f"mobility[{index}]"
    known = {"time", "action", "ap", "sta", "reassociate_to"}
    unknown = set(table) - known
    if unknown:
        raise ScenarioError(f"{context}: unknown key {sorted(unknown)[0]!r}")
    reassoc = table.get("reassociate_to")
    try:
        return MobilityEvent(
            time=_seconds_to_ns(_require(table, "time", context), f"{context}.time"),
            action=_require(table, "action", context),
            ap=_node_id(_require(table, "ap", context), f"{context}.ap"),
            sta=_node_id(_require(table, "sta", context), f"{context}.sta"),
            reassociate_to=(
                _node_id(reassoc, f"{context}.reassociate_to") if reassoc else None
            ),
        )
    except ConfigurationError as exc:
        raise ScenarioError(f"{context}: {exc}") from exc


_TOP_LEVEL_KEYS = {
    "duration",
    "seed",
    "name",
    "snapshot_period",
    "tick_period",
    "backbone_latency",
    "propagation_delay",
    "timestamp_jitter_ns",
    "engine_defaults",
    "aps",
    "stas",
    "hearability",
    "association",
    "loss",
    "mobility",
}


def parse_scenario(data: dict, name: str = "scenario") -> Scenario:
    unknown = set(data) - _TOP_LEVEL_KEYS
    if unknown:
        raise ScenarioError(f"unknown top-level key {sorted(unknown)[0]!r}")

    duration = _seconds_to_ns(_require(data, "duration", "scenario"), "duration")
    seed = _require(data, "seed", "scenario")
    if not isinstance(seed, int):
        raise ScenarioError(f"seed: expected an integer, got {seed!r}")

    defaults = data.get("engine_defaults", {})
    aps = {}
    for i, table in enumerate(data.get("aps", [])):
        spec = _ap_spec(table, i)
        if spec.node_id in aps:
            raise ScenarioError(f"aps[{i}]: duplicate id {spec.node_id}")
        aps[spec.node_id] = spec
    stas = {}
    for i, table in enumerate(data.get("stas", [])):
        spec = _sta_spec(table, defaults, i)
        if spec.node_id in stas or spec.node_id in aps:
            raise ScenarioError(f"stas[{i}]: duplicate id {spec.node_id}")
        stas[spec.node_id] = spec

    hearability = set()
    prop_delay = {}
    for i, item in enumerate(data.get("hearability", [])):
        if not isinstance(item, list) or len(item) not in (2, 3):
            raise ScenarioError(
                f"hearability[{i}]: expected [ap, sta] or [ap, sta, delay_s]"
            )
        ap = _node_id(item[0], f"hearability[{i}].ap")
        sta = _node_id(item[1], f"hearability[{i}].sta")
        hearability.add((ap, sta))
        if len(item) == 3:
            prop_delay[(ap, sta)] = _seconds_to_ns(
                item[2], f"hearability[{i}].delay"
            )

    association = {}
    for sta_text, ap_text in data.get("association", {}).items():
        sta = _node_id(sta_text, f"association.{sta_text}")
        association[sta] = _node_id(ap_text, f"association.{sta_text}")

    topology = Topology(
        aps=aps,
        stas=stas,
        association=association,
        hearability=hearability,
        prop_delay=prop_delay,
    )
    mobility = [
        _mobility_event(table, i) for i, table in enumerate(data.get("mobility", []))
    ]

    scenario = Scenario(
        topology=topology,
        loss=_loss_model(data.get("loss", {})),
        mobility=mobility,
        duration=duration,
        seed=seed,
        name=data.get("name", name),
    )
    if "snapshot_period" in data:
        scenario.snapshot_period = _seconds_to_ns(
            data["snapshot_period"], "snapshot_period"
        )
    if "tick_period" in data:
        scenario.tick_period = _seconds_to_ns(data["tick_period"], "tick_period")
    if "backbone_latency" in data:
        scenario.backbone_latency = _seconds_to_ns(
            data["backbone_latency"], "backbone_latency"
        )
    if "propagation_delay" in data:
        scenario.propagation_delay = _seconds_to_ns(
            data["propagation_delay"], "propagation_delay"
        )
    if "timestamp_jitter_ns" in data:
        jitter = data["timestamp_jitter_ns"]
        if not isinstance(jitter, int) or jitter < 0:
            raise ScenarioError(
                f"timestamp_jitter_ns: expected a non-negative integer, got {jitter!r}"
            )
        scenario.timestamp_jitter_ns = jitter

    try:
        scenario.validate()
    except ConfigurationError as exc:
        raise ScenarioError(str(exc)) from exc
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return parse_scenario(data, name=path.stem)
