"""Shared scenario builders for the test suite."""

from domino.engine import EngineConfig, NodeKind, NodeRole
from domino.simnet import (
    ApSpec,
    LossModel,
    MobilityEvent,
    Scenario,
    StaSpec,
    Topology,
)
from domino.wire import INFINITE_QUALITY, ClockQuality, NodeId

S = 1_000_000_000


def ap_id(n: int) -> NodeId:
    return NodeId(bytes([0xAA, 0, 0, 0, 0, n]))


def sta_id(n: int) -> NodeId:
    return NodeId(bytes([0xBB, 0, 0, 0, 0, n]))


def quality(priority1: int, identity: NodeId) -> ClockQuality:
    return ClockQuality(priority1, 6, 32, 100, 0, identity)


def master(
    node_id: NodeId,
    priority1: int,
    freq_error_ppm: float = 0.0,
    gc_error_ns: int = 100,
    initial_offset_ns: int = 0,
    **engine_kw,
) -> StaSpec:
    role = NodeRole(
        kind=NodeKind.FFTS, gc_capable=True, q_local=quality(priority1, node_id)
    )
    return StaSpec(
        node_id=node_id,
        role=role,
        freq_error_ppm=freq_error_ppm,
        gc_error_ns=gc_error_ns,
        engine=EngineConfig(**engine_kw),
        initial_offset_ns=initial_offset_ns,
    )


def slave(
    node_id: NodeId,
    freq_error_ppm: float = 0.0,
    initial_offset_ns: int = 0,
    **engine_kw,
) -> StaSpec:
    role = NodeRole(kind=NodeKind.RFTS, gc_capable=False, q_local=INFINITE_QUALITY)
    return StaSpec(
        node_id=node_id,
        role=role,
        freq_error_ppm=freq_error_ppm,
        engine=EngineConfig(**engine_kw),
        initial_offset_ns=initial_offset_ns,
    )


def build_topology(aps, stas, hearability, association) -> Topology:
    return Topology(
        aps={ap.node_id: ap for ap in aps},
        stas={sta.node_id: sta for sta in stas},
        association={sta: ap for sta, ap in association.items()},
        hearability=set(hearability),
    )


def single_hop_scenario(
    *,
    duration_s: float = 60.0,
    seed: int = 1,
    slave_freq_ppm: float = 10.0,
    master_freq_ppm: float = 0.0,
    jitter_ns: int = 50,
    loss: LossModel | None = None,
    beacon_period_s: float = 0.1024,
    slave_initial_offset_ns: int = 0,
    tick_period_s: float = 0.05,
    snapshot_period_s: float = 0.1,
    **engine_kw,
) -> Scenario:
    """One AP, one grandmaster-capable master, one pure slave sharing it."""
    a1 = ApSpec(ap_id(1), beacon_period=round(beacon_period_s * S))
    gm = master(sta_id(1), priority1=0, freq_error_ppm=master_freq_ppm, **engine_kw)
    sc = slave(
        sta_id(2),
        freq_error_ppm=slave_freq_ppm,
        initial_offset_ns=slave_initial_offset_ns,
        **engine_kw,
    )
    topo = build_topology(
        [a1],
        [gm, sc],
        [(a1.node_id, gm.node_id), (a1.node_id, sc.node_id)],
        {gm.node_id: a1.node_id, sc.node_id: a1.node_id},
    )
    return Scenario(
        topology=topo,
        loss=loss or LossModel(),
        duration=round(duration_s * S),
        seed=seed,
        timestamp_jitter_ns=jitter_ns,
        tick_period=round(tick_period_s * S),
        snapshot_period=round(snapshot_period_s * S),
        name="single_hop",
    )


def chain_scenario(
    hops: int = 4,
    *,
    duration_s: float = 120.0,
    seed: int = 7,
    freq_step_ppm: float = 10.0,
    jitter_ns: int = 0,
    rate_correction_enabled: bool = False,
    **engine_kw,
) -> Scenario:
    """A forced chain: AP_k is heard only by station k and station k+1.

    Station 0 is the grandmaster; station `hops` is a pure slave; stations in
    between are boundary clocks.  Hop count equals index.
    """
    aps = [ApSpec(ap_id(k + 1), beacon_phase=k * 10_000_000) for k in range(hops)]
    stas = []
    for k in range(hops + 1):
        freq = freq_step_ppm * k
        kwargs = dict(rate_correction_enabled=rate_correction_enabled, **engine_kw)
        if k == 0:
            stas.append(
                master(sta_id(1), priority1=0, freq_error_ppm=freq, gc_error_ns=0, **kwargs)
            )
        elif k < hops:
            stas.append(
                master(sta_id(k + 1), priority1=10 + k, freq_error_ppm=freq, **kwargs)
            )
        else:
            stas.append(slave(sta_id(k + 1), freq_error_ppm=freq, **kwargs))
    hearability = set()
    association = {}
    for k in range(hops):
        hearability.add((aps[k].node_id, stas[k].node_id))
        hearability.add((aps[k].node_id, stas[k + 1].node_id))
    for k, sta in enumerate(stas):
        association[sta.node_id] = aps[min(k, hops - 1)].node_id
    topo = build_topology(aps, stas, hearability, association)
    return Scenario(
        topology=topo,
        duration=round(duration_s * S),
        seed=seed,
        timestamp_jitter_ns=jitter_ns,
        name=f"chain{hops}",
    )


def canonical_scenario(
    *, duration_s: float = 300.0, seed: int = 42, loss: LossModel | None = None
) -> Scenario:
    """The reference overlapping-BSS topology: six APs, six boundary-capable
    masters M1..M6 (M1 the grandmaster), four pure slaves S1..S4.

    S3 hears only an AP outside M1's range, so it can synchronize only
    indirectly; S4 sits in a region reachable over two distinct paths.
    """
    a = {k: ApSpec(ap_id(k), beacon_phase=(k * 17_000_000) % 102_400_000)
         for k in (1, 2, 3, 4, 5, 7)}
    m = {
        1: master(sta_id(1), priority1=0, freq_error_ppm=0.0, gc_error_ns=100),
        2: master(sta_id(2), priority1=10, freq_error_ppm=8.0),
        3: master(sta_id(3), priority1=11, freq_error_ppm=-6.0),
        4: master(sta_id(4), priority1=12, freq_error_ppm=12.0),
        5: master(sta_id(5), priority1=13, freq_error_ppm=-11.0),
        6: master(sta_id(6), priority1=14, freq_error_ppm=7.0),
    }
    s = {
        1: slave(sta_id(11), freq_error_ppm=15.0, initial_offset_ns=-40_000),
        2: slave(sta_id(12), freq_error_ppm=-14.0, initial_offset_ns=25_000),
        3: slave(sta_id(13), freq_error_ppm=9.0, initial_offset_ns=-10_000),
        4: slave(sta_id(14), freq_error_ppm=-8.0, initial_offset_ns=30_000),
    }
    hear = {
        (a[1].node_id, m[1].node_id),
        (a[2].node_id, m[1].node_id),
        (a[3].node_id, m[1].node_id),
        (a[1].node_id, s[1].node_id),
        (a[3].node_id, s[2].node_id),
        (a[3].node_id, m[2].node_id),
        (a[4].node_id, m[2].node_id),
        (a[5].node_id, m[2].node_id),
        (a[4].node_id, s[3].node_id),
        (a[4].node_id, m[4].node_id),
        (a[7].node_id, m[4].node_id),
        (a[5].node_id, m[3].node_id),
        (a[5].node_id, m[5].node_id),
        (a[7].node_id, m[5].node_id),
        (a[7].node_id, m[6].node_id),
        (a[7].node_id, s[4].node_id),
    }
    assoc = {
        m[1].node_id: a[1].node_id,
        m[2].node_id: a[4].node_id,
        m[3].node_id: a[5].node_id,
        m[4].node_id: a[4].node_id,
        m[5].node_id: a[5].node_id,
        m[6].node_id: a[7].node_id,
        s[1].node_id: a[1].node_id,
        s[2].node_id: a[3].node_id,
        s[3].node_id: a[4].node_id,
        s[4].node_id: a[7].node_id,
    }
    topo = build_topology(list(a.values()), list(m.values()) + list(s.values()), hear, assoc)
    return Scenario(
        topology=topo,
        loss=loss or LossModel(),
        duration=round(duration_s * S),
        seed=seed,
        name="canonical",
    )


def failover_scenario(
    *,
    duration_s: float = 400.0,
    seed: int = 5,
    exile_at_s: float = 100.0,
    return_at_s: float = 260.0,
) -> Scenario:
    """Two grandmaster-capable nodes; the better one (G1) is scripted out of
    radio range mid-run and back again later via mobility events.
    """
    a1, a2, a3 = ApSpec(ap_id(1)), ApSpec(ap_id(2), beacon_phase=30_000_000), ApSpec(
        ap_id(3), beacon_phase=60_000_000
    )
    a_iso = ApSpec(ap_id(9), beacon_phase=90_000_000)
    g1 = master(sta_id(1), priority1=0, freq_error_ppm=0.0, gc_error_ns=100)
    g2 = master(sta_id(2), priority1=5, freq_error_ppm=4.0, gc_error_ns=500)
    m3 = master(sta_id(3), priority1=20, freq_error_ppm=-7.0)
    m4 = master(sta_id(4), priority1=21, freq_error_ppm=9.0)
    s5 = slave(sta_id(5), freq_error_ppm=12.0)
    s6 = slave(sta_id(6), freq_error_ppm=-10.0)
    hear = {
        (a1.node_id, g1.node_id),
        (a2.node_id, g1.node_id),
        (a1.node_id, m3.node_id),
        (a2.node_id, m3.node_id),
        (a2.node_id, g2.node_id),
        (a3.node_id, g2.node_id),
        (a2.node_id, m4.node_id),
        (a3.node_id, m4.node_id),
        (a1.node_id, s5.node_id),
        (a3.node_id, s6.node_id),
        (a_iso.node_id, g1.node_id),  # exile island, present from the start
    }
    assoc = {
        g1.node_id: a1.node_id,
        g2.node_id: a3.node_id,
        m3.node_id: a1.node_id,
        m4.node_id: a2.node_id,
        s5.node_id: a1.node_id,
        s6.node_id: a3.node_id,
    }
    exile = round(exile_at_s * S)
    comeback = round(return_at_s * S)
    mobility = [
        MobilityEvent(exile, "remove", a1.node_id, g1.node_id,
                      reassociate_to=a_iso.node_id),
        MobilityEvent(exile, "remove", a2.node_id, g1.node_id),
        MobilityEvent(comeback, "add", a1.node_id, g1.node_id,
                      reassociate_to=a1.node_id),
        MobilityEvent(comeback, "add", a2.node_id, g1.node_id),
    ]
    topo = build_topology([a1, a2, a3, a_iso], [g1, g2, m3, m4, s5, s6], hear, assoc)
    return Scenario(
        topology=topo,
        mobility=mobility,
        duration=round(duration_s * S),
        seed=seed,
        tick_period=100_000_000,
        name="failover",
    )
