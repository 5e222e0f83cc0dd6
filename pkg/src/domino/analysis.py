"""Post-run trace analytics and CSV export.

A :class:`Trace` is the complete record of one simulation run: protocol
events, clock corrections, message fates, and periodic clock snapshots, all
stamped with true (simulation) time.  Node identifiers appear as 12-hex-digit
strings throughout so the derived tables round-trip cleanly through CSV.

Synchronization error is defined against the acting grandmaster's local time
(not true time): a node is synchronized when it agrees with the reference
clock, wherever that reference happens to drift.
"""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

from .wire import ClockQuality


class TraceRecord(NamedTuple):
    t: int  # true time, ns
    node: Optional[str]  # 12-hex id, None for global records
    kind: str
    detail: dict


@dataclass(frozen=True)
class NodeInfo:
    node_id: str
    kind: str  # "ffts" | "rfts"
    gc_capable: bool
    q_local: ClockQuality
    freq_error_ppm: float
    t_fup: int


@dataclass
class Trace:
    records: list[TraceRecord] = field(default_factory=list)
    nodes: dict[str, NodeInfo] = field(default_factory=dict)
    aps: list[str] = field(default_factory=list)
    duration: int = 0
    seed: int = 0
    snapshot_period: int = 100_000_000

    def add(self, t: int, node: Optional[str], kind: str, **detail) -> None:
        self.records.append(TraceRecord(t, node, kind, detail))

    def span(self) -> tuple[int, int]:
        if not self.records:
            return (0, 0)
        return (self.records[0].t, self.records[-1].t)


@dataclass(frozen=True)
class TreeSnapshot:
    time: int
    edges: frozenset[tuple[str, str]]  # (child, parent)
    root: Optional[str]  # acting grandmaster
    cycle: Optional[tuple[str, ...]] = None  # protocol violation when present

    @property
    def valid(self) -> bool:
        return self.cycle is None


@dataclass
class PairingStats:
    fups_rx: int = 0
    fups_paired: int = 0
    histogram: dict[int, int] = field(default_factory=dict)

    @property
    def max_matches(self) -> int:
        return max((m for m in self.histogram if m > 0), default=0)

    @property
    def success_rate(self) -> float:
        return self.fups_paired / self.fups_rx if self.fups_rx else 0.0


class AnalysisError(Exception):
    pass


# --- snapshot navigation ------------------------------------------------------


def snapshot_series(trace: Trace) -> dict[str, list[tuple[int, dict]]]:
    """Per-node snapshot rows ordered by time."""
    series: dict[str, list[tuple[int, dict]]] = {nid: [] for nid in trace.nodes}
    for rec in trace.records:
        if rec.kind == "snapshot":
            series[rec.node].append((rec.t, rec.detail))
    return series


def _acting_gc_from(detail_by_node: dict[str, dict], trace: Trace) -> Optional[str]:
    best = None
    for nid, detail in detail_by_node.items():
        info = trace.nodes[nid]
        if detail["acting_gc"]:
            if best is None or info.q_local < trace.nodes[best].q_local:
                best = nid
    return best


def snapshot_times(trace: Trace) -> list[int]:
    times = sorted({rec.t for rec in trace.records if rec.kind == "snapshot"})
    return times


def _grid(trace: Trace) -> tuple[list[int], dict[int, dict[str, dict]]]:
    """Snapshot grid: times plus per-time {node: detail} maps."""
    by_time: dict[int, dict[str, dict]] = {}
    for rec in trace.records:
        if rec.kind == "snapshot":
            by_time.setdefault(rec.t, {})[rec.node] = rec.detail
    times = sorted(by_time)
    return times, by_time


def error_series(trace: Trace) -> dict[str, list[tuple[int, Optional[int]]]]:
    """Per node: (snapshot time, local minus acting-grandmaster local) in ns.

    None when no grandmaster is acting at that instant.
    """
    times, by_time = _grid(trace)
    out: dict[str, list[tuple[int, Optional[int]]]] = {n: [] for n in trace.nodes}
    for t in times:
        row = by_time[t]
        gc = _acting_gc_from(row, trace)
        gc_local = row[gc]["local"] if gc is not None else None
        for nid in trace.nodes:
            if nid not in row:
                continue
            err = None if gc_local is None else row[nid]["local"] - gc_local
            out[nid].append((t, err))
    return out


def sync_error(trace: Trace, node: str, t: int) -> float:
    """Node's disciplined time minus the acting grandmaster's at true time t.

    Reads both clocks from the snapshot grid with linear interpolation.
    """
    if node not in trace.nodes:
        raise AnalysisError(f"unknown node {node!r}")
    times, by_time = _grid(trace)
    if not times:
        raise AnalysisError("trace has no snapshots")
    if not times[0] <= t <= times[-1]:
        raise AnalysisError(f"t={t} outside snapshot span [{times[0]}, {times[-1]}]")

    hi = bisect.bisect_left(times, t)
    if times[hi] == t:
        lo = hi
    else:
        lo = hi - 1

    def local_at(nid: str, idx: int) -> int:
        return by_time[times[idx]][nid]["local"]

    def interp(nid: str) -> float:
        if lo == hi:
            return float(local_at(nid, lo))
        t0, t1 = times[lo], times[hi]
        v0, v1 = local_at(nid, lo), local_at(nid, hi)
        return v0 + (v1 - v0) * (t - t0) / (t1 - t0)

    gc = _acting_gc_from(by_time[times[lo]], trace)
    if gc is None:
        raise AnalysisError(f"no acting grandmaster at t={t}")
    return interp(node) - interp(gc)


# --- tree reconstruction --------------------------------------------------------


def _parents_at(trace: Trace, t: int) -> dict[str, Optional[str]]:
    parents: dict[str, Optional[str]] = {nid: None for nid in trace.nodes}
    for rec in trace.records:
        if rec.t > t:
            break
        if rec.kind == "parent_change":
            parents[rec.node] = rec.detail["new"]
    return parents


def _find_cycle(parents: dict[str, Optional[str]]) -> Optional[tuple[str, ...]]:
    done: set[str] = set()
    for start in parents:
        if start in done:
            continue
        path: list[str] = []
        seen_here: dict[str, int] = {}
        cur: Optional[str] = start
        while cur is not None and cur not in done:
            if cur in seen_here:
                return tuple(path[seen_here[cur]:])
            seen_here[cur] = len(path)
            path.append(cur)
            cur = parents.get(cur)
        done.update(path)
    return None


def _best_root(parents: dict[str, Optional[str]], trace: Trace) -> Optional[str]:
    candidates = [
        nid
        for nid, parent in parents.items()
        if parent is None and trace.nodes[nid].gc_capable
    ]
    if not candidates:
        return None
    return min(candidates, key=lambda nid: trace.nodes[nid].q_local)


def extract_tree(trace: Trace, t: int) -> TreeSnapshot:
    """Parent pointers in force at true time t, with validity checks."""
    lo, hi = trace.span()
    if not lo <= t <= hi:
        raise AnalysisError(f"t={t} outside trace span [{lo}, {hi}]")
    parents = _parents_at(trace, t)
    edges = frozenset(
        (child, parent) for child, parent in parents.items() if parent is not None
    )
    cycle = _find_cycle(parents)
    return TreeSnapshot(
        time=t, edges=edges, root=_best_root(parents, trace), cycle=cycle
    )


def reachable_from(tree: TreeSnapshot, root: str) -> set[str]:
    """Nodes whose parent chain ends at `root` (root included)."""
    children: dict[str, set[str]] = {}
    for child, parent in tree.edges:
        children.setdefault(parent, set()).add(child)
    seen = {root}
    stack = [root]
    while stack:
        cur = stack.pop()
        for child in children.get(cur, ()):
            if child not in seen:
                seen.add(child)
                stack.append(child)
    return seen


def validate_trace(trace: Trace) -> list[str]:
    """Protocol-violation report: any parent-pointer cycle at any instant.

    Checked incrementally after every parent change, so violations between
    snapshot times are caught too.
    """
    violations: list[str] = []
    parents: dict[str, Optional[str]] = {nid: None for nid in trace.nodes}
    for rec in trace.records:
        if rec.kind != "parent_change":
            continue
        parents[rec.node] = rec.detail["new"]
        cycle = _find_cycle(parents)
        if cycle is not None:
            violations.append(
                f"t={rec.t / 1e9:.6f}s parent cycle: {' -> '.join(cycle)}"
            )
    return violations


# --- timing metrics ----------------------------------------------------------------


def settled_time(trace: Trace) -> Optional[int]:
    """End of the last parent/reference change plus three FUP periods.

    None when the run never stays quiet that long.
    """
    t_fup_max = max((info.t_fup for info in trace.nodes.values()), default=0)
    last_change = 0
    for rec in trace.records:
        if rec.kind in ("parent_change", "qref_change"):
            last_change = rec.t
    settle_at = last_change + 3 * t_fup_max
    return settle_at if settle_at <= trace.duration else None


def convergence_time(trace: Trace, threshold_ns: int) -> dict[str, Optional[int]]:
    """Per node: first time from which |error| stays under the threshold for
    at least three FUP periods; None when that never happens.

    The settled acting grandmaster converges at 0 by definition.
    """
    errors = error_series(trace)
    out: dict[str, Optional[int]] = {}
    # Root at the end of the run, for the by-definition case.
    final_root = None
    times = snapshot_times(trace)
    if times:
        final_root = extract_tree(trace, times[-1]).root
    for nid, series in errors.items():
        window = 3 * trace.nodes[nid].t_fup
        if nid == final_root:
            out[nid] = 0
            continue
        result: Optional[int] = None
        n = len(series)
        for i, (t0, err) in enumerate(series):
            if err is None or abs(err) >= threshold_ns:
                continue
            # Find whether the series stays below threshold over the window.
            ok = True
            j = i
            covered_to = t0
            while j < n and covered_to < t0 + window:
                tj, ej = series[j]
                if ej is None or abs(ej) >= threshold_ns:
                    ok = False
                    break
                covered_to = tj
                j += 1
            if ok and covered_to >= t0 + window:
                result = t0
                break
            if ok and j >= n:
                # Below threshold through the end of the trace but the window
                # extends past it: not enough evidence.
                break
        out[nid] = result
    return out


def pairing_stats(trace: Trace) -> dict[tuple[str, str], PairingStats]:
    """Per (master, slave) link: FUPs received, paired, match-count histogram."""
    stats: dict[tuple[str, str], PairingStats] = {}
    for rec in trace.records:
        if rec.kind != "fup_rx":
            continue
        key = (rec.detail["sender"], rec.node)
        st = stats.setdefault(key, PairingStats())
        st.fups_rx += 1
        matches = rec.detail["matches"]
        st.histogram[matches] = st.histogram.get(matches, 0) + 1
        if matches > 0:
            st.fups_paired += 1
    return stats


def message_conservation(trace: Trace) -> dict[str, tuple[int, int, int]]:
    """Per message class: (delivery attempts, delivered, dropped)."""
    out = {}
    for cls in ("beacon", "fup"):
        delivered = sum(1 for r in trace.records if r.kind == f"{cls}_rx")
        dropped = sum(1 for r in trace.records if r.kind == f"{cls}_drop")
        attempts = sum(
            r.detail["receivers"] for r in trace.records if r.kind == f"{cls}_tx"
        )
        out[cls] = (attempts, delivered, dropped)
    return out


# --- CSV export -----------------------------------------------------------------------


def _fmt_time(t_ns: int) -> str:
    return repr(t_ns / 1e9)


def _fmt_detail(detail: dict) -> str:
    return ";".join(f"{k}={detail[k]}" for k in sorted(detail))


def export_errors_csv(trace: Trace, path: Path) -> None:
    errors = error_series(trace)
    rows = []
    for nid in sorted(errors):
        for t, err in errors[nid]:
            if err is not None:
                rows.append((t, nid, err))
    rows.sort(key=lambda r: (r[0], r[1]))
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true_time_s", "node_id", "error_ns"])
        for t, nid, err in rows:
            writer.writerow([_fmt_time(t), nid, err])


def export_tree_csv(trace: Trace, path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true_time_s", "child_id", "parent_id"])
        for rec in trace.records:
            if rec.kind == "parent_change":
                writer.writerow(
                    [_fmt_time(rec.t), rec.node, rec.detail["new"] or ""]
                )


def export_events_csv(trace: Trace, path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true_time_s", "node_id", "kind", "detail"])
        for rec in trace.records:
            if rec.kind == "snapshot":
                continue
            writer.writerow(
                [_fmt_time(rec.t), rec.node or "", rec.kind, _fmt_detail(rec.detail)]
            )


def export_pairing_csv(trace: Trace, path: Path) -> None:
    stats = pairing_stats(trace)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["master_id", "slave_id", "fups_rx", "fups_paired", "max_matches"]
        )
        for (master, slave) in sorted(stats):
            st = stats[(master, slave)]
            writer.writerow([master, slave, st.fups_rx, st.fups_paired, st.max_matches])


def export_all(trace: Trace, outdir: Path) -> list[Path]:
    """Write the four standard tables; returns the written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, fn in (
        ("errors.csv", export_errors_csv),
        ("tree.csv", export_tree_csv),
        ("events.csv", export_events_csv),
        ("pairing.csv", export_pairing_csv),
    ):
        target = outdir / name
        try:
            fn(trace, target)
        except OSError as exc:
            raise AnalysisError(f"cannot write {target}: {exc}") from exc
        paths.append(target)
    return paths
