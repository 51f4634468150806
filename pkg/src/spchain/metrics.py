"""Structured run output and its JSON / CSV emission.

Field order is fixed by the dataclass definitions, and every float is
rounded before serialization, so identical runs give identical bytes.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Sequence

import numpy as np

if TYPE_CHECKING:
    from .sim.world import World

SCHEMA_VERSION = 1
LIVENESS_WINDOW = 8
_DIGITS = 6


def _r(x: float) -> float:
    return round(float(x), _DIGITS)


@dataclass
class LatencyStats:
    count: int = 0
    mean_s: float = 0.0
    median_s: float = 0.0
    p95_s: float = 0.0

    @classmethod
    def from_ms(cls, samples: Sequence[int]) -> "LatencyStats":
        if len(samples) == 0:
            return cls()
        arr = np.asarray(samples, dtype=np.float64) / 1000.0
        return cls(len(arr), _r(arr.mean()), _r(np.median(arr)), _r(np.percentile(arr, 95)))


@dataclass
class AtomicityStats:
    withdrawals: int = 0
    completed: int = 0
    completion_rate: float = 1.0
    latency: LatencyStats = field(default_factory=LatencyStats)


@dataclass
class DurationStats:
    count: int = 0
    min_ms: int = 0
    max_ms: int = 0
    mean_ms: float = 0.0


@dataclass
class ShardMetrics:
    shard: int
    blocks_committed: int = 0
    slots_elapsed: int = 0
    committed_tx: int = 0
    throughput_tps: float = 0.0
    stalled_windows: int = 0
    longest_failed_run: int = 0

    CSV_FIELDS = ("shard", "blocks_committed", "slots_elapsed", "committed_tx", "throughput_tps",
                  "stalled_windows", "longest_failed_run")


@dataclass
class MetricsReport:
    schema_version: int = SCHEMA_VERSION
    scenario: dict = field(default_factory=dict)
    slots: int = 0
    simulated_ms: int = 0
    committed_tx: int = 0
    throughput_tps: float = 0.0
    latency: LatencyStats = field(default_factory=LatencyStats)
    atomicity: AtomicityStats = field(default_factory=AtomicityStats)
    blocks_committed: int = 0
    per_shard: list[ShardMetrics] = field(default_factory=list)
    proof_bytes_total: int = 0
    proof_bytes_per_tx: float = 0.0
    cross_shard_batches: int = 0
    safety_violations: int = 0
    safety: dict[str, int] = field(default_factory=dict)
    liveness_stalls: int = 0
    leader_honesty_fraction: float = 0.0
    slot_duration: DurationStats = field(default_factory=DurationStats)
    slot_interval_ms: float = 0.0
    delta_violations: int = 0
    epochs: int = 1
    epoch_failures: int = 0
    state_blocks: int = 0
    drain_slots: int = 0
    invalid_messages: dict[str, int] = field(default_factory=dict)
    batch_rejections: dict[str, int] = field(default_factory=dict)
    committed_unknown: int = 0
    synced_blocks: int = 0
    desync_events: int = 0
    suppressed_messages: int = 0
    aborted: bool = False
    events_processed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        d = dict(data)
        d["latency"] = LatencyStats(**d["latency"])
        atom = dict(d["atomicity"])
        atom["latency"] = LatencyStats(**atom["latency"])
        d["atomicity"] = AtomicityStats(**atom)
        d["slot_duration"] = DurationStats(**d["slot_duration"])
        d["per_shard"] = [ShardMetrics(**row) for row in d["per_shard"]]
        return cls(**d)


def report_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def report_csv(report: MetricsReport) -> str:
    """Per-shard section: one header row plus one row per shard."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ShardMetrics.CSV_FIELDS)
    for row in report.per_shard:
        writer.writerow([getattr(row, f) for f in ShardMetrics.CSV_FIELDS])
    return buf.getvalue()


def emit_report(report: MetricsReport, path: str | Path, fmt: str | None = None) -> Path:
    """Write ``report`` as ``json`` or ``csv`` (inferred from the suffix by default)."""
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "json")
    if fmt not in ("json", "csv"):
        raise ValueError(f"unknown report format {fmt!r}")
    text = report_json(report) if fmt == "json" else report_csv(report)
    path.write_text(text)
    return path


# -- construction from a finished world ----------------------------------------

def empty_report(scenario: dict[str, Any], m: int) -> MetricsReport:
    return MetricsReport(scenario=scenario, per_shard=[ShardMetrics(s) for s in range(m)])


def _failed_runs(outcomes: list[bool]) -> tuple[int, int]:
    """(stalled sliding windows, longest run of failed slots)."""
    stalled = 0
    for start in range(0, len(outcomes) - LIVENESS_WINDOW + 1):
        if not any(outcomes[start:start + LIVENESS_WINDOW]):
            stalled += 1
    longest = run = 0
    for ok in outcomes:
        run = 0 if ok else run + 1
        longest = max(longest, run)
    return stalled, longest


def build_report(world: "World") -> MetricsReport:
    cfg = world.config
    rep = MetricsReport(scenario=cfg.to_dict(), slots=cfg.slots, simulated_ms=int(world.queue.now))
    total_tps = 0.0
    intervals: list[int] = []
    for sv in world.shards:
        main = [(slot, ntx, t) for slot, ntx, t in sv.canon_blocks if slot <= cfg.slots]
        row = ShardMetrics(sv.shard_id, blocks_committed=len(main), slots_elapsed=min(sv.max_slot, cfg.slots))
        row.committed_tx = sum(ntx for _, ntx, _ in main)
        if len(main) >= 2:
            span = main[-1][2] - main[0][2]
            if span > 0:
                row.throughput_tps = _r(sum(ntx for _, ntx, _ in main[1:]) * 1000.0 / span)
            intervals.extend(b[2] - a[2] for a, b in zip(main, main[1:]))
        committed_slots = {slot for slot, _, _ in main}
        outcomes = [s in committed_slots for s in range(1, row.slots_elapsed + 1)]
        row.stalled_windows, row.longest_failed_run = _failed_runs(outcomes)
        total_tps += row.throughput_tps
        rep.per_shard.append(row)
    rep.committed_tx = sum(r.committed_tx for r in rep.per_shard)
    rep.blocks_committed = sum(r.blocks_committed for r in rep.per_shard)
    rep.throughput_tps = _r(total_tps)
    rep.slot_interval_ms = _r(np.mean(intervals)) if intervals else 0.0
    rep.liveness_stalls = sum(r.stalled_windows for r in rep.per_shard)
    rep.latency = LatencyStats.from_ms(world.confirm_latencies)
    withdrawn = len(world.withdrawn)
    completed = sum(1 for link in world.withdrawn if link in world.deposited)
    rep.atomicity = AtomicityStats(withdrawn, completed, _r(completed / withdrawn) if withdrawn else 1.0,
                                   LatencyStats.from_ms(world.atomic_latencies))
    rep.proof_bytes_total = world.proof_bytes
    rep.proof_bytes_per_tx = _r(world.proof_bytes / world.proof_txs) if world.proof_txs else 0.0
    rep.cross_shard_batches = world.batches_sent
    rep.safety = dict(sorted(world.safety.items()))
    rep.safety_violations = sum(world.safety.values())
    leaders = [honest for sv in world.shards for honest in sv.leader_honest.values()]
    rep.leader_honesty_fraction = _r(sum(leaders) / len(leaders)) if leaders else 0.0
    d = world.slot_durations
    if d:
        rep.slot_duration = DurationStats(len(d), int(min(d)), int(max(d)), _r(np.mean(d)))
    rep.delta_violations = world.delta_violations
    rep.epochs = world.epoch + 1
    rep.epoch_failures = world.epoch_failures
    rep.state_blocks = world.state_blocks
    rep.drain_slots = world.drain_slots
    rep.invalid_messages = dict(sorted(world.invalid.items()))
    merged: dict[str, int] = {}
    for sv in world.shards:
        for k, v in sv.inbox.rejected.items():
            merged[k] = merged.get(k, 0) + v
    rep.batch_rejections = dict(sorted(merged.items()))
    rep.committed_unknown = world.committed_unknown
    rep.synced_blocks = sum(node.synced for node in world.nodes.values())
    rep.desync_events = world.desyncs
    rep.suppressed_messages = world.suppressed
    rep.aborted = world.aborted
    rep.events_processed = world.queue.processed
    return rep
