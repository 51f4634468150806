"""Scenario configuration: JSON loading, presets and validation.

Validation errors name the offending field with a dotted path, e.g.
``workload.cross_shard_fraction: must be in [0, 1]``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .consensus import ConsensusMode, LeaderMode, ProtocolParams, TimingParams
from .crossshard import BATCHED, PER_TX
from .planner import REFERENCE_SIZES, REFERENCE_TIMING
from .types import DEFAULT_BLOCK_CAPACITY, DEFAULT_PAYLOAD_SIZE, ConfigError

STRATEGIES = ("equivocate", "silence", "tamper", "forge-signature")


@dataclass(frozen=True)
class LatencyConfig:
    base_ms: float = 100.0
    jitter_mean_ms: float = 30.0
    bandwidth_bps: float = 20e6


@dataclass(frozen=True)
class WorkloadConfig:
    # system-wide tx/s, or "saturated" to fill blocks at the nominal slot rate
    rate: float | str = 200.0
    cross_shard_fraction: float = 0.5
    accounts_per_shard: int = 1024
    initial_balance: int = 10 ** 9
    max_amount: int = 100
    load_factor: float = 0.95  # used by "saturated"


@dataclass(frozen=True)
class AdversaryConfig:
    byzantine_fraction: float = 0.0  # per shard
    strategies: tuple[str, ...] = STRATEGIES
    target_leader_p: float = 0.0
    # target-leader attacks consume corruption budget (Byzantine attackers only)
    target_counts_against_budget: bool = False


@dataclass(frozen=True)
class LatencyEvent:
    at_slot: int
    scale: float


@dataclass(frozen=True)
class DeltaUpdate:
    at_slot: int
    delta_d: int
    delta_b: int
    delta_v: int


@dataclass(frozen=True)
class ScenarioConfig:
    m: int = 4
    k: int = 20
    timing: TimingParams = field(default_factory=lambda: REFERENCE_TIMING[4])
    latency: LatencyConfig = field(default_factory=LatencyConfig)
    capacity: int = DEFAULT_BLOCK_CAPACITY
    payload_size: int = DEFAULT_PAYLOAD_SIZE
    t_pack: int = 500
    t_insert: int = 450
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    slots: int = 20
    slots_per_epoch: int = 0  # 0: one epoch for the whole run
    churn_fraction: float = 0.1
    rng_seed: int = 0
    consensus: ConsensusMode = ConsensusMode.CONCURRENT
    leader: LeaderMode = LeaderMode.ROTATION
    proofs: str = BATCHED
    retry_slots: int = 10
    drain_honest_slots: int = 20
    max_drain_slots: int = 200
    batch_fanout: int = 8
    clock_skew_ms: int = 10_000
    latency_events: tuple[LatencyEvent, ...] = ()
    delta_updates: tuple[DeltaUpdate, ...] = ()
    expected_unsafe: bool = False
    trace: bool = False
    genesis_file: str | None = None

    def __post_init__(self) -> None:
        validate(self)

    @property
    def n(self) -> int:
        return self.m * self.k

    @property
    def byzantine_per_shard(self) -> int:
        return math.floor(self.k * self.adversary.byzantine_fraction + 1e-9)

    def protocol(self, timing: TimingParams | None = None) -> ProtocolParams:
        return ProtocolParams(timing or self.timing, self.t_pack, self.t_insert,
                              self.consensus, self.leader, self.capacity)

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, (ConsensusMode, LeaderMode)):
        return value.value
    return value


def _fail(path: str, msg: str) -> None:
    raise ConfigError(f"{path}: {msg}")


def validate(cfg: ScenarioConfig) -> None:
    if cfg.m < 1:
        _fail("m", "must be >= 1")
    if cfg.k < 1:
        _fail("k", "must be >= 1")
    if cfg.capacity < 1:
        _fail("capacity", "must be >= 1")
    if cfg.slots < 0:
        _fail("slots", "must be >= 0")
    if cfg.slots_per_epoch < 0:
        _fail("slots_per_epoch", "must be >= 0")
    if not 0 <= cfg.churn_fraction <= 1:
        _fail("churn_fraction", "must be in [0, 1]")
    if cfg.t_pack < 0 or cfg.t_insert < 0:
        _fail("t_pack" if cfg.t_pack < 0 else "t_insert", "must be >= 0")
    if cfg.proofs not in (BATCHED, PER_TX):
        _fail("proofs", f"must be one of {BATCHED}, {PER_TX}")
    if cfg.retry_slots < 1:
        _fail("retry_slots", "must be >= 1")
    if cfg.batch_fanout < 1:
        _fail("batch_fanout", "must be >= 1")
    lat = cfg.latency
    if lat.base_ms < 0 or lat.jitter_mean_ms < 0 or lat.bandwidth_bps <= 0:
        _fail("latency", "base and jitter must be >= 0, bandwidth > 0")
    w = cfg.workload
    if isinstance(w.rate, str):
        if w.rate != "saturated":
            _fail("workload.rate", "must be a number or 'saturated'")
    elif w.rate < 0:
        _fail("workload.rate", "must be >= 0")
    if not 0 <= w.cross_shard_fraction <= 1:
        _fail("workload.cross_shard_fraction", "must be in [0, 1]")
    if cfg.m == 1 and w.cross_shard_fraction > 0:
        _fail("workload.cross_shard_fraction", "must be 0 with a single shard")
    if w.accounts_per_shard < 2:
        _fail("workload.accounts_per_shard", "must be >= 2")
    if w.max_amount < 1 or w.initial_balance < 0:
        _fail("workload", "max_amount must be >= 1 and initial_balance >= 0")
    a = cfg.adversary
    if not 0 <= a.byzantine_fraction < 1:
        _fail("adversary.byzantine_fraction", "must be in [0, 1)")
    for i, s in enumerate(a.strategies):
        if s not in STRATEGIES:
            _fail(f"adversary.strategies[{i}]", f"unknown strategy {s!r}")
    if a.byzantine_fraction > 0 and not a.strategies:
        _fail("adversary.strategies", "at least one strategy is needed")
    if not 0 <= a.target_leader_p <= 1:
        _fail("adversary.target_leader_p", "must be in [0, 1]")
    if 2 * cfg.byzantine_per_shard >= cfg.k and not cfg.expected_unsafe:
        _fail("adversary.byzantine_fraction",
              "per-shard Byzantine count must stay below k/2 unless expected_unsafe is set")
    for i, ev in enumerate(cfg.latency_events):
        if ev.scale <= 0:
            _fail(f"latency_events[{i}].scale", "must be > 0")
    for i, up in enumerate(cfg.delta_updates):
        if up.delta_d > up.delta_b or min(up.delta_d, up.delta_b, up.delta_v) <= 0:
            _fail(f"delta_updates[{i}]", "need 0 < delta_d <= delta_b and delta_v > 0")


# -- loading -----------------------------------------------------------------

def _timing_from(value: Any, m: int, path: str) -> TimingParams:
    if value in (None, "reference"):
        if m not in REFERENCE_TIMING:
            _fail(path, f"no reference timing for m={m}")
        return REFERENCE_TIMING[m]
    if not isinstance(value, Mapping):
        _fail(path, "expected an object or 'reference'")
    try:
        return TimingParams(int(value["delta_d"]), int(value["delta_b"]), int(value["delta_v"]))
    except KeyError as exc:
        _fail(f"{path}.{exc.args[0]}", "missing")
    except ConfigError as exc:
        _fail(path, str(exc))
    raise AssertionError  # unreachable


def _sub(cls: type, raw: Any, path: str) -> Any:
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        _fail(path, "expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in names:
            _fail(f"{path}.{key}", "unknown field")
        if key == "strategies":
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(raw: Mapping[str, Any]) -> ScenarioConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("<root>: expected a JSON object")
    known = {f.name for f in dataclasses.fields(ScenarioConfig)} | {"preset"}
    for key in raw:
        if key not in known:
            _fail(key, "unknown field")
    data = dict(raw)
    preset = data.pop("preset", None)
    m = data.get("m", 4)
    if not isinstance(m, int) or isinstance(m, bool):
        _fail("m", "must be an integer")
    if preset is not None:
        if preset != "reference":
            _fail("preset", "must be 'reference'")
        if m not in REFERENCE_SIZES:
            _fail("preset", f"no reference shard size for m={m}")
        data.setdefault("k", REFERENCE_SIZES[m][0])
        data.setdefault("timing", "reference")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key == "timing":
            kwargs[key] = _timing_from(value, m, "timing")
        elif key == "latency":
            kwargs[key] = _sub(LatencyConfig, value, "latency")
        elif key == "workload":
            kwargs[key] = _sub(WorkloadConfig, value, "workload")
        elif key == "adversary":
            kwargs[key] = _sub(AdversaryConfig, value, "adversary")
        elif key == "latency_events":
            kwargs[key] = tuple(_sub(LatencyEvent, v, f"latency_events[{i}]") for i, v in enumerate(value))
        elif key == "delta_updates":
            kwargs[key] = tuple(_sub(DeltaUpdate, v, f"delta_updates[{i}]") for i, v in enumerate(value))
        elif key == "consensus":
            try:
                kwargs[key] = ConsensusMode(value)
            except ValueError:
                _fail("consensus", f"unknown mode {value!r}")
        elif key == "leader":
            try:
                kwargs[key] = LeaderMode(value)
            except ValueError:
                _fail("leader", f"unknown mode {value!r}")
        else:
            kwargs[key] = value
    if "timing" not in kwargs:
        kwargs["timing"] = _timing_from(None, m, "timing") if m in REFERENCE_TIMING else REFERENCE_TIMING[4]
    for key in ("m", "k", "capacity", "slots", "rng_seed", "slots_per_epoch", "t_pack", "t_insert"):
        if key in kwargs and (not isinstance(kwargs[key], int) or isinstance(kwargs[key], bool)):
            _fail(key, "must be an integer")
    try:
        return ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"<root>: {exc}") from exc


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}") from exc
    return config_from_dict(raw)


def reference_preset(m: int = 16, **overrides: Any) -> ScenarioConfig:
    """Reference shard size and timing for ``m`` shards."""
    if m not in REFERENCE_SIZES:
        raise ConfigError(f"no preset for m={m}")
    base = ScenarioConfig(m=m, k=REFERENCE_SIZES[m][0], timing=REFERENCE_TIMING[m])
    return base.replace(**overrides) if overrides else base
