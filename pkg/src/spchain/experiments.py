"""Scenario runs and one-axis mode comparisons."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TextIO

from .config import ScenarioConfig
from .consensus import ConsensusMode, LeaderMode
from .crossshard import BATCHED, PER_TX
from .metrics import MetricsReport
from .sim.world import World

# first value is the protocol as designed; the others are ablations
AXES: dict[str, tuple[str, tuple]] = {
    "consensus": ("consensus", (ConsensusMode.CONCURRENT, ConsensusMode.SERIAL2, ConsensusMode.SERIAL3)),
    "leader": ("leader", (LeaderMode.ROTATION, LeaderMode.STATIC)),
    "proofs": ("proofs", (BATCHED, PER_TX)),
}

_COLUMNS = (
    ("throughput_tps", lambda r: r.throughput_tps),
    ("latency_mean_s", lambda r: r.latency.mean_s),
    ("blocks_committed", lambda r: r.blocks_committed),
    ("slot_interval_ms", lambda r: r.slot_interval_ms),
    ("proof_bytes_per_tx", lambda r: r.proof_bytes_per_tx),
    ("safety_violations", lambda r: r.safety_violations),
)


def run_scenario(config: ScenarioConfig, trace: TextIO | None = None) -> MetricsReport:
    return World(config, trace).run()


def _label(value) -> str:
    return getattr(value, "value", value)


@dataclass
class Comparison:
    axis: str
    modes: list[str]
    reports: dict[str, MetricsReport] = field(default_factory=dict)

    def metric(self, mode: str, name: str) -> float:
        return dict(_COLUMNS)[name](self.reports[mode])

    def relative(self, name: str, mode: str | None = None, baseline: str | None = None) -> float | None:
        """``mode / baseline - 1`` for one metric; defaults compare the first mode to the second."""
        mode = mode or self.modes[0]
        baseline = baseline or self.modes[1]
        base = self.metric(baseline, name)
        if not base:
            return None
        return self.metric(mode, name) / base - 1

    def gain(self, baseline: str | None = None) -> float | None:
        return self.relative("throughput_tps", self.modes[0], baseline)

    def format_table(self) -> str:
        head = f"{'metric':<20}" + "".join(f"{m:>20}" for m in self.modes)
        lines = [f"axis: {self.axis}", head]
        for name, get in _COLUMNS:
            lines.append(f"{name:<20}" + "".join(f"{get(self.reports[m]):>20}" for m in self.modes))
        for other in self.modes[1:]:
            rel = self.relative("throughput_tps", self.modes[0], other)
            shown = f"{rel:+.1%}" if rel is not None else "n/a"
            lines.append(f"throughput {self.modes[0]} vs {other}: {shown}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        out = {"axis": self.axis, "modes": self.modes, "metrics": {}, "relative_throughput": {}}
        for m in self.modes:
            out["metrics"][m] = {name: get(self.reports[m]) for name, get in _COLUMNS}
        for other in self.modes[1:]:
            out["relative_throughput"][f"{self.modes[0]}/{other}"] = self.relative(
                "throughput_tps", self.modes[0], other)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def compare_modes(config: ScenarioConfig, axis: str, modes: tuple | None = None) -> Comparison:
    """Run ``config`` once per mode on ``axis`` with the same seed."""
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}; expected one of {', '.join(AXES)}")
    field_name, values = AXES[axis]
    values = modes or values
    cmp = Comparison(axis, [_label(v) for v in values])
    for value in values:
        cmp.reports[_label(value)] = run_scenario(config.replace(**{field_name: value}))
    return cmp
