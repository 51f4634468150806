"""Epoch-security arithmetic and proof-overhead reporting.

The per-epoch failure probability is a union bound over ``m`` shards of the
hypergeometric tail "a shard of ``k`` drawn from ``n`` nodes, ``f`` of them
Byzantine, holds at least ``floor(k/2)`` Byzantine members".  Everything is
exact rational arithmetic on big-integer binomials.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

from .consensus import TimingParams
from .merkle import ROOT_SIZE
from .types import ConfigError

DEFAULT_THRESHOLD = Fraction(1, 2 ** 20)

# shard count -> (nodes per shard, reference failure probability)
REFERENCE_SIZES: dict[int, tuple[int, float]] = {
    4: (170, 4.6e-7),
    6: (190, 8e-7),
    8: (210, 5e-7),
    10: (220, 5e-7),
    12: (225, 8e-7),
    14: (230, 6e-7),
    16: (250, 2e-7),
}

REFERENCE_TIMING: dict[int, TimingParams] = {
    4: TimingParams(445, 2496, 541),
    6: TimingParams(446, 2737, 542),
    8: TimingParams(476, 2825, 581),
    10: TimingParams(497, 3236, 616),
    12: TimingParams(512, 3286, 626),
    14: TimingParams(538, 3397, 651),
    16: TimingParams(564, 3518, 683),
}


@dataclass(frozen=True)
class SecurityQuery:
    n: int
    f: int
    m: int
    threshold: Fraction = DEFAULT_THRESHOLD

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 1:
            raise ConfigError("need n >= 1 and m >= 1")
        if not 0 <= self.f <= self.n:
            raise ConfigError("need 0 <= f <= n")

    @property
    def k(self) -> int:
        return self.n // self.m

    @property
    def within_model(self) -> bool:
        """Strictly fewer than a third of the nodes are Byzantine."""
        return 3 * self.f < self.n


@dataclass(frozen=True)
class FailureEstimate:
    probability: Fraction
    clamped: bool
    uneven: bool  # m does not divide n, k was floored

    def __float__(self) -> float:
        return float(self.probability)


def default_byzantine(n: int) -> int:
    """Largest count strictly below a third of ``n``, as ``floor(n/3) - 1``."""
    return max(0, n // 3 - 1)


def shard_tail(n: int, f: int, k: int) -> Fraction:
    """P[X >= floor(k/2)] for X ~ Hypergeometric(n, f, k).

    The lower limit is at least one: with ``k = 1`` a shard holding no
    Byzantine node is not a failure.
    """
    lo = max(1, k // 2)
    if f < lo or k < lo:
        return Fraction(0)
    num = sum(math.comb(f, x) * math.comb(n - f, k - x) for x in range(lo, min(k, f) + 1))
    return Fraction(num, math.comb(n, k))


def failure_estimate(n: int, f: int, m: int) -> FailureEstimate:
    q = SecurityQuery(n, f, m)
    k = q.k
    if k < 1:
        raise ConfigError(f"n={n} nodes cannot fill m={m} shards")
    p = m * shard_tail(n, f, k)
    clamped = p > 1
    return FailureEstimate(min(p, Fraction(1)), clamped, n % m != 0)


def failure_probability(n: int, f: int, m: int) -> Fraction:
    """Union-bound epoch failure probability, exact and clamped to 1."""
    return failure_estimate(n, f, m).probability


def min_shard_size(m: int, byzantine_fraction: float, threshold: float | Fraction = DEFAULT_THRESHOLD,
                   k_max: int = 5000) -> int:
    """Smallest ``k`` whose failure probability is below ``threshold``.

    Scans ``k = 5, 10, ...`` then refines downward one node at a time.
    """
    if not 0 <= byzantine_fraction < 0.5:
        raise ConfigError("byzantine_fraction must lie in [0, 1/2)")
    threshold = Fraction(threshold)
    if threshold >= 1:
        return 1

    def ok(k: int) -> bool:
        n = m * k
        return failure_probability(n, math.floor(n * byzantine_fraction), m) < threshold

    k = 5
    while not ok(k):
        k += 5
        if k > k_max:
            raise ConfigError(f"no shard size up to {k_max} meets the threshold")
    while k > 1 and ok(k - 1):
        k -= 1
    return k


@dataclass(frozen=True)
class OverheadRow:
    dest_shard: int
    n_dest: int
    batched_per_tx: float
    per_tx_scheme: int
    batched_total: int
    per_tx_total: int


@dataclass(frozen=True)
class OverheadReport:
    m: int
    n_total: int
    rows: tuple[OverheadRow, ...]

    @property
    def batched_total(self) -> int:
        return sum(r.batched_total for r in self.rows)

    @property
    def per_tx_total(self) -> int:
        return sum(r.per_tx_total for r in self.rows)


def path_bytes(n_total: int) -> int:
    return ROOT_SIZE * max(0, (n_total - 1).bit_length())


def overhead_report(m: int, n_total: int, histogram: Mapping[int, int]) -> OverheadReport:
    """Proof bytes for one block: batched sibling roots vs one path per tx."""
    if sum(histogram.values()) > n_total:
        raise ValueError("histogram counts exceed the block size")
    per_tx = path_bytes(n_total)
    rows = []
    for dest in sorted(histogram):
        nj = histogram[dest]
        if nj <= 0:
            continue
        batched = ROOT_SIZE * (m - 1)
        rows.append(OverheadRow(dest, nj, batched / nj, per_tx, batched, nj * per_tx))
    return OverheadReport(m, n_total, tuple(rows))


@dataclass(frozen=True)
class TableRow:
    m: int
    k: int
    f: int
    probability: Fraction
    reference: float | None
    min_k: int | None = None

    @property
    def ratio(self) -> float | None:
        if not self.reference:
            return None
        return float(self.probability) / self.reference

    @property
    def years_to_failure(self) -> float:
        """Expected years until a failing epoch, one epoch per day."""
        p = float(self.probability)
        return math.inf if p == 0 else 1 / p / 365


def size_table(shards: Iterable[int] | None = None, threshold: Fraction = DEFAULT_THRESHOLD,
              search: bool = False) -> list[TableRow]:
    rows = []
    for m in (shards if shards is not None else REFERENCE_SIZES):
        k, reference = REFERENCE_SIZES.get(m, (None, None))
        if k is None:
            k = min_shard_size(m, 1 / 3 - 1e-9, threshold)
        n = m * k
        f = default_byzantine(n)
        min_k = min_shard_size(m, f / n, threshold) if search else None
        rows.append(TableRow(m, k, f, failure_probability(n, f, m), reference, min_k))
    return rows


def format_table(rows: Iterable[TableRow]) -> str:
    lines = [f"{'m':>3} {'k':>5} {'f':>6} {'P(failure)':>12} {'reference':>10} {'ratio':>6} {'years':>10}"]
    for r in rows:
        pub = f"{r.reference:.2g}" if r.reference else "-"
        ratio = f"{r.ratio:.2f}" if r.ratio is not None else "-"
        lines.append(f"{r.m:>3} {r.k:>5} {r.f:>6} {float(r.probability):>12.3e} {pub:>10} {ratio:>6}"
                     f" {r.years_to_failure:>10.0f}")
    return "\n".join(lines)


def table_csv(rows: Iterable[TableRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "k", "f", "failure_probability", "reference", "min_k"])
    for r in rows:
        w.writerow([r.m, r.k, r.f, f"{float(r.probability):.6e}", r.reference or "", r.min_k or ""])
    return buf.getvalue()


def parse_threshold(text: str) -> Fraction:
    """Accepts ``2^-20``, ``2**-20``, ``1e-6`` or ``1/1048576``."""
    s = text.strip().replace("**", "^")
    try:
        if "^" in s:
            base, exp = s.split("^", 1)
            return Fraction(int(base)) ** int(exp)
        return Fraction(s)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse threshold {text!r}") from exc
