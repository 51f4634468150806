"""Delay model, gossip fan-out and the shared vote mailbox."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ..consensus import TimingParams, tally
from ..types import Vote


class MessageClass(enum.IntEnum):
    DIGEST = 0
    BLOCK = 1
    VOTE = 2
    BATCH = 3


def bound_for(cls: MessageClass, timing: TimingParams) -> int:
    if cls is MessageClass.DIGEST:
        return timing.delta_d
    if cls is MessageClass.VOTE:
        return timing.delta_v
    return timing.delta_b


@dataclass(frozen=True)
class LatencyModel:
    """``base + jitter + size/bandwidth``, all multiplied by ``scale``.

    Jitter is exponential with the given mean, truncated so the total stays
    within the message class bound.  When the fixed part alone already
    exceeds the bound the synchrony assumption is broken: the delay is
    reported uncapped and counted as a violation.
    """

    base_ms: float = 100.0
    jitter_mean_ms: float = 30.0
    bandwidth_bps: float = 20e6
    scale: float = 1.0

    def fixed_part(self, size: int) -> float:
        return self.scale * (self.base_ms + size * 8 * 1000 / self.bandwidth_bps)

    def sample(self, rng: np.random.Generator, size: int, n: int, bound: int) -> tuple[np.ndarray, bool]:
        """``n`` integer delays in ms, and whether the bound was unattainable."""
        fixed = self.fixed_part(size)
        room = bound - fixed
        mean = self.jitter_mean_ms * self.scale
        if room < 0:
            jitter = rng.exponential(mean, n) if mean > 0 else np.zeros(n)
            return np.ceil(fixed + jitter).astype(np.int64), True
        if mean <= 0 or room == 0:
            jitter = np.zeros(n)
        else:
            # inverse CDF of an exponential truncated to [0, room]
            u = rng.random(n)
            jitter = -mean * np.log1p(-u * -math.expm1(-room / mean))
        delays = np.minimum(np.floor(fixed + jitter), bound).astype(np.int64)
        return np.maximum(delays, 1), False


class VoteBoard:
    """Votes of one (shard, slot, phase), with per-recipient arrival times.

    Recipients query what they can see at their own window end.  When every
    vote has reached everyone, the tally is computed once and shared.
    """

    __slots__ = ("k", "slot", "votes", "arrivals", "latest", "_full")

    def __init__(self, k: int, slot: int):
        self.k = k
        self.slot = slot
        self.votes: list[Vote] = []
        self.arrivals: list[np.ndarray] = []
        self.latest = -1
        self._full: tuple[bool, bytes | None] = (False, None)

    def post(self, vote: Vote, arrivals: np.ndarray) -> None:
        self.votes.append(vote)
        self.arrivals.append(arrivals)
        self.latest = max(self.latest, int(arrivals.max()))
        self._full = (False, None)

    def visible(self, index: int, now: int) -> list[Vote]:
        return [v for v, arr in zip(self.votes, self.arrivals) if arr[index] <= now]

    def tally_at(self, index: int, now: int) -> bytes | None:
        if self.latest <= now:
            done, winner = self._full
            if not done:
                winner = tally(self.votes, self.slot, self.k)
                self._full = (True, winner)
            return winner
        return tally(self.visible(index, now), self.slot, self.k)

    def certificate(self, block_hash: bytes, limit: int | None = None) -> tuple[Vote, ...]:
        """Distinct, non-conflicting votes endorsing ``block_hash``."""
        by_voter: dict[int, set[bytes]] = {}
        for v in self.votes:
            by_voter.setdefault(v.voter_id, set()).add(v.latest_valid_block_hash)
        chosen = sorted((v for v in self.votes
                         if v.latest_valid_block_hash == block_hash and len(by_voter[v.voter_id]) == 1),
                        key=lambda v: v.voter_id)
        seen = set()
        out = []
        for v in chosen:
            if v.voter_id in seen:
                continue
            seen.add(v.voter_id)
            out.append(v)
        return tuple(out[:limit] if limit else out)
