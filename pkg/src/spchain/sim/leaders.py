"""Leader rotation in isolation: one shard, silent Byzantine leaders.

Used to measure how many slots a shard waits for an honest leader.  The
election runs through the real seed and draw functions, and a slot whose
leader is Byzantine produces no block, so the seed for later slots comes
only from honest blocks.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from ..crypto import sign
from ..randomness import elect_leader, genesis_seed, seed_from_chain
from ..types import BlockHeader, ConfigError, slot_message

_ZERO = bytes(32)


@dataclass(frozen=True)
class LeaderTrace:
    leaders: list[int]
    honest: list[bool]

    @property
    def honest_fraction(self) -> float:
        return sum(self.honest) / len(self.honest) if self.honest else 0.0

    def slots_to_honest(self) -> float:
        """Mean number of slots from any slot until an honest leader, inclusive.

        Slots near the end with no later honest leader are left out.
        """
        waits = []
        nxt = None
        for t in range(len(self.honest) - 1, -1, -1):
            if self.honest[t]:
                nxt = t
            if nxt is not None:
                waits.append(nxt - t + 1)
        return sum(waits) / len(waits) if waits else float("inf")


def leader_process(k: int, f: int, slots: int, seed: int = 0) -> LeaderTrace:
    """Elect ``slots`` leaders for a ``k``-member shard with ``f`` silent members."""
    if not 0 <= f < k:
        raise ConfigError("need 0 <= f < k")
    rng = random.Random(seed)
    byzantine = set(rng.sample(range(k), f))
    keys = [rng.randbytes(32) for _ in range(k)]
    chain: list[BlockHeader] = []
    fallback = genesis_seed(0)
    leaders, honest = [], []
    for t in range(1, slots + 1):
        leader = elect_leader(seed_from_chain(chain, t, fallback), t, range(k))
        leaders.append(leader)
        ok = leader not in byzantine
        honest.append(ok)
        if ok:
            parent = chain[-1].block_hash if chain else _ZERO
            chain.append(BlockHeader(0, len(chain) + 1, t, parent, _ZERO, leader,
                                     sign(keys[leader], slot_message(t)), 0))
            # only the newest seed-eligible block is ever read
            del chain[:-2]
    return LeaderTrace(leaders, honest)
