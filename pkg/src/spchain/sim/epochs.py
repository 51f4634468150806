"""Epoch reconfiguration and Δ renegotiation."""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Mapping

from ..codec import encode_canonical
from ..consensus import TimingParams
from ..crypto import hash_bytes
from ..randomness import Seed
from ..types import ConfigError, ShardMemberTable


_DRAWS = 64


@dataclass(frozen=True)
class StateBlock:
    """Per-shard record of the member table adopted for a new epoch."""

    shard_id: int
    epoch: int
    member_table: ShardMemberTable

    @property
    def table_hash(self) -> bytes:
        return hash_bytes(encode_canonical(self.member_table))


@dataclass(frozen=True)
class EpochTransition:
    table: ShardMemberTable
    state_blocks: tuple[StateBlock, ...]
    moved: tuple[int, ...]
    failed_shards: tuple[int, ...]

    @property
    def failed(self) -> bool:
        return bool(self.failed_shards)


def epoch_transition(table: ShardMemberTable, epoch_seed: Seed, churn_fraction: float,
                     honest: Mapping[int, bool] | None = None) -> EpochTransition:
    """Move ``churn_fraction`` of the nodes to other shards, seeded by the epoch seed.

    Moved nodes refill the shards smallest-first, so sizes stay within one
    of each other; a node only stays put when no swap can move it.  A shard
    holding at least ``floor(k/2)`` Byzantine members marks the epoch as
    failed, the same event the planner bounds.
    """
    if not 0 <= churn_fraction <= 1:
        raise ConfigError("churn_fraction must be in [0, 1]")
    rng = random.Random(int.from_bytes(epoch_seed.value, "big"))
    shards = [list(members) for members in table.assignment]
    m = len(shards)
    everyone = sorted((nid, s) for s, members in enumerate(shards) for nid, _ in members)
    count = round(churn_fraction * len(everyone)) if m > 1 else 0
    keys = {nid: pk for members in shards for nid, pk in members}
    # redraw until every chosen node can leave its shard with sizes balanced;
    # keep the best draw if none can
    best: tuple[list, list[int | None]] = ([], [])
    for _ in range(_DRAWS):
        chosen = sorted(rng.sample(everyone, count)) if count else []
        placed = _place(chosen, [len(members) for members in shards], rng)
        if not best[0] or _moves(placed) > _moves(best[1]):
            best = (chosen, placed)
        if None not in placed:
            break
    chosen, placed = best
    for nid, s in chosen:
        shards[s] = [(i, pk) for i, pk in shards[s] if i != nid]
    for (nid, own), target in zip(chosen, placed):
        shards[own if target is None else target].append((nid, keys[nid]))
    new = ShardMemberTable(table.epoch + 1, tuple(tuple(sorted(members)) for members in shards))
    failed = ()
    if honest is not None:
        failed = tuple(s for s, members in enumerate(new.assignment)
                       if sum(1 for nid, _ in members if not honest[nid]) >= max(1, len(members) // 2))
    blocks = tuple(StateBlock(s, new.epoch, new) for s in range(m))
    moved = tuple(nid for (nid, _), target in zip(chosen, placed) if target is not None)
    return EpochTransition(new, blocks, moved, failed)


def _moves(placed: list[int | None]) -> int:
    return sum(t is not None for t in placed)


def _place(chosen: list[tuple[int, int]], sizes: list[int], rng: random.Random) -> list[int | None]:
    """Target shard per chosen node (None: it stays), refilling smallest shards first."""
    m = len(sizes)
    sizes = list(sizes)
    for _, own in chosen:
        sizes[own] -= 1
    seats = []
    for _ in chosen:
        smallest = min(sizes)
        j = rng.choice([j for j in range(m) if sizes[j] == smallest])
        sizes[j] += 1
        seats.append(j)
    rng.shuffle(seats)
    # maximum matching of nodes to seats outside their own shard
    owner: list[int | None] = [None] * len(seats)

    def augment(i: int, seen: set[int]) -> bool:
        for j, shard in enumerate(seats):
            if shard == chosen[i][1] or j in seen:
                continue
            seen.add(j)
            if owner[j] is None or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    for i, (_, own) in enumerate(chosen):
        j = next((j for j, shard in enumerate(seats) if owner[j] is None and shard != own), None)
        if j is not None:
            owner[j] = i
    for i in set(range(len(chosen))) - set(owner):
        augment(i, set())
    placed: list[int | None] = [None] * len(chosen)
    for j, i in enumerate(owner):
        if i is not None:
            placed[i] = seats[j]
    return placed


def renegotiate_delta(current: TimingParams, new_params: TimingParams | Mapping[str, int]) -> TimingParams:
    """Validate a Δ update; the caller applies it at the next slot boundary."""
    if isinstance(new_params, TimingParams):
        return new_params
    # TimingParams rejects delta_d > delta_b
    return TimingParams(int(new_params.get("delta_d", current.delta_d)),
                        int(new_params.get("delta_b", current.delta_b)),
                        int(new_params.get("delta_v", current.delta_v)))
