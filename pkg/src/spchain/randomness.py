"""Chain-derived randomness: per-slot leader election and epoch seeds.

The seed for slot ``t`` is the hashed slot signature of the newest block that
was already confirmed when ``t`` began.  Under concurrent voting the block of
slot ``t-1`` is still being voted on, so only slots ``< t-1`` qualify.
Everything here is a pure function of local chain state.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

from .crypto import hash_bytes
from .types import BlockHeader, ConfigError

GENESIS_TAG = b"spchain-genesis"
_U64 = struct.Struct(">Q")


@dataclass(frozen=True, slots=True)
class Seed:
    value: bytes

    def __post_init__(self) -> None:
        if len(self.value) != 32:
            raise ValueError("seed must be 32 bytes")


def genesis_seed(epoch: int = 0, network: int = 0) -> Seed:
    """Seed used before any block is confirmed; ``network`` tells networks apart."""
    salt = _U64.pack(network) if network else b""
    return Seed(hash_bytes(GENESIS_TAG + _U64.pack(epoch) + salt))


def header_seed(header: BlockHeader) -> Seed:
    """Fixed-width seed contribution of one confirmed block."""
    return Seed(hash_bytes(header.leader_slot_signature))


def seed_block(confirmed_chain: Sequence[BlockHeader], current_slot: int) -> BlockHeader | None:
    # chains are slot-ascending; scan back from the tip
    for header in reversed(confirmed_chain):
        if header.slot < current_slot - 1:
            return header
    return None


def seed_from_chain(confirmed_chain: Sequence[BlockHeader], current_slot: int,
                    fallback: Seed | None = None) -> Seed:
    header = seed_block(confirmed_chain, current_slot)
    if header is None:
        return fallback if fallback is not None else genesis_seed(0)
    return header_seed(header)


def leader_draw(seed: Seed, slot: int) -> int:
    return int.from_bytes(hash_bytes(seed.value + _U64.pack(slot)), "big")


def elect_leader(seed: Seed, slot: int, members: Sequence) -> int:
    """Index into ``members`` of the leader for ``slot``."""
    if not members:
        raise ConfigError("cannot elect a leader from an empty member list")
    return leader_draw(seed, slot) % len(members)


def epoch_seed(headers: Iterable[BlockHeader], previous: Seed | None = None) -> tuple[Seed, bool]:
    """XOR every header's seed contribution, then hash once.

    Returns ``(seed, empty)``; with no headers the previous seed is carried
    over unchanged and ``empty`` is True so callers can flag it.
    """
    acc = 0
    count = 0
    for header in headers:
        acc ^= int.from_bytes(header_seed(header).value, "big")
        count += 1
    if count == 0:
        return (previous if previous is not None else genesis_seed(0)), True
    return Seed(hash_bytes(acc.to_bytes(32, "big"))), False
