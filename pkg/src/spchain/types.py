"""Domain types shared by every other module.

All values are immutable after construction.  ``Transaction.tx_hash`` and
``BlockHeader.block_hash`` are derived from the canonical encoding and are
never part of it.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import ClassVar, Iterable, Sequence

from .codec import encode_canonical
from .crypto import hash_bytes, sign

ADDRESS_SIZE = 20
DEFAULT_PAYLOAD_SIZE = 512
DEFAULT_BLOCK_CAPACITY = 4096
ZERO_HASH = bytes(32)

_U64 = struct.Struct(">Q")
_TX_LAYOUT = struct.Struct(">20s20sQQBIII32s")


class ConfigError(ValueError):
    """Invalid scenario or call configuration."""


class TxKind(enum.IntEnum):
    INTRA = 0
    WITHDRAWAL = 1
    DEPOSIT = 2


def account_address(name: str | bytes) -> bytes:
    """Low 20 bytes of the hash of a registered account name."""
    raw = name.encode() if isinstance(name, str) else name
    return hash_bytes(raw)[-ADDRESS_SIZE:]


def address_to_shard(address: bytes | int, m: int) -> int:
    if m < 1:
        raise ConfigError(f"shard count must be >= 1, got {m}")
    value = address if isinstance(address, int) else int.from_bytes(address, "big")
    return value % m


@dataclass(frozen=True, slots=True)
class NodeIdentity:
    node_id: int
    public_key: bytes
    shard_id: int
    honest: bool = True

    CODEC: ClassVar = (("node_id", "u64"), ("public_key", "b32"), ("shard_id", "u32"), ("honest", "bool"))


@dataclass(frozen=True, slots=True)
class Transaction:
    sender: bytes
    receiver: bytes
    amount: int
    nonce: int
    kind: TxKind
    origin_shard: int
    dest_shard: int
    payload_size: int = DEFAULT_PAYLOAD_SIZE
    # links both halves of a cross-shard transfer to the client's request
    parent_hash: bytes = ZERO_HASH
    tx_hash: bytes = field(default=b"", compare=False, repr=False)

    CODEC: ClassVar = (
        ("sender", "b20"),
        ("receiver", "b20"),
        ("amount", "u64"),
        ("nonce", "u64"),
        ("kind", "u8"),
        ("origin_shard", "u32"),
        ("dest_shard", "u32"),
        ("payload_size", "u32"),
        ("parent_hash", "b32"),
    )

    def __post_init__(self) -> None:
        if not isinstance(self.kind, TxKind):
            object.__setattr__(self, "kind", TxKind(self.kind))
        if len(self.sender) != ADDRESS_SIZE or len(self.receiver) != ADDRESS_SIZE:
            raise ValueError("addresses must be 20 bytes")
        object.__setattr__(self, "tx_hash", hash_bytes(self.encoded()))

    def encoded(self) -> bytes:
        # same bytes as the CODEC table, packed in one call
        return _TX_LAYOUT.pack(self.sender, self.receiver, self.amount, self.nonce, self.kind,
                               self.origin_shard, self.dest_shard, self.payload_size, self.parent_hash)

    def _encode_into(self, out: bytearray) -> None:
        out += self.encoded()

    @property
    def link(self) -> bytes:
        """Identity of the client request this transaction belongs to."""
        return self.parent_hash if self.kind != TxKind.INTRA else self.tx_hash


def make_transfer(sender: bytes, receiver: bytes, amount: int, nonce: int, m: int,
                  payload_size: int = DEFAULT_PAYLOAD_SIZE) -> Transaction:
    """A client request.  Cross-shard requests are split before packing."""
    return Transaction(
        sender=sender,
        receiver=receiver,
        amount=amount,
        nonce=nonce,
        kind=TxKind.INTRA,
        origin_shard=address_to_shard(sender, m),
        dest_shard=address_to_shard(receiver, m),
        payload_size=payload_size,
    )


@dataclass(frozen=True)
class BlockHeader:
    shard_id: int
    block_number: int
    slot: int
    parent_hash: bytes
    merkle_root: bytes
    leader_id: int
    leader_slot_signature: bytes
    epoch: int

    CODEC: ClassVar = (
        ("shard_id", "u32"),
        ("block_number", "u64"),
        ("slot", "u64"),
        ("parent_hash", "b32"),
        ("merkle_root", "b32"),
        ("leader_id", "u64"),
        ("leader_slot_signature", "var"),
        ("epoch", "u64"),
    )

    @cached_property
    def block_hash(self) -> bytes:
        return hash_bytes(encode_canonical(self))


def slot_message(slot: int) -> bytes:
    return _U64.pack(slot)


def block_hash(header: BlockHeader) -> bytes:
    return header.block_hash


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...]

    CODEC: ClassVar = (("header", BlockHeader), ("transactions", ("list", Transaction)))

    @property
    def block_hash(self) -> bytes:
        return self.header.block_hash

    @property
    def slot(self) -> int:
        return self.header.slot

    @cached_property
    def wire_size(self) -> int:
        return len(encode_canonical(self.header)) + sum(t.payload_size for t in self.transactions)

    @cached_property
    def senders(self) -> frozenset[bytes]:
        return frozenset(t.sender for t in self.transactions)


def block_order_key(tx: Transaction) -> tuple[int, bytes]:
    return (tx.dest_shard, tx.tx_hash)


def canonical_body(txs: Iterable[Transaction]) -> tuple[Transaction, ...]:
    """Group by destination shard, ascending tx hash inside each group."""
    return tuple(sorted(txs, key=block_order_key))


@dataclass(frozen=True)
class Digest:
    block_number: int
    slot: int
    block_hash: bytes
    leader_id: int
    leader_signature: bytes

    CODEC: ClassVar = (
        ("block_number", "u64"),
        ("slot", "u64"),
        ("block_hash", "b32"),
        ("leader_id", "u64"),
        ("leader_signature", "var"),
    )

    def signed_part(self) -> bytes:
        return digest_message(self.block_number, self.slot, self.block_hash, self.leader_id)


def digest_message(block_number: int, slot: int, bhash: bytes, leader_id: int) -> bytes:
    return _U64.pack(block_number) + _U64.pack(slot) + bhash + _U64.pack(leader_id)


def digest_for(block: Block, secret_key: bytes) -> Digest:
    h = block.header
    msg = digest_message(h.block_number, h.slot, h.block_hash, h.leader_id)
    sig = sign(secret_key, msg)
    return Digest(h.block_number, h.slot, h.block_hash, h.leader_id, sig)


def digest_matches(digest: Digest, block: Block) -> bool:
    h = block.header
    return (digest.block_number == h.block_number and digest.slot == h.slot
            and digest.block_hash == h.block_hash and digest.leader_id == h.leader_id)


@dataclass(frozen=True)
class Vote:
    voter_id: int
    slot: int
    latest_valid_block_hash: bytes
    signature: bytes

    CODEC: ClassVar = (
        ("voter_id", "u64"),
        ("slot", "u64"),
        ("latest_valid_block_hash", "b32"),
        ("signature", "var"),
    )


def vote_message(slot: int, bhash: bytes) -> bytes:
    return _U64.pack(slot) + bhash


@dataclass(frozen=True)
class ShardMemberTable:
    epoch: int
    assignment: tuple[tuple[tuple[int, bytes], ...], ...]

    CODEC: ClassVar = (("epoch", "u64"), ("assignment", ("list", ("list", ("tuple", ("u64", "b32"))))))

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for members in self.assignment:
            ids = [nid for nid, _ in members]
            if ids != sorted(ids):
                raise ValueError("shard members must be sorted by node_id")
            for nid in ids:
                if nid in seen:
                    raise ValueError(f"node {nid} appears in more than one shard")
                seen.add(nid)

    @property
    def m(self) -> int:
        return len(self.assignment)

    @classmethod
    def from_identities(cls, epoch: int, identities: Sequence[NodeIdentity], m: int) -> "ShardMemberTable":
        shards: list[list[tuple[int, bytes]]] = [[] for _ in range(m)]
        for ident in identities:
            if not 0 <= ident.shard_id < m:
                raise ValueError(f"shard_id {ident.shard_id} outside [0, {m})")
            shards[ident.shard_id].append((ident.node_id, ident.public_key))
        return cls(epoch, tuple(tuple(sorted(s)) for s in shards))

    def members(self, shard_id: int) -> tuple[tuple[int, bytes], ...]:
        return self.assignment[shard_id]

    def member_ids(self, shard_id: int) -> tuple[int, ...]:
        return tuple(nid for nid, _ in self.assignment[shard_id])

    @cached_property
    def _key_index(self) -> dict[tuple[int, int], bytes]:
        return {(s, nid): pk for s, members in enumerate(self.assignment) for nid, pk in members}

    def public_key(self, shard_id: int, node_id: int) -> bytes | None:
        return self._key_index.get((shard_id, node_id))

    def shard_of(self, node_id: int) -> int | None:
        for s, members in enumerate(self.assignment):
            for nid, _ in members:
                if nid == node_id:
                    return s
        return None
