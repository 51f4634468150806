"""Cross-shard batches: outbound dispatch, destination acceptance, retries.

A committed block's withdrawals are grouped by destination shard.  Each
group travels as one :class:`CrossShardBatch` together with a proof: the
sibling subtree roots (batched scheme) or one Merkle path per transaction
(the per-transaction comparison scheme).  Every proof carries the signed
header and the vote certificate that committed it.

The destination derives the deposit half from each proven withdrawal and
queues it exactly once, keyed by the client request hash.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .codec import Reader, encode_canonical, encode_into, read_value
from .crypto import Keystore
from .ledger import Mempool, deposit_for
from .merkle import (
    ACCEPT,
    BatchProof,
    RejectReason,
    ShardMerkleTree,
    TxPath,
    Verdict,
    all_tx_paths,
    batch_proof,
    check_header,
    reject,
    verify_batch,
    verify_tx_path,
)
from .types import Block, BlockHeader, ShardMemberTable, Transaction, TxKind, Vote

BATCHED = "batched"
PER_TX = "per-tx"


@dataclass(frozen=True)
class PathProof:
    """Per-transaction proof bundle: one full path per withdrawal."""

    dest_shard: int
    header: BlockHeader
    header_signature: bytes
    paths: tuple[TxPath, ...]
    certificate: tuple[Vote, ...] = ()

    def _encode_into(self, out: bytearray) -> None:
        out += struct.pack(">I", self.dest_shard)
        encode_into(out, self.header)
        out += struct.pack(">H", len(self.header_signature)) + self.header_signature
        out += struct.pack(">I", len(self.certificate))
        for vote in self.certificate:
            encode_into(out, vote)
        out += struct.pack(">I", len(self.paths))
        for path in self.paths:
            encode_into(out, path)

    @classmethod
    def _decode_from(cls, reader: Reader) -> "PathProof":
        dest = read_value(reader, "u32")
        header = read_value(reader, BlockHeader)
        sig = read_value(reader, "var")
        cert = read_value(reader, ("list", Vote))
        paths = read_value(reader, ("list", TxPath))
        return cls(dest, header, sig, paths, cert)


@dataclass(frozen=True)
class CrossShardBatch:
    source_shard: int
    dest_shard: int
    withdrawals: tuple[Transaction, ...]
    proof: BatchProof | PathProof
    # simulation ground truth, never on the wire
    tampered: bool = field(default=False, compare=False)

    @property
    def header(self) -> BlockHeader:
        return self.proof.header

    @property
    def deposits(self) -> tuple[Transaction, ...]:
        return tuple(deposit_for(w) for w in self.withdrawals)

    def proof_bytes(self) -> int:
        """Proof bytes spent on Merkle material, measured on the encoding."""
        if isinstance(self.proof, BatchProof):
            return self.proof.sibling_bytes()
        return sum(p.hash_bytes() for p in self.proof.paths)

    def wire_size(self) -> int:
        return len(encode_canonical(self.proof)) + sum(w.payload_size for w in self.withdrawals)


@dataclass(frozen=True)
class HeaderAnnouncement:
    source_shard: int
    header: BlockHeader
    header_signature: bytes


def dispatch_outbound(block: Block, tree: ShardMerkleTree, header_signature: bytes,
                      certificate: Sequence[Vote] = (), scheme: str = BATCHED,
                      only: Iterable[int] | None = None) -> tuple[list[CrossShardBatch], HeaderAnnouncement]:
    """One batch per destination with at least one withdrawal, plus the header."""
    src = block.header.shard_id
    groups: dict[int, list[Transaction]] = {}
    for tx in block.transactions:
        if tx.kind == TxKind.WITHDRAWAL:
            groups.setdefault(tx.dest_shard, []).append(tx)
    wanted = set(only) if only is not None else None
    batches = []
    for dest in sorted(groups):
        if wanted is not None and dest not in wanted:
            continue
        txs = tuple(sorted(groups[dest], key=lambda t: t.tx_hash))
        if scheme == BATCHED:
            proof = batch_proof(tree, dest, block.header, header_signature, certificate)
        elif scheme == PER_TX:
            paths = all_tx_paths(tree, dest)
            proof = PathProof(dest, block.header, header_signature,
                              tuple(paths[t.tx_hash] for t in txs), tuple(certificate))
        else:
            raise ValueError(f"unknown proof scheme {scheme!r}")
        batches.append(CrossShardBatch(src, dest, txs, proof))
    return batches, HeaderAnnouncement(src, block.header, header_signature)


def verify_cross_batch(batch: CrossShardBatch, tables: Mapping[int, ShardMemberTable],
                       keystore: Keystore) -> Verdict:
    proof = batch.proof
    table = tables.get(proof.header.epoch)
    if table is None:
        return reject(RejectReason.UNKNOWN_LEADER)
    if any(w.kind != TxKind.WITHDRAWAL or w.dest_shard != batch.dest_shard for w in batch.withdrawals):
        return reject(RejectReason.ROOT_MISMATCH)
    if isinstance(proof, BatchProof):
        if proof.dest_shard != batch.dest_shard:
            return reject(RejectReason.ROOT_MISMATCH)
        return verify_batch(batch.withdrawals, proof, table, keystore)
    verdict = check_header(proof.header, proof.header_signature, proof.certificate, table, keystore)
    if not verdict:
        return verdict
    if len(proof.paths) != len(batch.withdrawals):
        return reject(RejectReason.ROOT_MISMATCH)
    for tx, path in zip(batch.withdrawals, proof.paths):
        if not verify_tx_path(tx, path, proof.header.merkle_root):
            return reject(RejectReason.ROOT_MISMATCH)
    return ACCEPT


@dataclass
class DepositInbox:
    """Destination-side record of proven deposits for one shard."""

    shard_id: int
    accepted: dict[bytes, Transaction] = field(default_factory=dict)
    rejected: dict[str, int] = field(default_factory=dict)
    batches_accepted: int = 0
    duplicates: int = 0

    def __contains__(self, link: bytes) -> bool:
        return link in self.accepted


def on_receive_batch(inbox: DepositInbox, batch: CrossShardBatch,
                     tables: Mapping[int, ShardMemberTable], keystore: Keystore,
                     mempool: Mempool | None = None) -> Verdict:
    """Verify a batch and queue its deposits once each."""
    if batch.dest_shard != inbox.shard_id:
        verdict = reject(RejectReason.ROOT_MISMATCH)
    else:
        verdict = verify_cross_batch(batch, tables, keystore)
    if not verdict:
        key = verdict.reason.value
        inbox.rejected[key] = inbox.rejected.get(key, 0) + 1
        return verdict
    fresh = 0
    for dep in batch.deposits:
        if dep.parent_hash in inbox.accepted:
            continue
        inbox.accepted[dep.parent_hash] = dep
        fresh += 1
        if mempool is not None:
            mempool.add_deposit(dep)
    if fresh:
        inbox.batches_accepted += 1
    else:
        inbox.duplicates += 1
    return verdict


@dataclass
class OutboundRecord:
    """What an origin shard keeps to re-send a committed block's batches."""

    block: Block
    tree: ShardMerkleTree
    header_signature: bytes
    certificate: tuple[Vote, ...]
    commit_slot: int
    last_dispatch_slot: int
    destinations: frozenset[int]
    remaining: dict[bytes, int] = field(default_factory=dict)  # link -> dest


class RetryTracker:
    def __init__(self, retry_slots: int = 10):
        self.retry_slots = retry_slots
        self.records: dict[bytes, OutboundRecord] = {}

    def record(self, rec: OutboundRecord) -> None:
        if rec.destinations:
            rec.remaining = {tx.parent_hash: tx.dest_shard for tx in rec.block.transactions
                             if tx.kind == TxKind.WITHDRAWAL}
            self.records[rec.block.block_hash] = rec

    def outstanding(self) -> int:
        return len(self.records)

    def retry_undelivered(self, slot: int,
                          delivered: Callable[[int, bytes], bool]) -> list[tuple[OutboundRecord, list[int]]]:
        """Records whose deposits are still uncommitted ``R`` slots after the last send.

        ``delivered(dest, link)`` is the client's view of the destination.
        Fully delivered records are dropped.
        """
        due = []
        for bhash in list(self.records):
            rec = self.records[bhash]
            for link in [lk for lk, d in rec.remaining.items() if delivered(d, lk)]:
                del rec.remaining[link]
            missing = sorted(set(rec.remaining.values()))
            if not missing:
                del self.records[bhash]
                continue
            if slot - rec.last_dispatch_slot >= self.retry_slots:
                rec.last_dispatch_slot = slot
                due.append((rec, missing))
        return due
