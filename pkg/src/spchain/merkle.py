"""Shard-partitioned Merkle trees and batched cross-shard proofs.

A block's transactions are grouped by destination shard and sorted by hash
inside each group.  Every group becomes a subtree; the ``m`` subtree roots,
in shard order, are the leaves of a small top tree whose root goes in the
block header.  A destination shard that receives its whole group can rebuild
that subtree root, so one proof (the other ``m-1`` roots plus the signed
header) covers the batch.

Hashing is domain separated: leaves ``H(0x00||tx_hash)``, interior nodes
``H(0x01||left||right)``, empty groups ``H(0x02||shard_id)``.  An unpaired
node is promoted to the next level unchanged, never duplicated.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .codec import Reader, encode_canonical, encode_into, read_value
from .crypto import Keystore, hash_bytes
from .types import (
    BlockHeader,
    ConfigError,
    ShardMemberTable,
    Transaction,
    Vote,
    digest_message,
    slot_message,
    vote_message,
)

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
EMPTY_PREFIX = b"\x02"
ROOT_SIZE = 32

_U32 = struct.Struct(">I")


def leaf_hash(tx_hash: bytes) -> bytes:
    return hash_bytes(LEAF_PREFIX + tx_hash)


def node_hash(left: bytes, right: bytes) -> bytes:
    return hash_bytes(NODE_PREFIX + left + right)


def empty_subtree_root(shard_id: int) -> bytes:
    return hash_bytes(EMPTY_PREFIX + _U32.pack(shard_id))


def tree_levels(nodes: Sequence[bytes]) -> list[list[bytes]]:
    levels = [list(nodes)]
    while len(levels[-1]) > 1:
        cur = levels[-1]
        nxt = [node_hash(cur[i], cur[i + 1]) for i in range(0, len(cur) - 1, 2)]
        if len(cur) % 2:
            nxt.append(cur[-1])
        levels.append(nxt)
    return levels


def merkle_root(nodes: Sequence[bytes]) -> bytes:
    if not nodes:
        raise ValueError("merkle_root of an empty node list")
    cur = list(nodes)
    while len(cur) > 1:
        nxt = [node_hash(cur[i], cur[i + 1]) for i in range(0, len(cur) - 1, 2)]
        if len(cur) % 2:
            nxt.append(cur[-1])
        cur = nxt
    return cur[0]


def subtree_root(tx_hashes: Sequence[bytes], shard_id: int) -> bytes:
    if not tx_hashes:
        return empty_subtree_root(shard_id)
    return merkle_root([leaf_hash(h) for h in tx_hashes])


@dataclass(frozen=True)
class ShardMerkleTree:
    m: int
    groups: dict[int, tuple[bytes, ...]]
    subtree_roots: tuple[bytes, ...]
    top_root: bytes

    def recomputed_top_root(self) -> bytes:
        return merkle_root(self.subtree_roots)


def build_shard_tree(transactions: Iterable[Transaction], m: int) -> ShardMerkleTree:
    if m < 1:
        raise ConfigError("m must be >= 1")
    buckets: dict[int, list[bytes]] = {}
    for tx in transactions:
        if not 0 <= tx.dest_shard < m:
            raise ValueError(f"dest_shard {tx.dest_shard} outside [0, {m})")
        buckets.setdefault(tx.dest_shard, []).append(tx.tx_hash)
    groups = {s: tuple(sorted(hs)) for s, hs in sorted(buckets.items())}
    roots = tuple(subtree_root(groups.get(s, ()), s) for s in range(m))
    return ShardMerkleTree(m=m, groups=groups, subtree_roots=roots, top_root=merkle_root(roots))


def block_merkle_root(transactions: Iterable[Transaction], m: int) -> bytes:
    return build_shard_tree(transactions, m).top_root


# ---------------------------------------------------------------------------
# batch proofs

class RejectReason(str, enum.Enum):
    ROOT_MISMATCH = "root-mismatch"
    UNKNOWN_LEADER = "unknown-leader"
    BAD_SIGNATURE = "bad-signature"
    UNCERTIFIED = "uncertified"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: RejectReason | None = None

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = Verdict(True)


def reject(reason: RejectReason) -> Verdict:
    return Verdict(False, reason)


@dataclass(frozen=True)
class BatchProof:
    """Sibling subtree roots for one destination plus the signed header.

    ``header_signature`` is the leader's digest signature, which covers the
    header hash.  ``certificate`` holds the member votes that committed the
    block; it travels with the header, not with each transaction.
    """

    dest_shard: int
    sibling_roots: tuple[tuple[int, bytes], ...]
    header: BlockHeader
    header_signature: bytes
    certificate: tuple[Vote, ...] = field(default=())

    def __post_init__(self) -> None:
        ids = [s for s, _ in self.sibling_roots]
        if any(b <= a for a, b in zip(ids, ids[1:])) or self.dest_shard in ids:
            raise ValueError("sibling shard ids must ascend and exclude dest_shard")

    @property
    def m(self) -> int:
        return len(self.sibling_roots) + 1

    # sibling shard ids are implied (every shard but dest, ascending), so only
    # the 32-byte roots hit the wire
    def _encode_into(self, out: bytearray) -> None:
        out += _U32.pack(self.dest_shard)
        out += _U32.pack(len(self.sibling_roots))
        for _, root in self.sibling_roots:
            out += root
        encode_into(out, self.header)
        out += struct.pack(">H", len(self.header_signature)) + self.header_signature
        out += _U32.pack(len(self.certificate))
        for vote in self.certificate:
            encode_into(out, vote)

    @classmethod
    def _decode_from(cls, reader: Reader) -> "BatchProof":
        dest = read_value(reader, "u32")
        count = read_value(reader, "u32")
        roots = [reader.take(ROOT_SIZE) for _ in range(count)]
        ids = [s for s in range(count + 1) if s != dest]
        header = read_value(reader, BlockHeader)
        sig = read_value(reader, "var")
        cert = read_value(reader, ("list", Vote))
        return cls(dest, tuple(zip(ids, roots)), header, sig, tuple(cert))

    def sibling_bytes(self) -> int:
        """Bytes of the serialized proof taken by sibling roots."""
        return ROOT_SIZE * len(self.sibling_roots)


# fixed framing of an encoded BatchProof besides roots and header section
PROOF_FRAMING = 8


def header_section_size(proof: BatchProof) -> int:
    return (len(encode_canonical(proof.header)) + 2 + len(proof.header_signature)
            + 4 + sum(len(encode_canonical(v)) for v in proof.certificate))


def batch_proof(tree: ShardMerkleTree, dest_shard: int, header: BlockHeader,
                header_signature: bytes = b"", certificate: Sequence[Vote] = ()) -> BatchProof:
    if not 0 <= dest_shard < tree.m:
        raise ConfigError(f"unknown destination shard {dest_shard}")
    siblings = tuple((s, tree.subtree_roots[s]) for s in range(tree.m) if s != dest_shard)
    return BatchProof(dest_shard, siblings, header, header_signature, tuple(certificate))


def check_header(header: BlockHeader, header_signature: bytes, certificate: Sequence[Vote],
                 member_table: ShardMemberTable, keystore: Keystore,
                 require_certificate: bool = True) -> Verdict:
    """Authenticate a cross-shard header against the shard member table."""
    if header.epoch != member_table.epoch or header.shard_id >= member_table.m:
        return reject(RejectReason.UNKNOWN_LEADER)
    pk = member_table.public_key(header.shard_id, header.leader_id)
    if pk is None:
        return reject(RejectReason.UNKNOWN_LEADER)
    msg = digest_message(header.block_number, header.slot, header.block_hash, header.leader_id)
    if not keystore.verify(pk, msg, header_signature):
        return reject(RejectReason.BAD_SIGNATURE)
    if not keystore.verify(pk, slot_message(header.slot), header.leader_slot_signature):
        return reject(RejectReason.BAD_SIGNATURE)
    if require_certificate:
        k = len(member_table.members(header.shard_id))
        vmsg = vote_message(header.slot, header.block_hash)
        voters = set()
        for vote in certificate:
            if vote.latest_valid_block_hash != header.block_hash or vote.slot != header.slot:
                continue
            vpk = member_table.public_key(header.shard_id, vote.voter_id)
            if vpk is not None and keystore.verify(vpk, vmsg, vote.signature):
                voters.add(vote.voter_id)
        if 2 * len(voters) <= k:
            return reject(RejectReason.UNCERTIFIED)
    return ACCEPT


def verify_batch(received_txs: Sequence[Transaction], proof: BatchProof,
                 member_table: ShardMemberTable, keystore: Keystore,
                 require_certificate: bool = True) -> Verdict:
    verdict = check_header(proof.header, proof.header_signature, proof.certificate,
                           member_table, keystore, require_certificate)
    if not verdict:
        return verdict
    hashes = sorted(tx.tx_hash for tx in received_txs)
    if any(tx.dest_shard != proof.dest_shard for tx in received_txs):
        return reject(RejectReason.ROOT_MISMATCH)
    roots = dict(proof.sibling_roots)
    roots[proof.dest_shard] = subtree_root(hashes, proof.dest_shard)
    if sorted(roots) != list(range(proof.m)):
        return reject(RejectReason.ROOT_MISMATCH)
    top = merkle_root([roots[s] for s in range(proof.m)])
    if top != proof.header.merkle_root:
        return reject(RejectReason.ROOT_MISMATCH)
    return ACCEPT


# ---------------------------------------------------------------------------
# per-transaction paths (comparison scheme)

@dataclass(frozen=True)
class TxPath:
    """Full Merkle path from one leaf to the block root.

    Each step is ``(sibling_is_left, sibling_hash)``.  Promoted levels
    contribute no step.
    """

    steps: tuple[tuple[bool, bytes], ...]

    def _encode_into(self, out: bytearray) -> None:
        out.append(len(self.steps))
        bits = 0
        for i, (left, _) in enumerate(self.steps):
            if left:
                bits |= 1 << i
        nbytes = (len(self.steps) + 7) // 8
        out += bits.to_bytes(nbytes, "little") if nbytes else b""
        for _, h in self.steps:
            out += h

    @classmethod
    def _decode_from(cls, reader: Reader) -> "TxPath":
        depth = reader.take(1)[0]
        nbytes = (depth + 7) // 8
        bits = int.from_bytes(reader.take(nbytes), "little") if nbytes else 0
        return cls(tuple((bool(bits >> i & 1), reader.take(ROOT_SIZE)) for i in range(depth)))

    def hash_bytes(self) -> int:
        return ROOT_SIZE * len(self.steps)


def _path_in(levels: list[list[bytes]], index: int) -> list[tuple[bool, bytes]]:
    steps = []
    for level in levels[:-1]:
        if index % 2:
            steps.append((True, level[index - 1]))
        elif index + 1 < len(level):
            steps.append((False, level[index + 1]))
        index //= 2
    return steps


def tx_path(tree: ShardMerkleTree, tx_hash: bytes, dest_shard: int) -> TxPath:
    group = tree.groups.get(dest_shard, ())
    try:
        index = group.index(tx_hash)
    except ValueError:
        raise KeyError("transaction not in the given destination group") from None
    sub_levels = tree_levels([leaf_hash(h) for h in group])
    top_levels = tree_levels(tree.subtree_roots)
    return TxPath(tuple(_path_in(sub_levels, index) + _path_in(top_levels, dest_shard)))


def all_tx_paths(tree: ShardMerkleTree, dest_shard: int) -> dict[bytes, TxPath]:
    group = tree.groups.get(dest_shard, ())
    if not group:
        return {}
    sub_levels = tree_levels([leaf_hash(h) for h in group])
    top = _path_in(tree_levels(tree.subtree_roots), dest_shard)
    return {h: TxPath(tuple(_path_in(sub_levels, i) + top)) for i, h in enumerate(group)}


def verify_tx_path(tx: Transaction, path: TxPath, root: bytes) -> bool:
    acc = leaf_hash(tx.tx_hash)
    for left, sibling in path.steps:
        acc = node_hash(sibling, acc) if left else node_hash(acc, sibling)
    return acc == root


def overhead_per_tx(m: int, n_total: int, n_dest: int) -> tuple[float, int]:
    """``(batched bytes/tx, per-tx path bytes/tx)`` for one destination."""
    if not n_total >= n_dest >= 1:
        raise ValueError("need N >= N_j >= 1")
    batched = ROOT_SIZE * (m - 1) / n_dest
    per_tx = ROOT_SIZE * (n_total - 1).bit_length()  # ceil(log2 N)
    return batched, per_tx
