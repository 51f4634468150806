"""Byzantine behaviours applied to a node's outbound messages.

Strategies are fixed per node for a run.  ``equivocate`` and ``silence``
attack consensus; ``tamper`` and ``forge-signature`` attack cross-shard
batches while proposing honest blocks.  ``target-leader`` is an external
attacker that suppresses the observed leader's messages one slot later.
"""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

from ..crossshard import CrossShardBatch, PathProof
from ..crypto import sign
from ..merkle import BatchProof, merkle_root, subtree_root
from ..types import Block, BlockHeader, Digest, Transaction, Vote, digest_for, slot_message, vote_message


class AdversaryKind(str, enum.Enum):
    EQUIVOCATE = "equivocate"
    SILENCE = "silence"
    TAMPER = "tamper"
    FORGE = "forge-signature"
    TARGET_LEADER = "target-leader"


@dataclass(frozen=True)
class AdversaryStrategy:
    kind: AdversaryKind
    params: Mapping[str, Any] = field(default_factory=dict)

    @property
    def attacks_consensus(self) -> bool:
        return self.kind in (AdversaryKind.EQUIVOCATE, AdversaryKind.SILENCE)


@dataclass
class AttackContext:
    secret_key: bytes
    forged_key: bytes
    m: int
    rng: random.Random
    # the chain tip the attacker would vote for when rejecting
    tip_hash: bytes = bytes(32)


@dataclass(frozen=True)
class Proposal:
    digest: Digest
    block: Block


def conflicting_block(block: Block, secret_key: bytes, m: int) -> Block:
    """A second, differently-hashed block for the same slot and leader."""
    h = block.header
    if block.transactions:
        body = block.transactions[:-1]
        root = merkle_root([subtree_root(sorted(t.tx_hash for t in body if t.dest_shard == s), s)
                            for s in range(m)])
        header = replace(h, merkle_root=root)
    else:
        body = ()
        header = replace(h, parent_hash=sign(secret_key, b"fork" + h.parent_hash))
    return Block(header, tuple(body))


def tamper_batch(batch: CrossShardBatch, position: int = 0, delta: int = 1) -> CrossShardBatch:
    """Bump one withdrawal's amount; the proof is left untouched."""
    txs = list(batch.withdrawals)
    i = position % len(txs)
    t = txs[i]
    txs[i] = Transaction(t.sender, t.receiver, t.amount + delta, t.nonce, t.kind, t.origin_shard,
                         t.dest_shard, t.payload_size, t.parent_hash)
    return replace(batch, withdrawals=tuple(txs), tampered=True)


def forge_batch(batch: CrossShardBatch, forged_key: bytes, m: int) -> CrossShardBatch:
    """Tamper, re-root the header to match, and re-sign with an unregistered key."""
    tampered = tamper_batch(batch)
    proof = batch.proof
    header: BlockHeader = proof.header
    if isinstance(proof, BatchProof):
        roots = dict(proof.sibling_roots)
        roots[proof.dest_shard] = subtree_root(sorted(t.tx_hash for t in tampered.withdrawals), proof.dest_shard)
        header = replace(header, merkle_root=merkle_root([roots[s] for s in range(m)]),
                         leader_slot_signature=sign(forged_key, slot_message(header.slot)))
    else:
        header = replace(header, leader_slot_signature=sign(forged_key, slot_message(header.slot)))
    sig = digest_for(Block(header, ()), forged_key).leader_signature
    if isinstance(proof, BatchProof):
        new_proof: BatchProof | PathProof = replace(proof, header=header, header_signature=sig)
    else:
        new_proof = replace(proof, header=header, header_signature=sig)
    return replace(tampered, proof=new_proof)


def apply_adversary(strategy: AdversaryStrategy, ctx: AttackContext, message: Any) -> list[Any]:
    """Transform one outbound message into what actually leaves the node.

    Equivocation returns two messages meant for disjoint halves of the
    audience; the caller splits recipients.
    """
    kind = strategy.kind
    if kind is AdversaryKind.SILENCE:
        return []
    if isinstance(message, Proposal):
        if kind is AdversaryKind.EQUIVOCATE:
            alt = conflicting_block(message.block, ctx.secret_key, ctx.m)
            return [message, Proposal(digest_for(alt, ctx.secret_key), alt)]
        return [message]
    if isinstance(message, Vote):
        if kind is AdversaryKind.EQUIVOCATE:
            other = ctx.tip_hash if message.latest_valid_block_hash != ctx.tip_hash else sign(ctx.secret_key, b"x")
            return [message, Vote(message.voter_id, message.slot, other,
                                  sign(ctx.secret_key, vote_message(message.slot, other)))]
        return [message]
    if isinstance(message, CrossShardBatch):
        if kind is AdversaryKind.TAMPER:
            pos = int(strategy.params.get("position", ctx.rng.randrange(len(message.withdrawals))))
            return [tamper_batch(message, pos)]
        if kind is AdversaryKind.FORGE:
            return [forge_batch(message, ctx.forged_key, ctx.m)]
        return [message]
    return [message]
