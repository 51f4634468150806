"""Per-node intra-shard consensus: two-phase concurrent voting with leader rotation.

A node reacts to four kinds of input: digests, blocks, its own timers, and
restarts at quiescent points (run start, epoch boundaries).  Everything it
wants to do to the outside world goes through an ``env`` object (the
simulator), which also answers read-only questions such as "is this block
valid on top of that parent".

Timeline of slot ``t`` at one node, concurrent mode::

    anchor A        first digest (or block) of slot t arrives
    A + Δb          vote on b_t; slot t+1 begins: elect its leader, who packs
    A + Δb+Δd+Δv    window closes: commit b_t iff >k/2 votes endorse it;
                    the leader of t+1 seals and broadcasts b_{t+1}

The serial baselines run pack, broadcast, vote (and a commit round in the
three-phase variant) and insert back to back.

All times handed to the node are global simulation milliseconds; the node
only ever reasons about differences of its own local clock readings
(``global + clock_offset``).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from .crypto import Keystore, sign
from .merkle import build_shard_tree
from .randomness import Seed, elect_leader, genesis_seed, seed_from_chain
from .types import (
    Block,
    BlockHeader,
    ConfigError,
    Digest,
    Transaction,
    Vote,
    canonical_body,
    digest_for,
    slot_message,
    vote_message,
)


@dataclass(frozen=True, slots=True)
class TimingParams:
    delta_d: int
    delta_b: int
    delta_v: int

    def __post_init__(self) -> None:
        if min(self.delta_d, self.delta_b, self.delta_v) <= 0:
            raise ConfigError("timing bounds must be strictly positive")
        if self.delta_d > self.delta_b:
            raise ConfigError("delta_d must not exceed delta_b")

    @property
    def period(self) -> int:
        """Concurrent slot duration."""
        return self.delta_b + self.delta_d + self.delta_v

    @property
    def round_trip(self) -> int:
        return self.delta_d + self.delta_v


class ConsensusMode(str, enum.Enum):
    CONCURRENT = "concurrent"
    SERIAL2 = "serial2phase"
    SERIAL3 = "serial3phase"


class LeaderMode(str, enum.Enum):
    ROTATION = "rotation"
    STATIC = "static-viewchange"


class Role(str, enum.Enum):
    LEADER = "leader"
    MEMBER = "member"


class Timer(enum.IntEnum):
    FALLBACK = 0
    VOTE = 1
    WINDOW = 2
    WINDOW2 = 3
    SEAL = 4
    SLOT_BEGIN = 5


@dataclass(frozen=True)
class ProtocolParams:
    timing: TimingParams
    t_pack: int = 500
    t_insert: int = 450
    consensus: ConsensusMode = ConsensusMode.CONCURRENT
    leader: LeaderMode = LeaderMode.ROTATION
    capacity: int = 4096

    @property
    def view_change_penalty(self) -> int:
        return 2 * self.timing.round_trip

    def slot_duration(self) -> int:
        """Analytic honest slot duration for the configured mode."""
        t = self.timing
        if self.consensus is ConsensusMode.CONCURRENT:
            return t.period + max(0, self.t_pack - t.round_trip)
        rounds = 2 if self.consensus is ConsensusMode.SERIAL3 else 1
        return self.t_pack + t.delta_b + rounds * t.round_trip + self.t_insert


@dataclass(frozen=True, slots=True)
class CommitDecision:
    slot: int
    block_hash: bytes | None
    unknown: bool = False

    @property
    def committed(self) -> bool:
        return self.block_hash is not None


def tally(votes: Sequence[Vote], slot: int, k: int) -> bytes | None:
    """Hash endorsed by strictly more than ``k/2`` distinct voters, if any.

    A voter that signed two different hashes for the slot is dropped.
    Signatures are assumed checked by the caller.
    """
    seen: dict[int, bytes | None] = {}
    for vote in votes:
        if vote.slot != slot:
            continue
        prev = seen.get(vote.voter_id, b"")
        if prev == b"":
            seen[vote.voter_id] = vote.latest_valid_block_hash
        elif prev != vote.latest_valid_block_hash:
            seen[vote.voter_id] = None
    counts: dict[bytes, int] = {}
    for h in seen.values():
        if h is not None:
            counts[h] = counts.get(h, 0) + 1
    for h, c in counts.items():
        if 2 * c > k:
            return h
    return None


class ConsensusEnv(Protocol):
    params: ProtocolParams
    keystore: Keystore
    shard_count: int

    def members(self, shard: int) -> tuple[tuple[int, bytes], ...]: ...
    def public_key(self, shard: int, node_id: int) -> bytes | None: ...
    def epoch_of(self, node: "ConsensusNode") -> int: ...
    def schedule(self, node: "ConsensusNode", at: int, timer: Timer, slot: int) -> None: ...
    def broadcast(self, node: "ConsensusNode", digest: Digest, block: Block, now: int) -> None: ...
    def send_vote(self, node: "ConsensusNode", vote: Vote, phase: int, now: int) -> None: ...
    def visible_tally(self, node: "ConsensusNode", slot: int, phase: int, now: int) -> bytes | None: ...
    def validate(self, node: "ConsensusNode", block: Block, parent: bytes) -> bool: ...
    def pack(self, node: "ConsensusNode", parent: bytes, exclude: Sequence[Block], now: int) -> list[Transaction]: ...
    def refilter(self, node: "ConsensusNode", parent: bytes, txs: list[Transaction]) -> list[Transaction]: ...
    def fetch(self, shard: int, block_hash: bytes) -> Block | None: ...
    def sync(self, node: "ConsensusNode", now: int) -> Sequence[BlockHeader]: ...
    def on_commit(self, node: "ConsensusNode", block: Block, now: int, unknown: bool) -> None: ...
    def on_fork(self, node: "ConsensusNode", block: Block, now: int) -> None: ...
    def on_decided(self, node: "ConsensusNode", slot: int, committed: bool, now: int) -> bool: ...
    def on_invalid(self, node: "ConsensusNode", what: str) -> None: ...
    def on_desync(self, node: "ConsensusNode", slot: int, now: int) -> None: ...
    def on_slot_duration(self, node: "ConsensusNode", slot: int, duration: int) -> None: ...


@dataclass(slots=True)
class SlotState:
    slot: int
    leader_id: int | None = None
    anchor: int | None = None  # local clock
    fallback: bool = False
    digests: dict[bytes, Digest] = field(default_factory=dict)
    blocks: dict[bytes, Block] = field(default_factory=dict)
    equivocation: bool = False
    voted: bool = False
    vote_hash: bytes | None = None
    valid_hash: bytes | None = None
    prepared: bytes | None = None
    decided: bool = False
    decided_on: bytes | None = None
    expected: int | None = None  # local time the block broadcast is due
    restarted: bool = False
    early: list = field(default_factory=list)


class ConsensusNode:
    """One shard member's consensus state machine."""

    def __init__(self, node_id: int, shard_id: int, secret_key: bytes, public_key: bytes,
                 genesis: BlockHeader, env: ConsensusEnv, clock_offset: int = 0):
        self.node_id = node_id
        self.shard_id = shard_id
        self.secret_key = secret_key
        self.public_key = public_key
        self.env = env
        self.clock_offset = clock_offset
        self.genesis = genesis
        self.confirmed_chain: list[BlockHeader] = []
        self.tip_hash = genesis.block_hash
        self.tip_height = 0
        self.tip_slot = 0
        self.current_slot = 0
        self.last_decided = 0
        self.view = 0
        self.role = Role.MEMBER
        self.epoch_seed: Seed = genesis_seed(0)
        self.slots: dict[int, SlotState] = {}
        self.packed: dict[int, tuple[list[Transaction], int]] = {}
        self.commit_log: list[tuple[int, int, int]] = []  # (slot, commit local, anchor local)
        self.synced = 0
        self.halted = False
        self.desynced = False

    # -- clock and bookkeeping -------------------------------------------------
    def local(self, now: int) -> int:
        return now + self.clock_offset

    def _at(self, local_time: int) -> int:
        return local_time - self.clock_offset

    def _slot(self, t: int) -> SlotState:
        st = self.slots.get(t)
        if st is None:
            st = self.slots[t] = SlotState(t)
        return st

    def _prune(self) -> None:
        horizon = self.last_decided - 2
        for t in [t for t in self.slots if t < horizon]:
            del self.slots[t]
        for t in [t for t in self.packed if t < horizon]:
            del self.packed[t]

    @property
    def params(self) -> ProtocolParams:
        return self.env.params

    @property
    def latest_confirmed(self) -> BlockHeader:
        return self.confirmed_chain[-1] if self.confirmed_chain else self.genesis

    # -- leader election -------------------------------------------------------
    def leader_for(self, slot: int) -> int:
        members = self.env.members(self.shard_id)
        if not members:
            raise ConfigError(f"shard {self.shard_id} has no members")
        if self.params.leader is LeaderMode.STATIC:
            return members[self.view % len(members)][0]
        seed = seed_from_chain(self.confirmed_chain, slot, fallback=self.epoch_seed)
        return members[elect_leader(seed, slot, members)][0]

    def _leader_key(self, leader_id: int) -> bytes | None:
        return self.env.public_key(self.shard_id, leader_id)

    # -- entry points ----------------------------------------------------------
    def restart(self, slot: int, now: int) -> None:
        """Begin ``slot`` from a quiescent point: the leader packs then seals."""
        self.halted = False
        self.desynced = False
        p = self.params
        st = self._begin_slot(slot, now)
        st.restarted = True
        due = self.local(now) + p.t_pack
        st.expected = due
        if st.leader_id == self.node_id:
            self.env.schedule(self, self._at(due), Timer.SEAL, slot)
        self._arm_fallback(slot, due)

    def on_timer(self, timer: Timer, slot: int, now: int) -> None:
        if self.halted and timer is not Timer.WINDOW and timer is not Timer.WINDOW2:
            return
        if timer is Timer.VOTE:
            self.on_vote_time(slot, now)
        elif timer is Timer.WINDOW:
            self.on_vote_window_end(slot, now)
        elif timer is Timer.WINDOW2:
            self._on_commit_window_end(slot, now)
        elif timer is Timer.FALLBACK:
            self._on_fallback(slot, now)
        elif timer is Timer.SEAL:
            self.seal_block(slot, now)
        elif timer is Timer.SLOT_BEGIN:
            self.on_slot_begin(slot, now)

    def on_slot_begin(self, slot: int, now: int) -> None:
        """Serial modes: a fresh slot after the previous one was inserted."""
        st = self._begin_slot(slot, now)
        due = self.local(now) + self.params.t_pack
        st.expected = due
        if st.leader_id == self.node_id:
            self.env.schedule(self, self._at(due), Timer.SEAL, slot)
        self._arm_fallback(slot, due)

    def _catch_up(self, now: int) -> None:
        # certified blocks this node decided as failed, e.g. after its vote
        # window closed before a late quorum arrived
        for h in self.env.sync(self, now):
            if h.slot > self.last_decided or h.parent_hash != self.tip_hash:
                break
            self.confirmed_chain.append(h)
            self.tip_hash = h.block_hash
            self.tip_height = h.block_number
            self.tip_slot = h.slot
            self.synced += 1

    def _begin_slot(self, slot: int, now: int) -> SlotState:
        self._catch_up(now)
        self.current_slot = slot
        st = self._slot(slot)
        st.leader_id = self.leader_for(slot)
        self.role = Role.LEADER if st.leader_id == self.node_id else Role.MEMBER
        if self.role is Role.LEADER:
            self._pack(slot, now)
        early, st.early = st.early, []
        for kind, msg, at in early:
            if kind == "digest":
                self.on_receive_digest(msg, at)
            else:
                self.on_receive_block(msg, at)
        return st

    def _pack(self, slot: int, now: int) -> None:
        pending = []
        if self.params.consensus is ConsensusMode.CONCURRENT:
            prev = self.slots.get(slot - 1)
            if prev is not None and not prev.decided:
                pending = list(prev.blocks.values())
        txs = self.env.pack(self, self.tip_hash, pending, now)
        self.packed[slot] = (txs, self.local(now) + self.params.t_pack)

    def _arm_fallback(self, slot: int, expected_local: int) -> None:
        t = self.params.timing
        self.env.schedule(self, self._at(expected_local + 2 * t.delta_d), Timer.FALLBACK, slot)

    # -- receiving proposals ---------------------------------------------------
    def _accepting(self, slot: int) -> bool:
        return self.last_decided < slot <= self.last_decided + 2

    def on_receive_digest(self, digest: Digest, now: int) -> None:
        if not self._accepting(digest.slot):
            return
        st = self._slot(digest.slot)
        if st.decided:
            return
        if st.leader_id is None:
            st.early.append(("digest", digest, now))
            return
        pk = self._leader_key(digest.leader_id)
        if (digest.leader_id != st.leader_id or pk is None
                or not self.env.keystore.verify(pk, digest.signed_part(), digest.leader_signature)):
            self.env.on_invalid(self, "digest")
            return
        if digest.block_hash in st.digests:
            return
        st.digests[digest.block_hash] = digest
        self._observe(st, digest.block_hash, now)

    def on_receive_block(self, block: Block, now: int) -> None:
        h = block.header
        if h.shard_id != self.shard_id or not self._accepting(h.slot):
            return
        st = self._slot(h.slot)
        if st.decided:
            return
        if st.leader_id is None:
            st.early.append(("block", block, now))
            return
        pk = self._leader_key(h.leader_id)
        if (h.leader_id != st.leader_id or pk is None
                or not self.env.keystore.verify(pk, slot_message(h.slot), h.leader_slot_signature)):
            self.env.on_invalid(self, "block")
            return
        if block.block_hash in st.blocks:
            return
        st.blocks[block.block_hash] = block
        self._observe(st, block.block_hash, now)

    def _observe(self, st: SlotState, block_hash: bytes, now: int) -> None:
        known = set(st.digests) | set(st.blocks)
        if len(known) > 1 and not st.equivocation:
            # conflicting proposals from one leader: vote at once, still wait
            # for the window to close
            st.equivocation = True
            if st.anchor is not None and not st.voted:
                self._cast_vote(st, now)
        if st.anchor is None:
            st.anchor = self.local(now)
            self.env.schedule(self, self._at(st.anchor + self.params.timing.delta_b), Timer.VOTE, st.slot)
            if st.equivocation and not st.voted:
                self._cast_vote(st, now)

    def _on_fallback(self, slot: int, now: int) -> None:
        st = self._slot(slot)
        if st.anchor is not None or st.decided:
            return
        st.anchor = self.local(now)
        st.fallback = True
        self.env.schedule(self, self._at(st.anchor + self.params.timing.delta_b), Timer.VOTE, slot)

    # -- voting ----------------------------------------------------------------
    def _judge(self, st: SlotState) -> bytes:
        if st.equivocation or len(st.blocks) != 1:
            return self.tip_hash
        (bhash, block), = st.blocks.items()
        if st.digests and bhash not in st.digests:
            return self.tip_hash
        if self._valid(block):
            st.valid_hash = bhash
            return bhash
        return self.tip_hash

    def _valid(self, block: Block) -> bool:
        h = block.header
        if h.epoch != self.env.epoch_of(self):
            return False
        parent = h.parent_hash
        if parent == self.tip_hash:
            if h.block_number != self.tip_height + 1:
                return False
        else:
            # the predecessor this node validated but has not seen committed
            prev = self.slots.get(h.slot - 1)
            if prev is None or prev.valid_hash != parent:
                return False
            pblock = prev.blocks[parent]
            if pblock.header.parent_hash != self.tip_hash or h.block_number != self.tip_height + 2:
                return False
        return self.env.validate(self, block, parent)

    def _cast_vote(self, st: SlotState, now: int, phase: int = 0, target: bytes | None = None) -> None:
        h = target if target is not None else self._judge(st)
        vote = Vote(self.node_id, st.slot, h, sign(self.secret_key, vote_message(st.slot, h)))
        if phase == 0:
            st.voted = True
            st.vote_hash = h
        self.env.send_vote(self, vote, phase, now)

    def _check_sync(self, slot: int, now: int) -> bool:
        # a quorum for the previous slot that showed up after our window closed
        # means the delay bound no longer holds: stop voting until restarted
        st = self.slots.get(slot)
        prev = None if st is not None and st.restarted else self.slots.get(slot - 1)
        phase = 1 if self.params.consensus is ConsensusMode.SERIAL3 else 0
        if (not self.desynced and prev is not None and prev.decided
                and self.env.visible_tally(self, slot - 1, phase, now) != prev.decided_on):
            self.desynced = True
            self.env.on_desync(self, slot, now)
        return not self.desynced

    def on_vote_time(self, slot: int, now: int) -> None:
        st = self._slot(slot)
        if st.decided:
            return
        if not st.voted and self._check_sync(slot, now):
            self._cast_vote(st, now)
        t = self.params.timing
        self.env.schedule(self, self._at(st.anchor + t.period), Timer.WINDOW, slot)
        if self.params.consensus is ConsensusMode.CONCURRENT and not self.halted:
            self._begin_slot(slot + 1, now)

    def on_vote_window_end(self, slot: int, now: int) -> CommitDecision | None:
        st = self._slot(slot)
        if st.decided:
            return None
        winner = self.env.visible_tally(self, slot, 0, now)
        if self.params.consensus is ConsensusMode.SERIAL3:
            st.prepared = winner
            self._cast_vote(st, now, phase=1, target=winner if winner is not None else self.tip_hash)
            t = self.params.timing
            self.env.schedule(self, self._at(st.anchor + t.period + t.round_trip), Timer.WINDOW2, slot)
            return None
        return self._decide(st, winner, now)

    def _on_commit_window_end(self, slot: int, now: int) -> CommitDecision | None:
        st = self._slot(slot)
        if st.decided:
            return None
        winner = self.env.visible_tally(self, slot, 1, now)
        return self._decide(st, winner, now)

    # -- deciding --------------------------------------------------------------
    def _decide(self, st: SlotState, winner: bytes | None, now: int) -> CommitDecision:
        committed = False
        unknown = False
        if winner is not None and winner != self.tip_hash:
            block = st.blocks.get(winner)
            if block is None:
                block = self.env.fetch(self.shard_id, winner)
                unknown = True
            if block is not None:
                committed = self._commit_through(block, now, unknown)
        st.decided = True
        st.decided_on = winner
        self.last_decided = max(self.last_decided, st.slot)
        failed = not committed
        view_changed = failed and self.params.leader is LeaderMode.STATIC
        if view_changed:
            self.view += 1
        decision = CommitDecision(st.slot, winner if committed else None, unknown and committed)
        if self.env.on_decided(self, st.slot, committed, now):
            self.halted = True
            self._prune()
            return decision
        self._advance(st.slot, now, view_changed)
        self._prune()
        return decision

    def _commit_through(self, block: Block, now: int, unknown: bool) -> bool:
        # collect the uncommitted ancestors back to our tip
        path = [block]
        while path[-1].header.parent_hash != self.tip_hash:
            ph = path[-1].header.parent_hash
            if path[-1].header.slot <= self.tip_slot:
                self.env.on_fork(self, block, now)
                return False
            prev = self.slots.get(path[-1].header.slot - 1)
            parent = prev.blocks.get(ph) if prev is not None else None
            if parent is None:
                parent = self.env.fetch(self.shard_id, ph)
            if parent is None or parent.header.slot <= self.tip_slot:
                self.env.on_fork(self, block, now)
                return False
            path.append(parent)
        for b in reversed(path):
            self.confirmed_chain.append(b.header)
            self.tip_hash = b.block_hash
            self.tip_height = b.header.block_number
            self.tip_slot = b.header.slot
            st = self.slots.get(b.header.slot)
            anchor = st.anchor if st is not None and st.anchor is not None else self.local(now)
            self.commit_log.append((b.header.slot, self.local(now), anchor))
            self.env.on_commit(self, b, now, unknown)
        return True

    def _advance(self, slot: int, now: int, view_changed: bool) -> None:
        p = self.params
        local_now = self.local(now)
        penalty = p.view_change_penalty if view_changed else 0
        if p.consensus is ConsensusMode.CONCURRENT:
            nxt = slot + 1
            st = self._slot(nxt)
            if view_changed or st.leader_id is None:
                st.leader_id = self.leader_for(nxt)
                self.role = Role.LEADER if st.leader_id == self.node_id else Role.MEMBER
                if st.leader_id == self.node_id:
                    self._pack(nxt, now)
            if view_changed:
                delay = max(penalty, p.t_pack)
            else:
                delay = max(0, p.t_pack - p.timing.round_trip)
            due = local_now + delay
            st.expected = due
            if st.leader_id == self.node_id:
                self.env.schedule(self, self._at(due), Timer.SEAL, nxt)
            self._arm_fallback(nxt, due)
        else:
            self.env.schedule(self, self._at(local_now + p.t_insert + penalty), Timer.SLOT_BEGIN, slot + 1)

    # -- proposing -------------------------------------------------------------
    def seal_block(self, slot: int, now: int) -> Block | None:
        st = self._slot(slot)
        if st.leader_id != self.node_id or st.blocks or st.decided or not self._check_sync(slot, now):
            return None
        txs, _ready = self.packed.pop(slot, ([], 0))
        txs = self.env.refilter(self, self.tip_hash, txs)
        body = canonical_body(txs)
        m = self.env.shard_count
        header = BlockHeader(
            shard_id=self.shard_id,
            block_number=self.tip_height + 1,
            slot=slot,
            parent_hash=self.tip_hash,
            merkle_root=build_shard_tree(body, m).top_root,
            leader_id=self.node_id,
            leader_slot_signature=sign(self.secret_key, slot_message(slot)),
            epoch=self.env.epoch_of(self),
        )
        block = Block(header, body)
        digest = digest_for(block, self.secret_key)
        prev = self.slots.get(slot - 1)
        if prev is not None and prev.anchor is not None and not prev.fallback and not st.restarted:
            self.env.on_slot_duration(self, slot, self.local(now) - prev.anchor)
        self.env.broadcast(self, digest, block, now)
        return block
