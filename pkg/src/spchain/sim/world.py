"""The simulated world: nodes, per-shard services, gossip and bookkeeping.

``World`` is the environment every :class:`ConsensusNode` talks to.  State
that all honest members of a shard would hold identically (mempool, deposit
inbox, validated ledgers, block store) is kept once per shard; each node's
chain, votes and timers stay its own.

Runs are divided by barriers.  At a barrier slot every node halts after
deciding it; the world then applies epoch changes or Δ updates and restarts
all nodes on the next slot.  The end of the configured slots is a barrier
too, followed by a drain phase that only carries deposits.
"""
from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Sequence, TextIO

import numpy as np

from ..codec import encode_canonical
from ..config import ScenarioConfig
from ..consensus import ConsensusMode, ConsensusNode, ProtocolParams, Timer
from ..crossshard import (
    CrossShardBatch,
    DepositInbox,
    OutboundRecord,
    RetryTracker,
    dispatch_outbound,
    on_receive_batch,
)
from ..crypto import Keystore
from ..ledger import (
    LedgerInvariantError,
    Mempool,
    ShardLedger,
    apply_block,
    filter_valid,
    load_genesis_file,
    try_apply,
)
from ..merkle import ShardMerkleTree, build_shard_tree
from ..metrics import MetricsReport, build_report, empty_report
from ..randomness import Seed, epoch_seed, genesis_seed
from ..types import (
    ZERO_HASH,
    Block,
    BlockHeader,
    Digest,
    ShardMemberTable,
    Transaction,
    TxKind,
    Vote,
    vote_message,
)
from .adversary import AdversaryKind, AdversaryStrategy, AttackContext, Proposal, apply_adversary
from .epochs import epoch_transition
from .events import EventKind, EventQueue
from .network import LatencyModel, VoteBoard
from .workload import Workload, saturated_rate, shard_accounts

_VOTE_SIZE = len(encode_canonical(Vote(0, 0, ZERO_HASH, bytes(32))))
_KEEP_SLOTS = 8


@dataclass
class ShardServices:
    shard_id: int
    genesis: BlockHeader
    mempool: Mempool
    inbox: DepositInbox
    retry: RetryTracker
    canon_ledger: ShardLedger
    blocks: dict[bytes, Block] = field(default_factory=dict)
    ledgers: dict[bytes, ShardLedger] = field(default_factory=dict)
    valid: dict[bytes, bool] = field(default_factory=dict)
    trees: dict[bytes, ShardMerkleTree] = field(default_factory=dict)
    signatures: dict[bytes, bytes] = field(default_factory=dict)  # block hash -> digest signature
    canon: list[bytes] = field(default_factory=list)
    canon_blocks: list[tuple[int, int, int]] = field(default_factory=list)  # (slot, tx count, time)
    canon_headers: list[BlockHeader] = field(default_factory=list)
    leader_honest: dict[int, bool] = field(default_factory=dict)
    targets: dict[int, int] = field(default_factory=dict)  # slot -> node the attacker suppresses
    boards: dict[tuple[int, int], VoteBoard] = field(default_factory=dict)
    max_slot: int = 0
    drain_honest: int = 0

    @property
    def tip_hash(self) -> bytes:
        return self.canon[-1] if self.canon else self.genesis.block_hash


def genesis_header(shard_id: int, m: int) -> BlockHeader:
    return BlockHeader(shard_id, 0, 0, ZERO_HASH, build_shard_tree((), m).top_root, 0, b"", 0)


class World:
    """One scenario run.  Not reusable: call :meth:`run` once."""

    def __init__(self, config: ScenarioConfig, trace: TextIO | None = None):
        self.config = cfg = config
        self.params: ProtocolParams = cfg.protocol()
        self.shard_count = cfg.m
        self.keystore = Keystore(cfg.rng_seed)
        self.queue = EventQueue()
        self.queue.log = trace
        self.net_rng = np.random.default_rng([cfg.rng_seed, 1])
        self.rng = random.Random(f"world-{cfg.rng_seed}")
        self.adv_rng = random.Random(f"adversary-{cfg.rng_seed}")
        self.latency = LatencyModel(cfg.latency.base_ms, cfg.latency.jitter_mean_ms, cfg.latency.bandwidth_bps)
        self.epoch = 0
        # seeded per run, so runs differ in their leaders before the first commit
        self.epoch_seed: Seed = genesis_seed(0, cfg.rng_seed)
        self.epoch_headers: list[BlockHeader] = []
        # accounting
        self.safety: dict[str, int] = {}
        self.invalid: dict[str, int] = defaultdict(int)
        self.confirm_latencies: list[int] = []
        self.atomic_latencies: list[int] = []
        self.withdrawn: dict[bytes, int] = {}
        self.deposited: set[bytes] = set()
        self.inflight = 0
        self.proof_bytes = 0
        self.proof_txs = 0
        self.batches_sent = 0
        self.batches_lost = 0
        self.slot_durations: list[int] = []
        self.delta_violations = 0
        self.desyncs = 0
        self.epoch_failures = 0
        self.conservation_checks = 0
        self.state_blocks = 0
        self.committed_unknown = 0
        self.suppressed = 0
        self.drain_slots = 0
        self.aborted = False
        self.draining = False
        self.halted: set[int] = set()
        self.halt_at = 0
        self._scaled: set[int] = set()
        self._vote_pool: dict = {}
        self._setup_nodes()
        self._setup_shards()

    # -- setup -------------------------------------------------------------------
    def _setup_nodes(self) -> None:
        cfg = self.config
        n, m, k = cfg.n, cfg.m, cfg.k
        keys = [self.keystore.generate() for _ in range(n)]
        self.secret = {nid: sk for nid, (sk, _) in enumerate(keys)}
        order = list(range(n))
        self.rng.shuffle(order)
        shards = [sorted(order[s * k:(s + 1) * k]) for s in range(m)]
        byz: list[int] = []
        for members in shards:
            byz.extend(self.rng.sample(members, cfg.byzantine_per_shard))
        strategies = cfg.adversary.strategies
        self.strategy: dict[int, AdversaryStrategy] = {
            nid: AdversaryStrategy(AdversaryKind(strategies[i % len(strategies)]))
            for i, nid in enumerate(sorted(byz))}
        self.forged_key = self.keystore.generate_unregistered()[0]
        assignment = tuple(tuple((nid, keys[nid][1]) for nid in members) for members in shards)
        self.table = ShardMemberTable(0, assignment)
        self.tables = {0: self.table}
        skew = cfg.clock_skew_ms
        self.nodes: dict[int, ConsensusNode] = {}
        self.genesis = [genesis_header(s, m) for s in range(m)]
        for s, members in enumerate(shards):
            for nid in members:
                offset = self.rng.randint(-skew, skew) if skew else 0
                strat = self.strategy.get(nid)
                if strat is not None and strat.kind is AdversaryKind.SILENCE:
                    continue
                self.nodes[nid] = node = ConsensusNode(nid, s, keys[nid][0], keys[nid][1], self.genesis[s], self,
                                                       offset)
                node.epoch_seed = self.epoch_seed
        self._index_members()

    def _index_members(self) -> None:
        m = self.config.m
        self.index = [{nid: i for i, (nid, _) in enumerate(self.table.members(s))} for s in range(m)]
        self.shard_nodes = [[self.nodes[nid] for nid, _ in self.table.members(s) if nid in self.nodes]
                            for s in range(m)]
        for s, members in enumerate(self.shard_nodes):
            for node in members:
                node.shard_id = s

    def _setup_shards(self) -> None:
        cfg = self.config
        m = cfg.m
        w = cfg.workload
        if cfg.genesis_file:
            alloc = load_genesis_file(cfg.genesis_file, m)
            accounts = [tuple(a for a, _ in alloc[s]) for s in range(m)]
        else:
            accounts = list(shard_accounts(m, w.accounts_per_shard))
            alloc = {s: [(a, w.initial_balance) for a in accounts[s]] for s in range(m)}
        self.shards: list[ShardServices] = []
        for s in range(m):
            led = ShardLedger.genesis(s, m, alloc[s])
            sv = ShardServices(s, self.genesis[s], Mempool(s, m), DepositInbox(s), RetryTracker(cfg.retry_slots), led)
            sv.ledgers[self.genesis[s].block_hash] = led
            self.shards.append(sv)
        self.initial_total = sum(sv.canon_ledger.total_balance() for sv in self.shards)
        if isinstance(w.rate, str):
            slot_ms = self.params.slot_duration() + self.latency.fixed_part(200)
            rate = saturated_rate(m, cfg.capacity, w.cross_shard_fraction if m > 1 else 0.0, slot_ms,
                                  w.load_factor)
        else:
            rate = float(w.rate)
        self.workload = Workload(accounts, [sv.mempool for sv in self.shards], rate, w.cross_shard_fraction,
                                 w.max_amount, cfg.payload_size, cfg.rng_seed)

    # -- small helpers -------------------------------------------------------------
    def honest(self, nid: int) -> bool:
        return nid not in self.strategy

    def _violation(self, kind: str) -> None:
        self.safety[kind] = self.safety.get(kind, 0) + 1
        if not self.config.expected_unsafe:
            self.aborted = True

    def _sample(self, size: int, n: int, bound: int) -> np.ndarray:
        delays, violated = self.latency.sample(self.net_rng, size, n, bound)
        if violated:
            self.delta_violations += n
        return delays

    def _vote_delays(self, k: int) -> np.ndarray:
        # votes are the most frequent message; draw their delays in blocks
        key = (k, self.params.timing.delta_v, self.latency)
        pool = self._vote_pool.get(key)
        if pool is None or pool[1] >= len(pool[0]):
            rows, violated = self.latency.sample(self.net_rng, _VOTE_SIZE, 64 * k, key[1])
            pool = [rows.reshape(64, k), 0, violated]
            self._vote_pool = {key: pool}
        row = pool[0][pool[1]].copy()
        pool[1] += 1
        if pool[2]:
            self.delta_violations += k
        return row

    def _ctx(self, node: ConsensusNode) -> AttackContext:
        return AttackContext(node.secret_key, self.forged_key, self.config.m, self.adv_rng, node.tip_hash)

    # -- ConsensusEnv: read-only queries --------------------------------------------
    def members(self, shard: int) -> tuple[tuple[int, bytes], ...]:
        return self.table.members(shard)

    def public_key(self, shard: int, node_id: int) -> bytes | None:
        return self.table.public_key(shard, node_id)

    def epoch_of(self, node: ConsensusNode) -> int:
        return self.epoch

    def fetch(self, shard: int, block_hash: bytes) -> Block | None:
        return self.shards[shard].blocks.get(block_hash)

    def sync(self, node: ConsensusNode, now: int) -> list[BlockHeader]:
        """Certified headers past the node's tip that a peer could have served by ``now``."""
        sv = self.shards[node.shard_id]
        lag = self.params.timing.delta_b
        out = []
        for i in range(node.tip_height, len(sv.canon_headers)):
            if sv.canon_blocks[i][2] + lag > now:
                break
            out.append(sv.canon_headers[i])
        return out

    def _ledger_at(self, sv: ShardServices, block_hash: bytes) -> ShardLedger | None:
        led = sv.ledgers.get(block_hash)
        if led is not None:
            return led
        block = sv.blocks.get(block_hash)
        if block is None:
            return None
        parent = self._ledger_at(sv, block.header.parent_hash)
        if parent is None:
            return None
        try:
            led = apply_block(parent, block)
        except LedgerInvariantError:
            return None
        sv.ledgers[block_hash] = led
        return led

    def validate(self, node: ConsensusNode, block: Block, parent: bytes) -> bool:
        sv = self.shards[node.shard_id]
        bhash = block.block_hash
        ok = sv.valid.get(bhash)
        if ok is None:
            ok = self._validate(sv, block, parent)
            sv.valid[bhash] = ok
        return ok

    def _validate(self, sv: ShardServices, block: Block, parent: bytes) -> bool:
        h = block.header
        if h.shard_id != sv.shard_id or h.parent_hash != parent:
            return False
        base = self._ledger_at(sv, parent)
        if base is None:
            return False
        try:
            tree = build_shard_tree(block.transactions, self.config.m)
        except ValueError:
            return False
        if tree.top_root != h.merkle_root:
            return False
        reason, after = try_apply(base, block, sv.inbox.accepted, self.params.capacity)
        if after is None:
            self.invalid[f"block-{reason.value}"] += 1
            return False
        sv.ledgers[block.block_hash] = after
        sv.trees[block.block_hash] = tree
        sv.blocks.setdefault(block.block_hash, block)
        return True

    def pack(self, node: ConsensusNode, parent: bytes, exclude: Sequence[Block], now: int) -> list[Transaction]:
        sv = self.shards[node.shard_id]
        if not self.draining:
            self.workload.materialize(now)
        base = self._ledger_at(sv, parent)
        if base is None:
            return []
        return sv.mempool.pack(base, exclude, self.params.capacity, deposits_only=self.draining)

    def refilter(self, node: ConsensusNode, parent: bytes, txs: list[Transaction]) -> list[Transaction]:
        sv = self.shards[node.shard_id]
        base = self._ledger_at(sv, parent)
        if base is None:
            return []
        return filter_valid(base, txs, sv.inbox.accepted)

    # -- ConsensusEnv: actions -------------------------------------------------------
    def schedule(self, node: ConsensusNode, at: int, timer: Timer, slot: int) -> None:
        at = max(int(at), self.queue.now)
        self.queue.push(at, EventKind.TIMER, node.node_id, node.on_timer, timer, slot, at)

    def _observe_leader(self, sv: ShardServices, slot: int, nid: int) -> None:
        adv = self.config.adversary
        if adv.target_leader_p <= 0:
            return
        if adv.target_counts_against_budget and self.honest(nid):
            return
        if self.adv_rng.random() < adv.target_leader_p:
            sv.targets[slot + 1] = nid

    def broadcast(self, node: ConsensusNode, digest: Digest, block: Block, now: int) -> None:
        sv = self.shards[node.shard_id]
        slot = block.header.slot
        sv.signatures[block.block_hash] = digest.leader_signature
        sv.blocks.setdefault(block.block_hash, block)
        suppressed = sv.targets.get(slot) == node.node_id
        self._observe_leader(sv, slot, node.node_id)
        if suppressed:
            self.suppressed += 1
            return
        proposals: list = [Proposal(digest, block)]
        strat = self.strategy.get(node.node_id)
        if strat is not None:
            proposals = apply_adversary(strat, self._ctx(node), proposals[0])
            for p in proposals[1:]:
                sv.blocks.setdefault(p.block.block_hash, p.block)
        # an equivocating leader sends each version to half the shard; honest
        # relaying then hands every member both versions within the bound
        timing = self.params.timing
        recipients = self.shard_nodes[node.shard_id]
        n = len(recipients)
        push = self.queue.push
        for prop in proposals:
            dd = self._sample(len(encode_canonical(prop.digest)), n, timing.delta_d)
            bd = self._sample(prop.block.wire_size, n, timing.delta_b)
            for j, peer in enumerate(recipients):
                td = now if peer is node else now + int(dd[j])
                tb = now if peer is node else now + int(bd[j])
                push(td, EventKind.DELIVER, peer.node_id, peer.on_receive_digest, prop.digest, td)
                push(tb, EventKind.DELIVER, peer.node_id, peer.on_receive_block, prop.block, tb)

    def _board(self, shard: int, slot: int, phase: int) -> VoteBoard:
        sv = self.shards[shard]
        board = sv.boards.get((slot, phase))
        if board is None:
            board = sv.boards[(slot, phase)] = VoteBoard(len(self.table.members(shard)), slot)
        return board

    def send_vote(self, node: ConsensusNode, vote: Vote, phase: int, now: int) -> None:
        s = node.shard_id
        sv = self.shards[s]
        if sv.targets.get(vote.slot) == node.node_id:
            self.suppressed += 1
            return
        votes = [vote]
        strat = self.strategy.get(node.node_id)
        if strat is not None:
            votes = apply_adversary(strat, self._ctx(node), vote)
        board = self._board(s, vote.slot, phase)
        pk = self.table.public_key(s, node.node_id)
        me = self.index[s][node.node_id]
        for v in votes:
            if pk is None or not self.keystore.verify(pk, vote_message(v.slot, v.latest_valid_block_hash),
                                                      v.signature):
                self.invalid["vote"] += 1
                continue
            arrivals = self._vote_delays(board.k) + now
            arrivals[me] = now
            board.post(v, arrivals)

    def visible_tally(self, node: ConsensusNode, slot: int, phase: int, now: int) -> bytes | None:
        board = self.shards[node.shard_id].boards.get((slot, phase))
        if board is None:
            return None
        return board.tally_at(self.index[node.shard_id][node.node_id], now)

    def _final_phase(self) -> int:
        return 1 if self.params.consensus is ConsensusMode.SERIAL3 else 0

    def on_commit(self, node: ConsensusNode, block: Block, now: int, unknown: bool) -> None:
        sv = self.shards[block.header.shard_id]
        sv.blocks.setdefault(block.block_hash, block)
        if unknown:
            self.committed_unknown += 1
        if self.honest(node.node_id):
            height = block.header.block_number
            if height <= len(sv.canon):
                if sv.canon[height - 1] != block.block_hash:
                    self._violation("conflicting-commit")
            elif height == len(sv.canon) + 1:
                self._canonical(sv, block, now)
            else:
                self._violation("chain-gap")
        if node.node_id == block.header.leader_id:
            self._first_dispatch(sv, node, block, now)

    def _canonical(self, sv: ShardServices, block: Block, now: int) -> None:
        h = block.header
        if h.parent_hash != sv.tip_hash:
            self._violation("chain-gap")
            return
        # a block validated on top of the current tip already has its ledger
        led = sv.ledgers.get(block.block_hash) if sv.valid.get(block.block_hash) else None
        if led is None:
            try:
                led = apply_block(sv.canon_ledger, block)
            except LedgerInvariantError:
                self._violation("ledger-invariant")
                return
        sv.canon.append(block.block_hash)
        sv.canon_ledger = led
        sv.ledgers[block.block_hash] = led
        sv.canon_blocks.append((h.slot, len(block.transactions), now))
        sv.canon_headers.append(h)
        sv.mempool.on_commit(block)
        self.epoch_headers.append(h)
        submit = self.workload.submit_times
        has_withdrawals = False
        for tx in block.transactions:
            if tx.kind == TxKind.INTRA:
                at = submit.pop(tx.tx_hash, None)
                if at is not None:
                    self.confirm_latencies.append(now - at)
            elif tx.kind == TxKind.WITHDRAWAL:
                has_withdrawals = True
                self.withdrawn[tx.parent_hash] = tx.amount
                self.inflight += tx.amount
                at = submit.get(tx.parent_hash)
                if at is not None:
                    self.confirm_latencies.append(now - at)
            else:
                if tx.parent_hash not in self.withdrawn or tx.parent_hash in self.deposited:
                    self._violation("orphan-deposit")
                    continue
                self.deposited.add(tx.parent_hash)
                self.inflight -= tx.amount
                at = submit.pop(tx.parent_hash, None)
                if at is not None:
                    self.atomic_latencies.append(now - at)
        if has_withdrawals:
            tree = sv.trees.get(block.block_hash) or build_shard_tree(block.transactions, self.config.m)
            sig = sv.signatures.get(block.block_hash, b"")
            cert = self._certificate(sv, block)
            dests = frozenset(t.dest_shard for t in block.transactions if t.kind == TxKind.WITHDRAWAL)
            sv.retry.record(OutboundRecord(block, tree, sig, cert, h.slot, h.slot, dests))
        self._prune(sv, h.slot)

    def _certificate(self, sv: ShardServices, block: Block) -> tuple[Vote, ...]:
        board = sv.boards.get((block.header.slot, self._final_phase()))
        if board is None:
            return ()
        return board.certificate(block.block_hash, board.k // 2 + 1)

    def _prune(self, sv: ShardServices, tip_slot: int) -> None:
        horizon = tip_slot - _KEEP_SLOTS
        tip = sv.tip_hash
        stale = [h for h, b in sv.blocks.items() if b.header.slot < horizon and h != tip]
        for h in stale:
            for store in (sv.blocks, sv.ledgers, sv.valid, sv.trees, sv.signatures):
                store.pop(h, None)
        for key in [key for key in sv.boards if key[0] < horizon]:
            del sv.boards[key]
        for slot in [slot for slot in sv.targets if slot < horizon]:
            del sv.targets[slot]

    # -- cross-shard traffic ------------------------------------------------------------
    def _first_dispatch(self, sv: ShardServices, node: ConsensusNode, block: Block, now: int) -> None:
        if not any(t.kind == TxKind.WITHDRAWAL for t in block.transactions):
            return
        tree = sv.trees.get(block.block_hash) or build_shard_tree(block.transactions, self.config.m)
        sig = sv.signatures.get(block.block_hash, b"")
        batches, _announce = dispatch_outbound(block, tree, sig, self._certificate(sv, block), self.config.proofs)
        strat = self.strategy.get(node.node_id)
        for batch in batches:
            out = apply_adversary(strat, self._ctx(node), batch) if strat is not None else [batch]
            for b in out:
                self._send_batch(b, now)

    def _send_batch(self, batch: CrossShardBatch, now: int) -> None:
        members = self.table.member_ids(batch.dest_shard)
        fanout = min(self.config.batch_fanout, len(members))
        recipients = self.rng.sample(members, fanout)
        delays = self._sample(batch.wire_size(), fanout, self.params.timing.delta_b)
        self.batches_sent += 1
        self.proof_bytes += batch.proof_bytes()
        self.proof_txs += len(batch.withdrawals)
        arrivals = [now + int(d) for r, d in zip(recipients, delays) if self.honest(r)]
        if not arrivals:
            self.batches_lost += 1
            return
        at = min(arrivals)
        self.queue.push(at, EventKind.DELIVER, batch.dest_shard, self._on_batch, batch)

    def _on_batch(self, batch: CrossShardBatch) -> None:
        sv = self.shards[batch.dest_shard]
        verdict = on_receive_batch(sv.inbox, batch, self.tables, self.keystore, sv.mempool)
        if verdict and batch.tampered:
            self._violation("tampered-deposit")

    def _delivered(self, dest: int, link: bytes) -> bool:
        return link in self.shards[dest].canon_ledger.applied_deposits

    def _retry(self, sv: ShardServices, slot: int, now: int) -> None:
        # the client asks an honest origin member to re-send the proof
        for rec, missing in sv.retry.retry_undelivered(slot, self._delivered):
            batches, _ = dispatch_outbound(rec.block, rec.tree, rec.header_signature, rec.certificate,
                                           self.config.proofs, only=missing)
            for batch in batches:
                self._send_batch(batch, now)

    # -- slot outcomes and barriers ---------------------------------------------------------
    def on_fork(self, node: ConsensusNode, block: Block, now: int) -> None:
        if self.honest(node.node_id):
            self._violation("fork")

    def on_desync(self, node: ConsensusNode, slot: int, now: int) -> None:
        if self.honest(node.node_id):
            self.desyncs += 1

    def on_invalid(self, node: ConsensusNode, what: str) -> None:
        self.invalid[what] += 1

    def on_slot_duration(self, node: ConsensusNode, slot: int, duration: int) -> None:
        if self.honest(node.node_id):
            self.slot_durations.append(duration)

    def on_decided(self, node: ConsensusNode, slot: int, committed: bool, now: int) -> bool:
        sv = self.shards[node.shard_id]
        if self.honest(node.node_id) and slot not in sv.leader_honest:
            st = node.slots.get(slot)
            leader = st.leader_id if st is not None else None
            honest_leader = leader is not None and self.honest(leader)
            sv.leader_honest[slot] = honest_leader
            sv.max_slot = max(sv.max_slot, slot)
            if self.draining:
                if honest_leader:
                    sv.drain_honest += 1
                self._check_drain(slot)
            self._retry(sv, slot, now)
            # latency changes take effect when the first shard moves past the slot
            for i, ev in enumerate(self.config.latency_events):
                if ev.at_slot == slot + 1 and i not in self._scaled:
                    self._scaled.add(i)
                    self.latency = replace(self.latency, scale=ev.scale)
        if slot >= self.halt_at:
            self.halted.add(node.node_id)
            return True
        return False

    def outstanding_deposits(self) -> int:
        return len(self.withdrawn) - len(self.deposited)

    def _check_drain(self, slot: int) -> None:
        done = self.outstanding_deposits() == 0 or all(
            sv.drain_honest >= self.config.drain_honest_slots for sv in self.shards)
        if done:
            self.halt_at = min(self.halt_at, max(sv.max_slot for sv in self.shards) + 1)

    def _barriers(self) -> list[int]:
        cfg = self.config
        points = {cfg.slots}
        if cfg.slots_per_epoch:
            points.update(range(cfg.slots_per_epoch, cfg.slots, cfg.slots_per_epoch))
        # an update that repeats the bound in force needs no barrier
        current = (cfg.timing.delta_d, cfg.timing.delta_b, cfg.timing.delta_v)
        for up in sorted(cfg.delta_updates, key=lambda u: u.at_slot):
            new = (up.delta_d, up.delta_b, up.delta_v)
            if new != current and 1 < up.at_slot <= cfg.slots:
                points.add(up.at_slot - 1)
            current = new
        return sorted(points)

    def conservation_holds(self) -> bool:
        total = sum(sv.canon_ledger.total_balance() for sv in self.shards)
        return total + self.inflight == self.initial_total

    def _check_conservation(self) -> None:
        self.conservation_checks += 1
        if not self.conservation_holds():
            self._violation("conservation")

    def _restart(self, slot: int) -> None:
        self.halted.clear()
        now = self.queue.now
        for node in self.nodes.values():
            node.restart(slot, now)

    def _run_until_barrier(self) -> None:
        q = self.queue
        total = len(self.nodes)
        while len(q) and not self.aborted and len(self.halted) < total:
            q.run_next()

    def _epoch_change(self) -> None:
        seed, _empty = epoch_seed(self.epoch_headers, self.epoch_seed)
        self.epoch_headers = []
        honest = {nid: self.honest(nid) for s in range(self.config.m) for nid in self.table.member_ids(s)}
        tr = epoch_transition(self.table, seed, self.config.churn_fraction, honest)
        self.state_blocks += len(tr.state_blocks)
        old_shard = {nid: self.table.shard_of(nid) for nid in tr.moved}
        self.table = tr.table
        self.epoch = tr.table.epoch
        self.tables[self.epoch] = tr.table
        self.epoch_seed = seed
        if tr.failed:
            self.epoch_failures += 1
            self.aborted = True
        moved = set(tr.moved)
        refs = {}
        for s in range(self.config.m):
            refs[s] = next((nd for nd in self.shard_nodes[s] if nd.node_id not in moved and self.honest(nd.node_id)),
                           None)
        self._index_members()
        for nid in tr.moved:
            node = self.nodes.get(nid)
            if node is None:
                continue
            ref = refs.get(node.shard_id)
            if ref is None or old_shard[nid] == node.shard_id:
                continue
            _sync(node, ref)
        for node in self.nodes.values():
            node.epoch_seed = seed

    def _apply_barrier(self, barrier: int) -> None:
        cfg = self.config
        if cfg.slots_per_epoch and barrier % cfg.slots_per_epoch == 0 and barrier < cfg.slots:
            self._check_conservation()
            self._epoch_change()
        for up in cfg.delta_updates:
            if up.at_slot == barrier + 1:
                timing = replace(self.params.timing, delta_d=up.delta_d, delta_b=up.delta_b, delta_v=up.delta_v)
                self.params = replace(self.params, timing=timing)
                # agreeing on the new bound also settles the chain tip
                for node in self.nodes.values():
                    _adopt(node, self.shards[node.shard_id].canon_headers)

    def run(self) -> MetricsReport:
        cfg = self.config
        if cfg.slots == 0:
            return empty_report(cfg.to_dict(), cfg.m)
        self._apply_latency_at(1)
        barriers = self._barriers()
        start = 1
        for barrier in barriers:
            self.halt_at = barrier
            self._restart(start)
            self._run_until_barrier()
            if self.aborted:
                break
            self._apply_barrier(barrier)
            if self.aborted:
                break
            start = barrier + 1
        if not self.aborted:
            self._check_conservation()
            self._drain(start)
        if not self.aborted:
            self._check_conservation()
        return build_report(self)

    def _apply_latency_at(self, slot: int) -> None:
        for i, ev in enumerate(self.config.latency_events):
            if ev.at_slot <= slot:
                self._scaled.add(i)
                self.latency = replace(self.latency, scale=ev.scale)

    def _drain(self, start: int) -> None:
        cfg = self.config
        if self.outstanding_deposits() == 0 or cfg.max_drain_slots == 0:
            return
        self.draining = True
        self.workload.stopped = True
        for sv in self.shards:
            sv.drain_honest = 0
        self.halt_at = cfg.slots + cfg.max_drain_slots
        self._restart(start)
        self._run_until_barrier()
        self.drain_slots = max(sv.max_slot for sv in self.shards) - cfg.slots


def _sync(node: ConsensusNode, ref: ConsensusNode) -> None:
    """Bring a node that changed shard up to a peer's confirmed state."""
    node.genesis = ref.genesis
    node.confirmed_chain = list(ref.confirmed_chain)
    node.tip_hash = ref.tip_hash
    node.tip_height = ref.tip_height
    node.tip_slot = ref.tip_slot
    node.last_decided = ref.last_decided
    node.current_slot = ref.current_slot
    node.view = ref.view
    node.slots = {}
    node.packed = {}


def _adopt(node: ConsensusNode, canon: list[BlockHeader]) -> None:
    h = node.tip_height
    if h >= len(canon) or (h and canon[h - 1].block_hash != node.tip_hash):
        return
    for hd in canon[h:]:
        node.confirmed_chain.append(hd)
        node.synced += 1
    node.tip_hash = canon[-1].block_hash
    node.tip_height = canon[-1].block_number
    node.tip_slot = canon[-1].slot


def run(config: ScenarioConfig, trace: TextIO | None = None) -> MetricsReport:
    """Simulate one scenario and return its report."""
    return World(config, trace).run()
