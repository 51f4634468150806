"""Account-model shard state: validation, packing, block application.

``ShardLedger`` is a value: ``apply_block`` returns a new ledger and leaves
the old one untouched, so nodes on the same chain tip can share snapshots.
Cross-shard transfers are split into a withdrawal (debits the sender in the
origin shard) and a deposit (credits the receiver in the destination shard);
both halves carry the client request hash in ``parent_hash``.
"""
from __future__ import annotations

import enum
import json
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .types import (
    DEFAULT_BLOCK_CAPACITY,
    Block,
    Transaction,
    TxKind,
    account_address,
    address_to_shard,
)


class Invalid(str, enum.Enum):
    BAD_NONCE = "bad-nonce"
    INSUFFICIENT_BALANCE = "insufficient-balance"
    WRONG_SHARD = "wrong-shard"
    UNPROVEN_DEPOSIT = "unproven-deposit"
    DUPLICATE_DEPOSIT = "duplicate-deposit"
    BLOCK_LAYOUT = "block-layout"


class LedgerInvariantError(RuntimeError):
    """An invalid transaction reached a committed block."""


@dataclass(frozen=True, slots=True)
class AccountState:
    address: bytes
    balance: int = 0
    nonce: int = 0


@dataclass(frozen=True, eq=False)
class ShardLedger:
    shard_id: int
    m: int
    accounts: Mapping[bytes, AccountState] = field(default_factory=dict)
    # parent hashes of deposits already credited here
    applied_deposits: frozenset[bytes] = frozenset()
    height: int = 0

    @classmethod
    def genesis(cls, shard_id: int, m: int, allocations: Iterable[tuple[bytes, int]]) -> "ShardLedger":
        accounts = {}
        for addr, balance in allocations:
            if address_to_shard(addr, m) != shard_id:
                raise ValueError("genesis allocation for an account of another shard")
            accounts[addr] = AccountState(addr, balance, 0)
        return cls(shard_id, m, accounts)

    def account(self, address: bytes) -> AccountState:
        return self.accounts.get(address) or AccountState(address)

    def total_balance(self) -> int:
        return sum(a.balance for a in self.accounts.values())

    def state_bytes(self) -> bytes:
        """Deterministic serialization used for replay comparisons."""
        out = bytearray()
        for addr in sorted(self.accounts):
            a = self.accounts[addr]
            out += addr + a.balance.to_bytes(16, "big") + a.nonce.to_bytes(8, "big")
        for link in sorted(self.applied_deposits):
            out += link
        return bytes(out)


def validate_tx(ledger: ShardLedger, tx: Transaction,
                accepted_deposits: Mapping[bytes, object] | frozenset = frozenset()) -> Invalid | None:
    """``None`` when valid, otherwise the reason."""
    if tx.kind == TxKind.DEPOSIT:
        if tx.dest_shard != ledger.shard_id or address_to_shard(tx.receiver, ledger.m) != ledger.shard_id:
            return Invalid.WRONG_SHARD
        if tx.parent_hash in ledger.applied_deposits:
            return Invalid.DUPLICATE_DEPOSIT
        if tx.parent_hash not in accepted_deposits:
            return Invalid.UNPROVEN_DEPOSIT
        return None
    if tx.origin_shard != ledger.shard_id or address_to_shard(tx.sender, ledger.m) != ledger.shard_id:
        return Invalid.WRONG_SHARD
    if (tx.kind == TxKind.INTRA) != (tx.dest_shard == tx.origin_shard):
        return Invalid.WRONG_SHARD
    acct = ledger.account(tx.sender)
    if tx.nonce != acct.nonce + 1:
        return Invalid.BAD_NONCE
    if acct.balance < tx.amount:
        return Invalid.INSUFFICIENT_BALANCE
    return None


def _step(accounts: dict, applied: set, ledger: ShardLedger, tx: Transaction,
          accepted: Mapping | frozenset) -> Invalid | None:
    # hot path: shard checks are inlined rather than calling address_to_shard
    m, shard = ledger.m, ledger.shard_id
    if tx.kind == TxKind.DEPOSIT:
        if tx.dest_shard != shard or int.from_bytes(tx.receiver, "big") % m != shard:
            return Invalid.WRONG_SHARD
        link = tx.parent_hash
        if link in applied:
            return Invalid.DUPLICATE_DEPOSIT
        if link not in accepted:
            return Invalid.UNPROVEN_DEPOSIT
        acct = accounts.get(tx.receiver)
        accounts[tx.receiver] = (AccountState(tx.receiver, acct.balance + tx.amount, acct.nonce) if acct
                                 else AccountState(tx.receiver, tx.amount, 0))
        applied.add(link)
        return None
    sender = tx.sender
    if tx.origin_shard != shard or int.from_bytes(sender, "big") % m != shard:
        return Invalid.WRONG_SHARD
    if (tx.kind == TxKind.INTRA) != (tx.dest_shard == shard):
        return Invalid.WRONG_SHARD
    acct = accounts.get(sender)
    nonce, balance = (acct.nonce, acct.balance) if acct else (0, 0)
    if tx.nonce != nonce + 1:
        return Invalid.BAD_NONCE
    if balance < tx.amount:
        return Invalid.INSUFFICIENT_BALANCE
    accounts[sender] = AccountState(sender, balance - tx.amount, nonce + 1)
    if tx.kind == TxKind.INTRA:
        recv = accounts.get(tx.receiver)
        accounts[tx.receiver] = (AccountState(tx.receiver, recv.balance + tx.amount, recv.nonce) if recv
                                 else AccountState(tx.receiver, tx.amount, 0))
    return None


def _run(ledger: ShardLedger, block: Block, accepted) -> tuple[Invalid | None, dict, set]:
    accounts = dict(ledger.accounts)
    applied = set(ledger.applied_deposits)
    for tx in block.transactions:
        reason = _step(accounts, applied, ledger, tx, accepted)
        if reason is not None:
            return reason, accounts, applied
    return None, accounts, applied


def validate_block(ledger: ShardLedger, block: Block,
                   accepted_deposits: Mapping | frozenset = frozenset(),
                   capacity: int = DEFAULT_BLOCK_CAPACITY) -> Invalid | None:
    """Sequential validity of every transaction plus body layout."""
    txs = block.transactions
    if len(txs) > capacity:
        return Invalid.BLOCK_LAYOUT
    for a, b in zip(txs, txs[1:]):
        if (a.dest_shard, a.tx_hash) >= (b.dest_shard, b.tx_hash):
            return Invalid.BLOCK_LAYOUT
    reason, _, _ = _run(ledger, block, accepted_deposits)
    return reason


def try_apply(ledger: ShardLedger, block: Block, accepted_deposits: Mapping | frozenset = frozenset(),
              capacity: int = DEFAULT_BLOCK_CAPACITY) -> tuple[Invalid | None, ShardLedger | None]:
    """Validate and apply in one pass; the ledger is ``None`` when invalid."""
    txs = block.transactions
    if len(txs) > capacity:
        return Invalid.BLOCK_LAYOUT, None
    for a, b in zip(txs, txs[1:]):
        if (a.dest_shard, a.tx_hash) >= (b.dest_shard, b.tx_hash):
            return Invalid.BLOCK_LAYOUT, None
    reason, accounts, applied = _run(ledger, block, accepted_deposits)
    if reason is not None:
        return reason, None
    return None, ShardLedger(ledger.shard_id, ledger.m, accounts, frozenset(applied), ledger.height + 1)


def filter_valid(ledger: ShardLedger, txs: Iterable[Transaction],
                 accepted_deposits: Mapping | frozenset = frozenset()) -> list[Transaction]:
    """Keep the transactions that still apply, in order, on top of ``ledger``."""
    accounts = dict(ledger.accounts)
    applied = set(ledger.applied_deposits)
    return [tx for tx in txs if _step(accounts, applied, ledger, tx, accepted_deposits) is None]


def apply_block(ledger: ShardLedger, block: Block,
                accepted_deposits: Mapping | frozenset | None = None) -> ShardLedger:
    """Apply a committed block.

    Deposits in a committed block are trusted (they were proven when first
    accepted) unless ``accepted_deposits`` is supplied.
    """
    accepted = accepted_deposits if accepted_deposits is not None else _AnyDeposit()
    reason, accounts, applied = _run(ledger, block, accepted)
    if reason is not None:
        raise LedgerInvariantError(f"invalid transaction in committed block: {reason.value}")
    return ShardLedger(ledger.shard_id, ledger.m, accounts, frozenset(applied), ledger.height + 1)


class _AnyDeposit:
    def __contains__(self, item) -> bool:
        return True


def split_cross_shard(tx: Transaction) -> tuple[Transaction, Transaction]:
    if tx.kind != TxKind.INTRA or tx.origin_shard == tx.dest_shard:
        raise ValueError("only a cross-shard transfer request can be split")
    common = dict(sender=tx.sender, receiver=tx.receiver, amount=tx.amount, nonce=tx.nonce,
                  origin_shard=tx.origin_shard, dest_shard=tx.dest_shard,
                  payload_size=tx.payload_size, parent_hash=tx.tx_hash)
    return (Transaction(kind=TxKind.WITHDRAWAL, **common),
            Transaction(kind=TxKind.DEPOSIT, **common))


def withdrawal_for(tx: Transaction) -> Transaction:
    """The withdrawal half of a cross-shard request (first element of the split)."""
    return Transaction(tx.sender, tx.receiver, tx.amount, tx.nonce, TxKind.WITHDRAWAL, tx.origin_shard,
                       tx.dest_shard, tx.payload_size, tx.tx_hash)


def deposit_for(withdrawal: Transaction) -> Transaction:
    """The deposit half matching a committed withdrawal."""
    if withdrawal.kind != TxKind.WITHDRAWAL:
        raise ValueError("not a withdrawal")
    return Transaction(sender=withdrawal.sender, receiver=withdrawal.receiver, amount=withdrawal.amount,
                       nonce=withdrawal.nonce, kind=TxKind.DEPOSIT, origin_shard=withdrawal.origin_shard,
                       dest_shard=withdrawal.dest_shard, payload_size=withdrawal.payload_size,
                       parent_hash=withdrawal.parent_hash)


class Mempool:
    """Transactions a shard's honest members know about.

    Client requests are kept per sender in nonce order; verified deposits
    wait in ``pending_deposits`` (keyed by parent hash) until committed.
    """

    def __init__(self, shard_id: int, m: int):
        self.shard_id = shard_id
        self.m = m
        self._queues: dict[bytes, deque[tuple[int, int, Transaction]]] = {}
        self._seq = 0
        self.pending_deposits: OrderedDict[bytes, Transaction] = OrderedDict()

    def __len__(self) -> int:
        return sum(len(q) for q in self._queues.values()) + len(self.pending_deposits)

    def submit(self, tx: Transaction, arrival: int = 0) -> Transaction:
        """Queue a client request; cross-shard requests enter as withdrawals."""
        if tx.kind == TxKind.INTRA and tx.origin_shard != tx.dest_shard:
            tx = withdrawal_for(tx)
        self._queues.setdefault(tx.sender, deque()).append((arrival, self._seq, tx))
        self._seq += 1
        return tx

    def add_deposit(self, deposit: Transaction) -> bool:
        """Queue a verified deposit once; False if it was already queued."""
        if deposit.parent_hash in self.pending_deposits:
            return False
        self.pending_deposits[deposit.parent_hash] = deposit
        return True

    def client_txs(self) -> Iterator[Transaction]:
        for q in self._queues.values():
            for _, _, tx in q:
                yield tx

    def on_commit(self, block: Block) -> None:
        for tx in block.transactions:
            if tx.kind == TxKind.DEPOSIT:
                self.pending_deposits.pop(tx.parent_hash, None)
                continue
            q = self._queues.get(tx.sender)
            if not q:
                continue
            for i, (_, _, queued) in enumerate(q):
                if queued.tx_hash == tx.tx_hash:
                    del q[i]
                    break
            if not q:
                del self._queues[tx.sender]

    def pack(self, ledger: ShardLedger, prev_blocks: Iterable[Block] = (),
             capacity: int = DEFAULT_BLOCK_CAPACITY, deposits_only: bool = False) -> list[Transaction]:
        """Deposits first, then client requests by arrival.

        Senders of ``prev_blocks`` (the unconfirmed predecessor) are skipped,
        and at most one client request per sender is taken so the selection is
        valid whether or not the predecessor commits.
        """
        excluded: set[bytes] = set()
        for b in prev_blocks:
            excluded |= b.senders
        chosen: list[Transaction] = []
        for link, dep in self.pending_deposits.items():
            if len(chosen) >= capacity:
                return chosen
            if dep.sender in excluded or link in ledger.applied_deposits:
                continue
            chosen.append(dep)
        if deposits_only:
            return chosen
        heads = []
        accounts = ledger.accounts
        for sender, q in self._queues.items():
            if sender in excluded:
                continue
            acct = accounts.get(sender)
            nonce = acct.nonce if acct else 0
            while q and q[0][2].nonce <= nonce:
                q.popleft()  # already committed through another path
            if not q:
                continue
            arrival, seq, tx = q[0]
            if tx.nonce != nonce + 1:
                continue
            if (acct.balance if acct else 0) < tx.amount:
                continue
            heads.append((arrival, seq, tx))
        heads.sort(key=lambda item: (item[0], item[1]))
        room = capacity - len(chosen)
        chosen.extend(tx for _, _, tx in heads[:room])
        return chosen


def pack_transactions(pool: Mempool, prev_block: Block | None, capacity: int,
                      ledger: ShardLedger) -> list[Transaction]:
    return pool.pack(ledger, [prev_block] if prev_block is not None else [], capacity)


def load_genesis_file(path: str | Path, m: int) -> dict[int, list[tuple[bytes, int]]]:
    """Read ``[{"account": name, "balance": n}, ...]`` into per-shard allocations."""
    raw = json.loads(Path(path).read_text())
    per_shard: dict[int, list[tuple[bytes, int]]] = {s: [] for s in range(m)}
    for entry in raw:
        if isinstance(entry, dict):
            name, balance = entry["account"], entry["balance"]
        else:
            name, balance = entry
        addr = account_address(name)
        per_shard[address_to_shard(addr, m)].append((addr, int(balance)))
    return per_shard
