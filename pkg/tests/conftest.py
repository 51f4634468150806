from __future__ import annotations

import random
import sys
from dataclasses import dataclass

import pytest

from spchain.crypto import Keystore, sign
from spchain.ledger import withdrawal_for
from spchain.merkle import build_shard_tree
from spchain.types import (
    Block,
    BlockHeader,
    ShardMemberTable,
    Transaction,
    Vote,
    account_address,
    address_to_shard,
    canonical_body,
    digest_message,
    make_transfer,
    slot_message,
    vote_message,
)


def accounts_in(shard: int, m: int, count: int, tag: str = "a") -> list[bytes]:
    out, j = [], 0
    while len(out) < count:
        addr = account_address(f"{tag}-{j}")
        j += 1
        if address_to_shard(addr, m) == shard:
            out.append(addr)
    return out


@dataclass
class SignedBlock:
    keystore: Keystore
    table: ShardMemberTable
    secrets: dict[int, bytes]
    block: Block
    header_signature: bytes
    certificate: tuple[Vote, ...]

    @property
    def tree(self):
        return build_shard_tree(self.block.transactions, self.table.m)


def signed_block(m: int = 4, k: int = 5, per_dest: dict[int, int] | None = None, source: int = 0,
                 seed: int = 0) -> SignedBlock:
    """A committed block of ``source`` with withdrawals to the given destinations."""
    ks = Keystore(seed)
    secrets, rows = {}, []
    for s in range(m):
        row = []
        for i in range(k):
            sk, pk = ks.generate()
            nid = s * k + i
            secrets[nid] = sk
            row.append((nid, pk))
        rows.append(tuple(row))
    table = ShardMemberTable(0, tuple(rows))
    per_dest = per_dest if per_dest is not None else {1: 3, 3: 2}
    total = sum(per_dest.values())
    senders = accounts_in(source, m, total + 1, tag=f"src{seed}")
    txs: list[Transaction] = []
    n = 0
    for dest, count in sorted(per_dest.items()):
        receivers = accounts_in(dest, m, count, tag=f"dst{seed}")
        for r in receivers:
            req = make_transfer(senders[n], r, 5 + n, 1, m)
            txs.append(withdrawal_for(req) if dest != source else req)
            n += 1
    body = canonical_body(txs)
    leader = table.members(source)[0][0]
    lsk = secrets[leader]
    tree = build_shard_tree(body, m)
    header = BlockHeader(source, 1, 1, bytes(32), tree.top_root, leader, sign(lsk, slot_message(1)), 0)
    hsig = sign(lsk, digest_message(1, 1, header.block_hash, leader))
    cert = tuple(Vote(nid, 1, header.block_hash, sign(secrets[nid], vote_message(1, header.block_hash)))
                 for nid, _ in table.members(source)[: k // 2 + 1])
    return SignedBlock(ks, table, secrets, Block(header, body), hsig, cert)


@pytest.fixture
def signed():
    return signed_block()


@pytest.fixture
def rng():
    return random.Random(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
