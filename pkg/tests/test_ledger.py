import random

import pytest

from conftest import accounts_in
from spchain.ledger import (
    Invalid,
    LedgerInvariantError,
    Mempool,
    ShardLedger,
    apply_block,
    deposit_for,
    filter_valid,
    load_genesis_file,
    pack_transactions,
    split_cross_shard,
    try_apply,
    validate_block,
    validate_tx,
    withdrawal_for,
)
from spchain.types import Block, BlockHeader, TxKind, canonical_body, make_transfer

M = 4


def header(n: int = 1) -> BlockHeader:
    return BlockHeader(0, n, n, bytes(32), bytes(32), 0, b"sig", 0)


def ledger_with(balances: dict[bytes, int], shard: int = 0) -> ShardLedger:
    return ShardLedger.genesis(shard, M, balances.items())


@pytest.fixture
def people():
    a, b, c = accounts_in(0, M, 3, tag="p")
    far = accounts_in(2, M, 1, tag="p")[0]
    return a, b, c, far


def test_valid_transfer_and_insufficient_balance(people):
    a, b, _, _ = people
    led = ledger_with({a: 100})
    assert validate_tx(led, make_transfer(a, b, 60, 1, M)) is None
    assert validate_tx(led, make_transfer(a, b, 160, 1, M)) is Invalid.INSUFFICIENT_BALANCE
    assert validate_tx(led, make_transfer(a, b, 10, 2, M)) is Invalid.BAD_NONCE


def test_unproven_and_duplicate_deposits(people):
    a, _, _, far = people
    dep = deposit_for(withdrawal_for(make_transfer(far, a, 5, 1, M)))
    led = ledger_with({a: 0})
    assert validate_tx(led, dep) is Invalid.UNPROVEN_DEPOSIT
    accepted = {dep.parent_hash: dep}
    assert validate_tx(led, dep, accepted) is None
    after = apply_block(led, Block(header(), (dep,)))
    assert validate_tx(after, dep, accepted) is Invalid.DUPLICATE_DEPOSIT


def test_wrong_shard_rejected(people):
    a, b, _, far = people
    other = ledger_with({}, shard=2)
    assert validate_tx(other, make_transfer(a, b, 1, 1, M)) is Invalid.WRONG_SHARD


def test_split_halves_and_conservation(people):
    a, _, _, far = people
    w, d = split_cross_shard(make_transfer(a, far, 10, 1, M))
    assert (w.kind, d.kind) == (TxKind.WITHDRAWAL, TxKind.DEPOSIT)
    assert w.parent_hash == d.parent_hash == make_transfer(a, far, 10, 1, M).tx_hash
    assert w == withdrawal_for(make_transfer(a, far, 10, 1, M))
    assert d == deposit_for(w)
    with pytest.raises(ValueError):
        split_cross_shard(make_transfer(a, people[1], 1, 1, M))


def test_split_conserves_value_over_random_transfers():
    rng = random.Random(4)
    src = accounts_in(0, M, 50, tag="cs")
    dst = {s: accounts_in(s, M, 50, tag="cd") for s in (1, 2, 3)}
    for i in range(1000):
        sender = rng.choice(src)
        receiver = rng.choice(dst[rng.choice((1, 2, 3))])
        amount = rng.randint(1, 10 ** 6)
        origin = ledger_with({sender: 10 ** 7})
        w, d = split_cross_shard(make_transfer(sender, receiver, amount, 1, M))
        dest = ShardLedger.genesis(d.dest_shard, M, [])
        o2 = apply_block(origin, Block(header(), (w,)))
        d2 = apply_block(dest, Block(header(), (d,)))
        delta = (o2.total_balance() - origin.total_balance()) + (d2.total_balance() - dest.total_balance())
        assert delta == 0


def test_apply_withdrawal_updates_balance_and_nonce(people):
    a, _, _, far = people
    led = ledger_with({a: 50})
    w = withdrawal_for(make_transfer(a, far, 10, 1, M))
    after = apply_block(led, Block(header(), (w,)))
    assert after.account(a).balance == 40 and after.account(a).nonce == 1
    assert led.account(a).balance == 50  # the old value is untouched


def test_empty_block_changes_only_height(people):
    led = ledger_with({people[0]: 5})
    after = apply_block(led, Block(header(), ()))
    assert after.state_bytes() == led.state_bytes()
    assert after.height == led.height + 1


def test_invalid_tx_in_committed_block_raises(people):
    a, b, _, _ = people
    with pytest.raises(LedgerInvariantError):
        apply_block(ledger_with({a: 1}), Block(header(), (make_transfer(a, b, 5, 1, M),)))


def test_replay_gives_identical_state(people):
    a, b, c, far = people
    led = ledger_with({a: 1000, b: 1000, c: 1000})
    blocks = []
    for n in range(1, 6):
        txs = [make_transfer(a, b, n, n, M), withdrawal_for(make_transfer(c, far, n, n, M))]
        blocks.append(Block(header(n), canonical_body(txs)))
    def replay():
        cur = led
        for blk in blocks:
            cur = apply_block(cur, blk)
        return cur.state_bytes()
    assert replay() == replay()


def test_block_layout_and_capacity(people):
    a, b, c, _ = people
    led = ledger_with({a: 100, c: 100})
    txs = canonical_body([make_transfer(a, b, 1, 1, M), make_transfer(c, b, 1, 1, M)])
    assert validate_block(led, Block(header(), txs)) is None
    assert validate_block(led, Block(header(), txs[::-1])) is Invalid.BLOCK_LAYOUT
    assert validate_block(led, Block(header(), txs), capacity=1) is Invalid.BLOCK_LAYOUT
    reason, new = try_apply(led, Block(header(), txs))
    assert reason is None and new.account(a).balance == 99


def test_filter_valid_keeps_sequential_prefix(people):
    a, b, _, _ = people
    led = ledger_with({a: 10})
    txs = [make_transfer(a, b, 6, 1, M), make_transfer(a, b, 6, 2, M), make_transfer(a, b, 4, 2, M)]
    assert filter_valid(led, txs) == [txs[0], txs[2]]


def test_pack_excludes_predecessor_senders_and_caps(people):
    a, b, c, _ = people
    pool = Mempool(0, M)
    led = ledger_with({a: 100, c: 100})
    t1 = pool.submit(make_transfer(a, b, 1, 1, M), 0)
    t2 = pool.submit(make_transfer(c, b, 1, 1, M), 1)
    assert pack_transactions(pool, None, 4096, led) == [t1, t2]
    prev = Block(header(), (t1,))
    assert pool.pack(led, [prev]) == [t2]
    assert pool.pack(led, capacity=1) == [t1]


def test_pack_capacity_with_many_senders():
    senders = accounts_in(0, M, 10_000, tag="bulk")
    recv = accounts_in(0, M, 1, tag="bulk-r")[0]
    pool = Mempool(0, M)
    led = ShardLedger.genesis(0, M, [(s, 10) for s in senders])
    for i, s in enumerate(senders):
        pool.submit(make_transfer(s, recv, 1, 1, M), i)
    packed = pool.pack(led)
    assert len(packed) == 4096
    assert len({t.sender for t in packed}) == 4096


def test_pack_deposits_first_and_deposits_only(people):
    a, b, _, far = people
    pool = Mempool(0, M)
    led = ledger_with({a: 100})
    dep = deposit_for(withdrawal_for(make_transfer(far, b, 3, 1, M)))
    pool.submit(make_transfer(a, b, 1, 1, M), 0)
    assert pool.add_deposit(dep) and not pool.add_deposit(dep)
    assert pool.pack(led)[0] == dep
    assert pool.pack(led, deposits_only=True) == [dep]


def test_mempool_forgets_committed(people):
    a, b, _, _ = people
    pool = Mempool(0, M)
    tx = pool.submit(make_transfer(a, b, 1, 1, M))
    pool.on_commit(Block(header(), (tx,)))
    assert len(pool) == 0


def test_genesis_file(tmp_path):
    path = tmp_path / "genesis.json"
    path.write_text('[{"account": "alice", "balance": 7}, {"account": "bob", "balance": 9}]')
    alloc = load_genesis_file(path, 2)
    assert sum(b for rows in alloc.values() for _, b in rows) == 16
