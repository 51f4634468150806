from fractions import Fraction

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import accounts_in, signed_block
from spchain.codec import decode_canonical, encode_canonical
from spchain.consensus import tally
from spchain.ledger import ShardLedger, apply_block, split_cross_shard
from spchain.merkle import batch_proof, verify_batch
from spchain.planner import failure_probability
from spchain.types import Block, BlockHeader, Transaction, TxKind, Vote, make_transfer

hashes = st.binary(min_size=32, max_size=32)

headers = st.builds(
    BlockHeader,
    shard_id=st.integers(0, 15), block_number=st.integers(0, 2 ** 40), slot=st.integers(0, 2 ** 40),
    parent_hash=hashes, merkle_root=hashes, leader_id=st.integers(0, 2 ** 31),
    leader_slot_signature=st.binary(max_size=64), epoch=st.integers(0, 1000),
)


@given(headers)
def test_header_codec_round_trip(h):
    assert decode_canonical(BlockHeader, encode_canonical(h)) == h


@given(st.integers(1, 16), st.integers(0, 2 ** 30), st.integers(1, 2 ** 20), st.text(max_size=8))
def test_transaction_codec_round_trip(m, amount, nonce, tag):
    a = accounts_in(0, m, 1, tag=tag or "x")[0]
    b = accounts_in(m - 1, m, 1, tag=(tag or "x") + "r")[0]
    tx = make_transfer(a, b, amount, nonce, m)
    assert decode_canonical(Transaction, encode_canonical(tx)) == tx


@given(st.integers(1, 40), st.data())
def test_tally_needs_strict_majority(k, data):
    h, g = b"h" * 32, b"g" * 32
    yes = data.draw(st.integers(0, k))
    no = data.draw(st.integers(0, k - yes))
    ballot = [Vote(i, 7, h, b"") for i in range(yes)] + [Vote(yes + i, 7, g, b"") for i in range(no)]
    winner = tally(ballot, 7, k)
    if 2 * yes > k:
        assert winner == h
    elif 2 * no > k:
        assert winner == g
    else:
        assert winner is None


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.sampled_from([2, 4, 8, 16]), st.data())
def test_batch_proofs_verify_for_every_destination(m, data):
    per_dest = {d: data.draw(st.integers(0, 3), label=f"n{d}") for d in range(1, m)}
    sb = signed_block(m=m, k=3, per_dest=per_dest)
    tree = sb.tree
    for dest in range(m):
        txs = [tx for tx in sb.block.transactions if tx.dest_shard == dest]
        proof = batch_proof(tree, dest, sb.block.header, sb.header_signature, sb.certificate)
        assert verify_batch(txs, proof, sb.table, sb.keystore)
        if txs:
            assert not verify_batch(txs[1:], proof, sb.table, sb.keystore)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 400), st.integers(1, 8), st.data())
def test_failure_probability_is_a_probability(n, m, data):
    if n // m < 1:
        return
    f = data.draw(st.integers(0, n))
    p = failure_probability(n, f, m)
    assert isinstance(p, Fraction) and 0 <= p <= 1
    if f < n:
        assert failure_probability(n, f + 1, m) >= p


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), st.integers(1, 10 ** 9), st.integers(0, 10 ** 6))
def test_cross_shard_split_conserves_value(m, amount, extra):
    a = accounts_in(0, m, 1, tag="pa")[0]
    b = accounts_in(m - 1, m, 1, tag="pb")[0]
    w, d = split_cross_shard(make_transfer(a, b, amount, 1, m))
    assert (w.kind, d.kind) == (TxKind.WITHDRAWAL, TxKind.DEPOSIT)
    src = ShardLedger.genesis(0, m, [(a, amount + extra)])
    dst = ShardLedger.genesis(m - 1, m, [])
    h = BlockHeader(0, 1, 1, bytes(32), bytes(32), 0, b"", 0)
    src2 = apply_block(src, Block(h, (w,)))
    dst2 = apply_block(dst, Block(h, (d,)))
    assert src2.total_balance() + dst2.total_balance() == src.total_balance() + dst.total_balance()
    assert src2.account(a).balance == extra
