import dataclasses
import random

import pytest

from conftest import signed_block
from spchain.codec import encode_canonical
from spchain.crypto import sign
from spchain.merkle import (
    EMPTY_PREFIX,
    PROOF_FRAMING,
    RejectReason,
    batch_proof,
    build_shard_tree,
    empty_subtree_root,
    header_section_size,
    leaf_hash,
    merkle_root,
    node_hash,
    overhead_per_tx,
    tx_path,
    verify_batch,
    verify_tx_path,
)
from spchain.crypto import hash_bytes
from spchain.types import BlockHeader, ConfigError, Transaction, TxKind, digest_message, make_transfer


def tx_to(dest: int, m: int, i: int) -> Transaction:
    # addresses chosen by integer value so the shard is known up front
    sender = (m * (1000 + i)).to_bytes(20, "big")
    receiver = (m * (5000 + i) + dest).to_bytes(20, "big")
    return make_transfer(sender, receiver, 1 + i, 1, m)


def test_empty_tree_is_root_of_sentinels():
    tree = build_shard_tree([], 4)
    sentinels = [hash_bytes(EMPTY_PREFIX + s.to_bytes(4, "big")) for s in range(4)]
    assert list(tree.subtree_roots) == sentinels
    assert tree.top_root == node_hash(node_hash(sentinels[0], sentinels[1]), node_hash(sentinels[2], sentinels[3]))


def test_single_leaf_subtree():
    tx = tx_to(2, 4, 0)
    tree = build_shard_tree([tx], 4)
    assert tree.subtree_roots[2] == leaf_hash(tx.tx_hash)
    assert tree.subtree_roots[0] == empty_subtree_root(0)


def test_odd_node_is_promoted():
    a, b, c = (bytes([i]) * 32 for i in range(3))
    assert merkle_root([a, b, c]) == node_hash(node_hash(a, b), c)


def test_root_independent_of_input_order():
    txs = [tx_to(i % 4, 4, i) for i in range(20)]
    shuffled = txs[:]
    random.Random(5).shuffle(shuffled)
    assert build_shard_tree(txs, 4).top_root == build_shard_tree(shuffled, 4).top_root


@pytest.mark.parametrize("m", [2, 16])
def test_proof_sibling_count_and_size(m):
    sb = signed_block(m=m, k=3, per_dest={m - 1: 2})
    proof = batch_proof(sb.tree, m - 1, sb.block.header, sb.header_signature, sb.certificate)
    assert len(proof.sibling_roots) == m - 1
    encoded = encode_canonical(proof)
    assert len(encoded) == 32 * (m - 1) + header_section_size(proof) + PROOF_FRAMING


def test_unknown_destination_is_rejected():
    sb = signed_block()
    with pytest.raises(ConfigError):
        batch_proof(sb.tree, 9, sb.block.header)


def test_verify_round_trip_accepts(signed):
    for dest in (1, 3):
        proof = batch_proof(signed.tree, dest, signed.block.header, signed.header_signature, signed.certificate)
        txs = [t for t in signed.block.transactions if t.dest_shard == dest]
        assert verify_batch(txs, proof, signed.table, signed.keystore)


def test_tampered_amount_is_root_mismatch(signed):
    proof = batch_proof(signed.tree, 1, signed.block.header, signed.header_signature, signed.certificate)
    txs = [t for t in signed.block.transactions if t.dest_shard == 1]
    txs[0] = dataclasses.replace(txs[0], amount=txs[0].amount + 1)
    verdict = verify_batch(txs, proof, signed.table, signed.keystore)
    assert not verdict and verdict.reason is RejectReason.ROOT_MISMATCH


def test_header_signed_by_unknown_key_is_rejected(signed):
    forged_sk, _ = signed.keystore.generate_unregistered()
    h = signed.block.header
    forged = dataclasses.replace(h, leader_id=999, leader_slot_signature=sign(forged_sk, b"x"))
    sig = sign(forged_sk, digest_message(forged.block_number, forged.slot, forged.block_hash, 999))
    proof = batch_proof(signed.tree, 1, forged, sig, signed.certificate)
    txs = [t for t in signed.block.transactions if t.dest_shard == 1]
    verdict = verify_batch(txs, proof, signed.table, signed.keystore)
    assert not verdict and verdict.reason is RejectReason.UNKNOWN_LEADER


def test_missing_certificate_is_rejected(signed):
    proof = batch_proof(signed.tree, 1, signed.block.header, signed.header_signature, signed.certificate[:1])
    txs = [t for t in signed.block.transactions if t.dest_shard == 1]
    verdict = verify_batch(txs, proof, signed.table, signed.keystore)
    assert not verdict and verdict.reason is RejectReason.UNCERTIFIED


def test_per_tx_path_verifies_and_fails_after_tamper():
    txs = [tx_to(i % 4, 4, i) for i in range(13)]
    tree = build_shard_tree(txs, 4)
    for tx in txs:
        path = tx_path(tree, tx.tx_hash, tx.dest_shard)
        assert verify_tx_path(tx, path, tree.top_root)
        assert not verify_tx_path(dataclasses.replace(tx, amount=tx.amount + 1), path, tree.top_root)


def test_overhead_formulas():
    assert overhead_per_tx(16, 4096, 256) == (1.875, 384)
    assert overhead_per_tx(2, 4096, 1)[0] == 32
    with pytest.raises(ValueError):
        overhead_per_tx(4, 10, 11)


def test_batched_cheaper_except_single_tx_batches_at_large_m():
    # exhaustive over m in [2, 16], N_j in [1, 4096] with N = 4096
    losing = set()
    for m in range(2, 17):
        for nj in range(1, 4097):
            batched, per_tx = overhead_per_tx(m, 4096, nj)
            if not batched < per_tx:
                losing.add((m, nj))
    # 32(m-1) >= 32*12 only when a batch holds one tx and m >= 13
    assert losing == {(m, 1) for m in range(13, 17)}


def test_header_and_withdrawal_kinds_survive_encoding(signed):
    data = encode_canonical(signed.block.header)
    assert len(data) > 0
    assert all(t.kind is TxKind.WITHDRAWAL for t in signed.block.transactions)
    assert isinstance(signed.block.header, BlockHeader)
