from conftest import signed_block
from spchain.codec import decode_canonical, encode_canonical
from spchain.crossshard import (
    BATCHED,
    PER_TX,
    CrossShardBatch,
    DepositInbox,
    OutboundRecord,
    PathProof,
    RetryTracker,
    dispatch_outbound,
    on_receive_batch,
    verify_cross_batch,
)
from spchain.ledger import Mempool
from spchain.merkle import BatchProof, RejectReason
from spchain.sim.adversary import forge_batch, tamper_batch


def batches_of(sb, scheme=BATCHED):
    return dispatch_outbound(sb.block, sb.tree, sb.header_signature, sb.certificate, scheme)


def test_one_batch_per_destination(signed):
    batches, announce = batches_of(signed)
    assert [b.dest_shard for b in batches] == [1, 3]
    assert announce.header == signed.block.header


def test_block_without_cross_shard_sends_header_only():
    sb = signed_block(per_dest={0: 3})
    batches, announce = batches_of(sb)
    assert batches == [] and announce.source_shard == 0


def test_dispatched_proof_bytes_match_serializer(signed):
    batches, _ = batches_of(signed)
    m = signed.table.m
    assert sum(b.proof_bytes() for b in batches) == len(batches) * 32 * (m - 1)
    for b in batches:
        enc = encode_canonical(b.proof)
        assert decode_canonical(BatchProof, enc) == b.proof


def test_per_tx_proof_round_trip_and_bytes(signed):
    batches, _ = batches_of(signed, PER_TX)
    for b in batches:
        assert isinstance(b.proof, PathProof)
        assert decode_canonical(PathProof, encode_canonical(b.proof)) == b.proof
        assert verify_cross_batch(b, {0: signed.table}, signed.keystore)
        assert b.proof_bytes() == sum(32 * len(p.steps) for p in b.proof.paths)


def test_honest_batch_accepted_and_queued_once(signed):
    batch = batches_of(signed)[0][0]
    inbox = DepositInbox(batch.dest_shard)
    pool = Mempool(batch.dest_shard, 4)
    assert on_receive_batch(inbox, batch, {0: signed.table}, signed.keystore, pool)
    queued = len(pool.pending_deposits)
    assert queued == len(batch.withdrawals)
    assert on_receive_batch(inbox, batch, {0: signed.table}, signed.keystore, pool)
    assert len(pool.pending_deposits) == queued
    assert inbox.batches_accepted == 1 and inbox.duplicates == 1


def test_tampered_batch_rejected(signed):
    batch = tamper_batch(batches_of(signed)[0][0])
    assert batch.tampered
    inbox = DepositInbox(batch.dest_shard)
    verdict = on_receive_batch(inbox, batch, {0: signed.table}, signed.keystore)
    assert verdict.reason is RejectReason.ROOT_MISMATCH
    assert inbox.rejected == {RejectReason.ROOT_MISMATCH.value: 1}
    assert not inbox.accepted


def test_forged_batch_rejected_by_member_table(signed):
    forged_key, _ = signed.keystore.generate_unregistered()
    batch = forge_batch(batches_of(signed)[0][0], forged_key, signed.table.m)
    verdict = verify_cross_batch(batch, {0: signed.table}, signed.keystore)
    assert not verdict
    assert verdict.reason in (RejectReason.UNKNOWN_LEADER, RejectReason.BAD_SIGNATURE)


def test_batch_for_wrong_shard_rejected(signed):
    batch = batches_of(signed)[0][0]
    inbox = DepositInbox(2)
    assert not on_receive_batch(inbox, batch, {0: signed.table}, signed.keystore)


def test_unknown_epoch_rejected(signed):
    batch = batches_of(signed)[0][0]
    assert verify_cross_batch(batch, {5: signed.table}, signed.keystore).reason is RejectReason.UNKNOWN_LEADER


def _record(sb, slot):
    return OutboundRecord(sb.block, sb.tree, sb.header_signature, sb.certificate, slot, slot, frozenset({1, 3}))


def test_retry_fires_after_r_slots_without_delivery(signed):
    tracker = RetryTracker(retry_slots=10)
    tracker.record(_record(signed, 5))
    never = lambda dest, link: False
    assert tracker.retry_undelivered(14, never) == []
    due = tracker.retry_undelivered(15, never)
    assert [missing for _, missing in due] == [[1, 3]]
    # the timer restarts from the re-send
    assert tracker.retry_undelivered(20, never) == []


def test_no_retry_once_delivered(signed):
    tracker = RetryTracker(retry_slots=10)
    tracker.record(_record(signed, 5))
    assert tracker.retry_undelivered(7, lambda dest, link: True) == []
    assert tracker.outstanding() == 0
    assert tracker.retry_undelivered(40, lambda dest, link: False) == []


def test_batch_is_hashable_value(signed):
    b = batches_of(signed)[0][0]
    assert isinstance(b, CrossShardBatch)
    assert b.deposits[0].parent_hash == b.withdrawals[0].parent_hash
