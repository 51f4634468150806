import random

import numpy as np
import pytest

from spchain.crypto import hash_bytes, sign
from spchain.randomness import (
    Seed,
    elect_leader,
    epoch_seed,
    genesis_seed,
    header_seed,
    leader_draw,
    seed_from_chain,
)
from spchain.sim.leaders import leader_process
from spchain.types import BlockHeader, ConfigError, slot_message


def header(slot: int, key: bytes = b"k" * 32) -> BlockHeader:
    return BlockHeader(0, slot, slot, bytes(32), bytes(32), 0, sign(key, slot_message(slot)), 0)


def test_seed_comes_from_block_two_slots_back():
    chain = [header(t) for t in range(1, 9)]
    assert seed_from_chain(chain, 10) == header_seed(chain[7])  # slot 8
    assert seed_from_chain(chain, 9) == header_seed(chain[6])   # slot 8 is still being voted on


def test_seed_falls_back_to_genesis_on_empty_chain():
    assert seed_from_chain([], 1) == genesis_seed(0)


def test_seed_skips_failed_slots():
    chain = [header(t) for t in (1, 2, 3, 4, 5)]
    # slots 6 and 7 produced nothing; slot 8 reads slot 5
    assert seed_from_chain(chain, 8) == header_seed(chain[-1])
    # an independent backward scan agrees for every current slot
    for t in range(1, 12):
        eligible = [h for h in chain if h.slot < t - 1]
        expect = header_seed(eligible[-1]) if eligible else genesis_seed(0)
        assert seed_from_chain(chain, t) == expect


def test_single_member_always_wins():
    for t in range(20):
        assert elect_leader(Seed(hash_bytes(bytes([t]))), t, ["only"]) == 0


def test_election_is_deterministic_and_matches_formula():
    seed = Seed(hash_bytes(b"s"))
    members = list(range(37))
    a = elect_leader(seed, 12, members)
    assert a == elect_leader(seed, 12, members)
    expect = int.from_bytes(hash_bytes(seed.value + (12).to_bytes(8, "big")), "big") % 37
    assert a == expect == leader_draw(seed, 12) % 37


def test_empty_member_list_is_a_config_error():
    with pytest.raises(ConfigError):
        elect_leader(genesis_seed(), 1, [])


@pytest.mark.parametrize("k", [10, 100, 250])
def test_election_uniform_within_five_sigma(k):
    trials = 10 ** 5
    rng = random.Random(k)
    counts = np.zeros(k, dtype=int)
    for _ in range(trials):
        counts[elect_leader(Seed(rng.randbytes(32)), 7, range(k))] += 1
    p = 1 / k
    sigma = (trials * p * (1 - p)) ** 0.5
    assert np.abs(counts - trials * p).max() <= 5 * sigma


def test_epoch_seed_single_header_and_order_independence():
    hs = [header(t, key=bytes([t]) * 32) for t in range(1, 6)]
    single, empty = epoch_seed(hs[:1])
    assert not empty
    assert single == Seed(hash_bytes(header_seed(hs[0]).value))
    shuffled = hs[:]
    random.Random(0).shuffle(shuffled)
    assert epoch_seed(hs)[0] == epoch_seed(shuffled)[0]


def test_epoch_seed_identical_contributions_cancel():
    h = header(3)
    assert epoch_seed([h, h])[0] == Seed(hash_bytes(bytes(32)))


def test_epoch_seed_empty_keeps_previous_and_flags():
    prev = Seed(b"\x07" * 32)
    assert epoch_seed([], prev) == (prev, True)


def test_slots_to_honest_leader_close_to_two_at_49_percent():
    trace = leader_process(100, 49, 10 ** 4, seed=0)
    assert 0.45 < trace.honest_fraction < 0.57
    assert trace.slots_to_honest() <= 2.1


def test_no_byzantine_means_every_leader_is_honest():
    trace = leader_process(10, 0, 50)
    assert all(trace.honest)
    assert trace.slots_to_honest() == 1
