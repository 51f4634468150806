import itertools
import math
from fractions import Fraction

import pytest

from spchain.planner import (
    DEFAULT_THRESHOLD,
    REFERENCE_SIZES,
    default_byzantine,
    failure_estimate,
    failure_probability,
    min_shard_size,
    overhead_report,
    parse_threshold,
    shard_tail,
    table_csv,
    size_table,
)
from spchain.types import ConfigError


def brute_force(n: int, f: int, m: int) -> Fraction:
    """Enumerate every committee of size floor(n/m); nodes 0..f-1 are Byzantine."""
    k = n // m
    lo = max(1, k // 2)
    bad = sum(1 for c in itertools.combinations(range(n), k) if sum(1 for x in c if x < f) >= lo)
    return min(Fraction(m * bad, math.comb(n, k)), Fraction(1))


def test_matches_enumeration_for_small_systems():
    for n in range(1, 13):
        for m in (1, 2, 3):
            if n // m < 1:
                continue
            for f in range(n + 1):
                assert failure_probability(n, f, m) == brute_force(n, f, m), (n, f, m)


def test_six_nodes_two_shards_by_hand():
    # k=3, failure needs >= 1 Byzantine member: 1 - C(4,3)/C(6,3) = 16/20
    assert failure_probability(6, 2, 2) == Fraction(1)  # 2 * 16/20 clamps
    assert shard_tail(6, 2, 3) == Fraction(16, 20)
    est = failure_estimate(6, 2, 2)
    assert est.clamped and not est.uneven


def test_zero_byzantine_is_zero():
    for n, m in ((4000, 16), (10, 2), (7, 3)):
        assert failure_probability(n, 0, m) == 0


@pytest.mark.parametrize("m", sorted(REFERENCE_SIZES))
def test_reference_values_below_bound_and_near_expected(m):
    k, reference = REFERENCE_SIZES[m]
    n = m * k
    p = failure_probability(n, default_byzantine(n), m)
    assert p < Fraction(9, 10 ** 7)
    assert 1 / 3 <= float(p) / reference <= 3


def test_sixteen_shards_value():
    p = float(failure_probability(4000, 1333, 16))
    assert 2e-7 / 3 <= p <= 2e-7 * 3


def test_uneven_split_is_flagged():
    assert failure_estimate(10, 2, 3).uneven


def test_domain_errors():
    with pytest.raises(ConfigError):
        failure_probability(10, 11, 2)
    with pytest.raises(ConfigError):
        failure_probability(10, 1, 0)
    with pytest.raises(ConfigError):
        failure_probability(2, 1, 3)


def test_probability_decreases_with_k_and_increases_with_f():
    prev = None
    for k in range(50, 401, 10):
        n = 8 * k
        p = failure_probability(n, math.floor(n * 0.25), 8)
        assert 0 <= p <= 1
        if prev is not None:
            assert p < prev
        prev = p
    values = [failure_probability(400, f, 4) for f in range(0, 130, 10)]
    assert values == sorted(values)


def test_hypergeometric_pmf_sums_to_one():
    n, f, k = 60, 17, 12
    total = sum(Fraction(math.comb(f, x) * math.comb(n - f, k - x), math.comb(n, k)) for x in range(k + 1))
    assert total == 1


def test_min_shard_size():
    assert min_shard_size(4, 0.25, 1) == 1
    ks = [min_shard_size(4, 0.25, Fraction(1, 2 ** e)) for e in (30, 20, 10)]
    assert ks[0] >= ks[1] >= ks[2]
    k = ks[1]
    assert failure_probability(4 * k, math.floor(4 * k * 0.25), 4) < DEFAULT_THRESHOLD
    assert failure_probability(4 * (k - 1), math.floor(4 * (k - 1) * 0.25), 4) >= DEFAULT_THRESHOLD
    with pytest.raises(ConfigError):
        min_shard_size(4, 0.5)


def test_overhead_report_totals():
    rep = overhead_report(16, 4096, {j: 256 for j in range(16)})
    assert rep.batched_total == 16 * 15 * 32 == 7680
    assert rep.per_tx_total == 4096 * 12 * 32 == 1_572_864
    assert overhead_report(2, 4096, {1: 4096}).batched_total == 32
    empty = overhead_report(4, 100, {})
    assert empty.batched_total == 0 and empty.per_tx_total == 0
    with pytest.raises(ValueError):
        overhead_report(2, 10, {0: 6, 1: 6})


def test_threshold_parsing():
    assert parse_threshold("2^-20") == DEFAULT_THRESHOLD == parse_threshold("2**-20")
    assert parse_threshold("1/1048576") == DEFAULT_THRESHOLD
    assert parse_threshold("1e-6") == Fraction("1e-6")
    with pytest.raises(ConfigError):
        parse_threshold("two")


def test_size_table_rows_and_csv():
    rows = size_table([4, 16], search=True)
    assert [r.m for r in rows] == [4, 16]
    assert all(r.min_k <= r.k for r in rows)
    text = table_csv(rows)
    assert text.splitlines()[0] == "m,k,f,failure_probability,reference,min_k"
    assert len(text.splitlines()) == 3
