"""Client transaction arrivals, generated lazily and deterministically per shard."""
from __future__ import annotations

import functools
from typing import Sequence

import numpy as np

from ..ledger import Mempool
from ..types import ConfigError, account_address, address_to_shard, make_transfer

_CHUNK = 1024


@functools.lru_cache(maxsize=8)
def shard_accounts(m: int, per_shard: int) -> tuple[tuple[bytes, ...], ...]:
    """``per_shard`` registered account addresses for every shard."""
    buckets: list[list[bytes]] = [[] for _ in range(m)]
    full = 0
    j = 0
    while full < m:
        addr = account_address(f"acct-{j}")
        j += 1
        bucket = buckets[address_to_shard(addr, m)]
        if len(bucket) < per_shard:
            bucket.append(addr)
            if len(bucket) == per_shard:
                full += 1
    return tuple(tuple(b) for b in buckets)


def saturated_rate(m: int, capacity: int, cross_fraction: float, slot_ms: float, load: float) -> float:
    """System-wide request rate that fills ``load`` of every block.

    A cross-shard request occupies two block positions, the withdrawal and
    the deposit.
    """
    return load * m * capacity / ((1 + cross_fraction) * slot_ms / 1000)


class Workload:
    """Poisson client requests with uniform receivers.

    Senders take turns over a shuffled account order, so an account has a
    new request only after every other account in its shard had one.  With
    enough accounts no sender has two requests pending at once, which keeps
    the one-request-per-sender packing rule from throttling throughput.
    Arrivals are drawn in fixed-size chunks from one generator per shard, so
    the sequence does not depend on when or how often :meth:`materialize` is
    called.
    """

    def __init__(self, accounts: Sequence[Sequence[bytes]], mempools: Sequence[Mempool], rate: float,
                 cross_fraction: float, max_amount: int, payload_size: int, seed: int):
        self.m = len(accounts)
        if any(len(a) < 2 for a in accounts):
            raise ConfigError("workload: every shard needs at least two accounts")
        self.accounts = [tuple(a) for a in accounts]
        self.mempools = mempools
        self.per_shard_rate = rate / self.m if self.m else 0.0
        self.cross = cross_fraction if self.m > 1 else 0.0
        self.max_amount = max_amount
        self.payload_size = payload_size
        self._rngs = [np.random.default_rng([seed, 2, s]) for s in range(self.m)]
        self._buf: list[tuple | None] = [None] * self.m
        self._pos = [0] * self.m
        self._last = [0.0] * self.m
        self._order = [self._rngs[s].permutation(len(accounts[s])) for s in range(self.m)]
        self._turn = [0] * self.m
        self.nonces: dict[bytes, int] = {}
        self.submit_times: dict[bytes, int] = {}
        self.submitted = 0
        self.stopped = False

    def _refill(self, s: int) -> None:
        rng = self._rngs[s]
        mean = 1000.0 / self.per_shard_rate
        times = self._last[s] + np.cumsum(rng.exponential(mean, _CHUNK))
        self._last[s] = float(times[-1])
        cross = rng.random(_CHUNK) < self.cross
        dests = (s + 1 + rng.integers(0, max(self.m - 1, 1), _CHUNK)) % self.m
        recv = rng.random(_CHUNK)
        amounts = rng.integers(1, self.max_amount + 1, _CHUNK)
        self._buf[s] = (np.floor(times).astype(np.int64), cross, dests, recv, amounts)
        self._pos[s] = 0

    def next_arrival(self, s: int) -> int | None:
        if self.per_shard_rate <= 0:
            return None
        if self._buf[s] is None or self._pos[s] >= _CHUNK:
            self._refill(s)
        return int(self._buf[s][0][self._pos[s]])

    def materialize(self, until: int) -> None:
        """Submit every request that arrives at or before ``until``."""
        if self.stopped or self.per_shard_rate <= 0:
            return
        for s in range(self.m):
            own = self.accounts[s]
            pool = self.mempools[s]
            while True:
                at = self.next_arrival(s)
                if at is None or at > until:
                    break
                times, cross, dests, recv, amounts = self._buf[s]
                i = self._pos[s]
                self._pos[s] += 1
                order = self._order[s]
                sender = own[order[self._turn[s] % len(order)]]
                self._turn[s] += 1
                if cross[i]:
                    book = self.accounts[dests[i]]
                    receiver = book[int(recv[i] * len(book))]
                else:
                    r = int(recv[i] * len(own))
                    if own[r] == sender:
                        r = (r + 1) % len(own)
                    receiver = own[r]
                nonce = self.nonces.get(sender, 0) + 1
                self.nonces[sender] = nonce
                tx = make_transfer(sender, receiver, int(amounts[i]), nonce, self.m, self.payload_size)
                queued = pool.submit(tx, at)
                self.submit_times[queued.link] = at
                self.submitted += 1
