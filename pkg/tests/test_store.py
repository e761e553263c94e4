from __future__ import annotations

import math
import random

from tiercache.core import EmbeddingVector, Tier
from tiercache.store import CacheStore

from .conftest import make_config, make_embedding, make_entry, make_model

MIN = 60_000
HOUR = 3_600_000


class TestGet:
    def test_empty_store_misses(self):
        store = CacheStore()
        outcome = store.get(1, make_model(), 0, make_config())
        assert outcome.is_miss

    def test_direct_hit_within_five_minute_ttl(self):
        store = CacheStore()
        store.put_batch([make_entry(user=5, written_at=0)], 0)
        config = make_config(direct_ttl=5 * MIN, failover_ttl=HOUR)
        outcome = store.get(5, make_model(), 4 * MIN, config)
        assert outcome.tier is Tier.DIRECT
        assert outcome.age_ms == 240_000

    def test_failover_hit_after_direct_expiry(self):
        store = CacheStore()
        store.put_batch([make_entry(user=5, written_at=0)], 0)
        config = make_config(direct_ttl=5 * MIN, failover_ttl=HOUR)
        outcome = store.get(5, make_model(), 30 * MIN, config)
        assert outcome.tier is Tier.FAILOVER
        assert outcome.age_ms == 1_800_000

    def test_never_returns_entry_past_failover_ttl(self):
        store = CacheStore()
        store.put_batch([make_entry(user=5, written_at=0)], 0)
        config = make_config(direct_ttl=5 * MIN, failover_ttl=HOUR)
        assert store.get(5, make_model(), HOUR, config).is_miss

    def test_clock_skew_counted_and_served_fresh(self):
        store = CacheStore()
        store.put_batch([make_entry(user=5, written_at=10_000)], 10_000)
        outcome = store.get(5, make_model(), 5_000, make_config())
        assert outcome.tier is Tier.DIRECT
        assert outcome.age_ms == 0
        assert store.stats().clock_skew_total == 1


class TestPutBatch:
    def test_combined_batch_writes_all_entries(self):
        # three models demanded by two stages each: one batch, six slots
        from tiercache.core import Stage
        store = CacheStore()
        entries = [make_entry(user=9, model=make_model(model_id, stage=stage),
                              written_at=0)
                   for model_id, stage in
                   [(1, Stage.RETRIEVAL), (2, Stage.RETRIEVAL), (3, Stage.FIRST),
                    (4, Stage.FIRST), (5, Stage.SECOND), (6, Stage.SECOND)]]
        assert store.put_batch(entries, 0) == 6
        assert len(store) == 6

    def test_last_writer_wins_within_batch(self):
        store = CacheStore()
        first = make_entry(user=9, written_at=0, embedding=make_embedding(1.0))
        second = make_entry(user=9, written_at=50, embedding=make_embedding(2.0))
        assert store.put_batch([first, second], 100) == 2
        assert len(store) == 1
        outcome = store.get(9, make_model(), 100, make_config())
        assert outcome.entry.embedding == second.embedding
        assert outcome.entry.written_at == 50

    def test_nan_embedding_rejected_others_applied(self):
        store = CacheStore()
        bad = make_entry(user=1, model=make_model(2),
                         embedding=EmbeddingVector((math.nan, 1.0)))
        batch = [make_entry(user=1, model=make_model(1)), bad,
                 make_entry(user=1, model=make_model(3))]
        assert store.put_batch(batch, 0) == 2
        stats = store.stats()
        assert stats.puts_rejected == 1
        assert stats.puts_total == 2

    def test_written_at_comes_from_entry_not_now(self):
        store = CacheStore()
        store.put_batch([make_entry(user=2, written_at=500)], now=9_999)
        outcome = store.get(2, make_model(), 600, make_config())
        assert outcome.age_ms == 100

    def test_bytes_written_counted(self):
        store = CacheStore()
        entry = make_entry()
        store.put_batch([entry], 0)
        assert store.stats().bytes_written_total == entry.embedding.nbytes


class TestPurge:
    def test_purges_everything_older_than_horizon(self):
        store = CacheStore()
        entries = [make_entry(user=u, written_at=0) for u in range(1, 11)]
        store.put_batch(entries, 0)
        assert store.purge_expired(2 * HOUR, HOUR) == 10
        assert len(store) == 0

    def test_purges_only_entries_past_horizon(self):
        store = CacheStore()
        store.put_batch([make_entry(user=1, written_at=90 * MIN),
                         make_entry(user=2, written_at=30 * MIN)], 0)
        assert store.purge_expired(120 * MIN, 45 * MIN) == 1
        assert len(store) == 1

    def test_wide_horizon_purges_nothing(self):
        store = CacheStore()
        store.put_batch([make_entry(user=1, written_at=0)], 0)
        assert store.purge_expired(10 * MIN, HOUR) == 0
        assert len(store) == 1


class TestStats:
    def test_fresh_store_all_zero(self):
        stats = CacheStore().stats()
        assert all(value == 0 for value in stats.as_dict().values())

    def test_put_then_valid_get(self):
        store = CacheStore()
        store.put_batch([make_entry(user=3, written_at=0)], 0)
        store.get(3, make_model(), 1_000, make_config())
        stats = store.stats()
        assert (stats.gets_total, stats.hits_direct, stats.misses) == (1, 1, 0)

    def test_get_after_failover_expiry_is_miss(self):
        store = CacheStore()
        store.put_batch([make_entry(user=3, written_at=0)], 0)
        config = make_config(direct_ttl=MIN, failover_ttl=HOUR)
        store.get(3, make_model(), 2 * HOUR, config)
        stats = store.stats()
        assert stats.misses == 1
        assert stats.hits_direct == stats.hits_failover == 0

    def test_capacity_safeguard_evicts_oldest_written(self):
        store = CacheStore(max_entries=2)
        store.put_batch([make_entry(user=1, written_at=100),
                         make_entry(user=2, written_at=50),
                         make_entry(user=3, written_at=200)], 200)
        assert len(store) == 2
        assert store.stats().evicted_total == 1
        assert store.get(2, make_model(), 200, make_config()).is_miss
        assert store.get(1, make_model(), 200, make_config()).tier is Tier.DIRECT


class ReferenceMap:
    """Naive (value, written_at) map used as the store oracle."""

    def __init__(self):
        self.data = {}

    def put(self, entry):
        if entry.embedding.is_valid():
            self.data[(entry.user, entry.model.model_id)] = entry

    def get(self, user, model, now, config):
        entry = self.data.get((user, model.model_id))
        if entry is None:
            return "miss", None
        age = max(now - entry.written_at, 0)
        if config.enable_direct and age < config.direct_ttl_ms:
            return "direct", age
        if config.enable_failover and age < config.failover_ttl_ms:
            return "failover", age
        return "miss", None


def _random_schedule(seed: int, operations: int, with_purges: bool):
    """Random put/get/purge schedule; returns the observable outcome list."""
    rng = random.Random(seed)
    store = CacheStore()
    reference = ReferenceMap()
    config = make_config(direct_ttl=MIN, failover_ttl=10 * MIN)
    outcomes = []
    now = 0
    for _ in range(operations):
        now += rng.randrange(0, 30_000)
        op = rng.random()
        user = rng.randrange(1, 40)
        model = make_model(rng.randrange(1, 5))
        if op < 0.45:
            entry = make_entry(user=user, model=model, written_at=now,
                               embedding=make_embedding(rng.random()))
            store.put_batch([entry], now)
            reference.put(entry)
        elif op < 0.9:
            got = store.get(user, model, now, config)
            want_kind, want_age = reference.get(user, model, now, config)
            kind = ("direct" if got.tier is Tier.DIRECT
                    else "failover" if got.tier is Tier.FAILOVER else "miss")
            assert (kind, got.age_ms if not got.is_miss else None) == \
                (want_kind, want_age), f"divergence at now={now}"
            outcomes.append((kind, got.age_ms))
        elif with_purges:
            store.purge_expired(now, 10 * MIN)
    stats = store.stats()
    assert stats.gets_total == stats.hits_direct + stats.hits_failover + stats.misses
    return outcomes


def test_matches_reference_map_on_random_schedules():
    for seed in range(5):
        _random_schedule(seed, 4_000, with_purges=True)


def test_concurrent_readers_and_writers_reconcile_at_quiescence():
    import threading

    store = CacheStore()
    config = make_config(direct_ttl=MIN, failover_ttl=10 * MIN)
    per_thread = 4_000

    def hammer(thread_id: int) -> None:
        rng = random.Random(thread_id)
        for i in range(per_thread):
            user = rng.randrange(1, 30)
            model = make_model(rng.randrange(1, 4))
            now = i * 10
            if rng.random() < 0.5:
                store.put_batch([make_entry(user=user, model=model,
                                            written_at=now)], now)
            else:
                store.get(user, model, now, config)
            if i % 1_000 == 0:
                store.purge_expired(now, 10 * MIN)

    threads = [threading.Thread(target=hammer, args=(t,)) for t in range(4)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    stats = store.stats()
    assert stats.gets_total == stats.hits_direct + stats.hits_failover + stats.misses
    assert stats.gets_total + stats.puts_total == 4 * per_thread


def test_purge_never_changes_get_outcomes():
    for seed in range(3):
        assert (_random_schedule(seed, 3_000, with_purges=False)
                == _random_schedule(seed, 3_000, with_purges=True))
