"""Keyed store of cache entries with TTL-based eviction.

One physical entry per (user, model_id) serves both logical tiers; validity
is judged per tier at read time. Expiry is lazy: ``get`` never returns an
entry past its failover TTL, and ``purge_expired`` only reclaims memory, it
never changes what a subsequent ``get`` would return (its horizon must cover
the largest configured failover TTL).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable

from .core import (
    MISS,
    CacheEntry,
    LookupOutcome,
    ModelCacheConfig,
    ModelKey,
    Tier,
    UserId,
)


@dataclass(frozen=True, slots=True)
class StoreStats:
    """Consistent snapshot of store counters."""

    entries_live: int
    gets_total: int
    hits_direct: int
    hits_failover: int
    misses: int
    puts_total: int
    puts_rejected: int
    evicted_total: int
    bytes_written_total: int
    clock_skew_total: int

    def as_dict(self) -> dict[str, int]:
        return {
            "entries_live": self.entries_live,
            "gets_total": self.gets_total,
            "hits_direct": self.hits_direct,
            "hits_failover": self.hits_failover,
            "misses": self.misses,
            "puts_total": self.puts_total,
            "puts_rejected": self.puts_rejected,
            "evicted_total": self.evicted_total,
            "bytes_written_total": self.bytes_written_total,
            "clock_skew_total": self.clock_skew_total,
        }


class CacheStore:
    """TTL cache keyed by (user, model_id), safe for concurrent use.

    ``max_entries`` is an optional memory safeguard (defaults to unbounded);
    when full, the oldest-written entries are evicted first, which is the
    soonest-to-expire order whenever models share a TTL regime.
    """

    def __init__(self, max_entries: int | None = None) -> None:
        if max_entries is not None and max_entries <= 0:
            raise ValueError("max_entries must be positive or None")
        self._entries: dict[tuple[int, int], CacheEntry] = {}
        self._max_entries = max_entries
        self._lock = threading.Lock()
        self.gets_total = 0
        self.hits_direct = 0
        self.hits_failover = 0
        self.misses = 0
        self.puts_total = 0
        self.puts_rejected = 0
        self.evicted_total = 0
        self.bytes_written_total = 0
        self.clock_skew_total = 0

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, user: UserId, model: ModelKey, now: int,
            config: ModelCacheConfig) -> LookupOutcome:
        """Tiered lookup: direct hit wins, else failover hit, else miss.

        Counters update on every call; absence or expiry is a miss, never an
        error. The entry is left in place (purge reclaims memory later).
        """
        with self._lock:
            self.gets_total += 1
            entry = self._entries.get((user, model.model_id))
            if entry is not None:
                age = now - entry.written_at
                if age < 0:
                    self.clock_skew_total += 1
                    age = 0
                if config.enable_direct and age < config.direct_ttl_ms:
                    self.hits_direct += 1
                    return LookupOutcome(Tier.DIRECT, age, entry)
                if config.enable_failover and age < config.failover_ttl_ms:
                    self.hits_failover += 1
                    return LookupOutcome(Tier.FAILOVER, age, entry)
            self.misses += 1
            return MISS

    def put_batch(self, entries: Iterable[CacheEntry], now: int) -> int:
        """Apply a batch of writes, last writer wins per (user, model_id).

        ``written_at`` comes from each entry, not from ``now``, so callers can
        model write delay. Entries with an invalid embedding are rejected and
        counted; the rest of the batch still applies. Returns slots updated.
        """
        written = 0
        store = self._entries
        with self._lock:
            for entry in entries:
                if not entry.embedding.is_valid():
                    self.puts_rejected += 1
                    continue
                store[(entry.user, entry.model.model_id)] = entry
                written += 1
                self.puts_total += 1
                self.bytes_written_total += entry.embedding.nbytes
            if self._max_entries is not None and len(store) > self._max_entries:
                self._evict_to_capacity()
        return written

    def _evict_to_capacity(self) -> None:
        overflow = len(self._entries) - self._max_entries
        if overflow <= 0:
            return
        victims = sorted(self._entries.items(), key=lambda kv: kv[1].written_at)
        for key, _ in victims[:overflow]:
            del self._entries[key]
            self.evicted_total += 1

    def purge_expired(self, now: int, horizon: int) -> int:
        """Drop entries with age >= ``horizon``; returns the evicted count.

        Callers must pass a horizon at least as large as the biggest
        configured failover TTL, so purging is observationally invisible.
        """
        with self._lock:
            dead = [key for key, entry in self._entries.items()
                    if now - entry.written_at >= horizon]
            for key in dead:
                del self._entries[key]
            self.evicted_total += len(dead)
        return len(dead)

    def stats(self) -> StoreStats:
        with self._lock:
            return StoreStats(
                entries_live=len(self._entries),
                gets_total=self.gets_total,
                hits_direct=self.hits_direct,
                hits_failover=self.hits_failover,
                misses=self.misses,
                puts_total=self.puts_total,
                puts_rejected=self.puts_rejected,
                evicted_total=self.evicted_total,
                bytes_written_total=self.bytes_written_total,
                clock_skew_total=self.clock_skew_total,
            )
