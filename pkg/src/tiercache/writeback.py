"""Two-layer write combination and asynchronous best-effort cache writes.

Layer 1 groups a request's fresh embeddings per ranking stage as they arrive;
layer 2 merges all stages into one pending write per request. The queue never
blocks producers: on overflow the write is dropped (staleness, not an error)
and counted. A dropped or delayed write can never tear an entry because the
store only ever sees whole pending writes.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

from .core import CacheEntry, EmbeddingVector, ModelKey, NotFoundError, UserId
from .store import CacheStore

DEFAULT_QUEUE_CAPACITY = 65_536
DEFAULT_FLUSH_BATCH = 512


class FlushDeadlineExceeded(RuntimeError):
    """flush_all ran out of wall-clock budget; carries the partial progress."""

    def __init__(self, flushed: int, remaining: int) -> None:
        super().__init__(f"flushed {flushed} writes, {remaining} still queued")
        self.flushed = flushed
        self.remaining = remaining


class WriteItem(NamedTuple):
    model: ModelKey
    embedding: EmbeddingVector
    produced_at: int


class PendingWrite(NamedTuple):
    """All of one request's fresh embeddings, merged across stages."""

    request_id: int
    user: UserId
    items: tuple[WriteItem, ...]


@dataclass(frozen=True, slots=True)
class QueueStats:
    raw_items_in: int
    combined_requests_out: int
    dropped_overflow: int
    flushes: int

    @property
    def combination_factor(self) -> float:
        """Raw item writes avoided per combined request actually issued."""
        if self.combined_requests_out == 0:
            return 0.0
        return self.raw_items_in / self.combined_requests_out

    def as_dict(self) -> dict[str, float | int]:
        return {
            "raw_items_in": self.raw_items_in,
            "combined_requests_out": self.combined_requests_out,
            "dropped_overflow": self.dropped_overflow,
            "flushes": self.flushes,
            "combination_factor": self.combination_factor,
        }


class WritePipeline:
    """Per-request staging plus a bounded async queue drained into a store.

    ``accumulate``/``seal`` implement the two combination layers;
    ``enqueue_async`` hands a sealed write to the flusher without ever
    blocking the serving path. The flusher is driven by ``drain`` (event
    loops call it between events) or ``flush_all`` (tests and shutdown).
    """

    def __init__(self, store: CacheStore, *,
                 queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
                 flush_batch: int = DEFAULT_FLUSH_BATCH,
                 source_region: int = 0) -> None:
        if queue_capacity <= 0:
            raise ValueError("queue_capacity must be positive")
        self._store = store
        self._capacity = queue_capacity
        self._flush_batch = flush_batch
        self._source_region = source_region
        self._staged: dict[int, tuple[UserId, dict[ModelKey, WriteItem]]] = {}
        self._queue: deque[PendingWrite] = deque()
        self._lock = threading.Lock()
        self.paused = False
        self.raw_items_in = 0
        self.combined_requests_out = 0
        self.dropped_overflow = 0
        self.flushes = 0

    # -- combination layers -------------------------------------------------

    def accumulate(self, request_id: int, user: UserId, model: ModelKey,
                   embedding: EmbeddingVector, produced_at: int) -> None:
        """Stage one fresh embedding under its request; no store write yet.

        Re-accumulating the same model for a request replaces the earlier
        value. All items staged for one request must share the user.
        """
        staged = self._staged.get(request_id)
        if staged is None:
            self._staged[request_id] = (user, {model: WriteItem(model, embedding, produced_at)})
        else:
            staged_user, items = staged
            if staged_user != user:
                raise ValueError(
                    f"request {request_id} staged for user {staged_user}, got {user}")
            items[model] = WriteItem(model, embedding, produced_at)
        self.raw_items_in += 1

    def seal(self, request_id: int) -> PendingWrite:
        """Merge every stage's staged items into one write; staging clears."""
        staged = self._staged.pop(request_id, None)
        if staged is None:
            raise NotFoundError(f"no staged items for request {request_id}")
        user, items = staged
        return PendingWrite(request_id, user, tuple(items.values()))

    # -- async queue ---------------------------------------------------------

    def enqueue_async(self, write: PendingWrite) -> bool:
        """Queue a combined write; drops (and counts) on overflow."""
        if len(self._queue) >= self._capacity:
            self.dropped_overflow += 1
            return False
        self._queue.append(write)
        self.combined_requests_out += 1
        return True

    def drain(self, now: int = 0, max_batches: int | None = None) -> int:
        """Flush queued writes into the store; returns pending writes flushed.

        Respects ``paused`` (used by tests to hold writes back). Each store
        call covers at most ``flush_batch`` pending writes.
        """
        if self.paused:
            return 0
        flushed = 0
        queue = self._queue
        batches = 0
        while queue and (max_batches is None or batches < max_batches):
            entries: list[CacheEntry] = []
            count = 0
            while queue and count < self._flush_batch:
                write = queue.popleft()
                for item in write.items:
                    entries.append(CacheEntry(write.user, item.model, item.embedding,
                                              item.produced_at, self._source_region))
                count += 1
            self._store.put_batch(entries, now)
            self.flushes += 1
            flushed += count
            batches += 1
        return flushed

    def drain_one(self, now: int = 0) -> int:
        """Fast path for event loops: flush a single pending write if any."""
        if self.paused or not self._queue:
            return 0
        write = self._queue.popleft()
        self._store.put_batch(
            [CacheEntry(write.user, item.model, item.embedding, item.produced_at,
                        self._source_region) for item in write.items], now)
        self.flushes += 1
        return 1

    def flush_all(self, deadline_ms: int | None = None) -> int:
        """Synchronously drain everything (ignores ``paused``); test/shutdown hook.

        ``deadline_ms`` is a wall-clock budget; if the queue cannot be emptied
        in time (e.g. the store is stalled by fault injection), raises
        :class:`FlushDeadlineExceeded` carrying the partial count.
        """
        started = time.monotonic()
        flushed = 0
        was_paused = self.paused
        self.paused = False
        try:
            while self._queue:
                if (deadline_ms is not None
                        and (time.monotonic() - started) * 1000.0 >= deadline_ms):
                    raise FlushDeadlineExceeded(flushed, self.pending)
                flushed += self.drain(max_batches=1)
        finally:
            self.paused = was_paused
        return flushed

    @property
    def pending(self) -> int:
        return len(self._queue)

    def stats(self) -> QueueStats:
        return QueueStats(
            raw_items_in=self.raw_items_in,
            combined_requests_out=self.combined_requests_out,
            dropped_overflow=self.dropped_overflow,
            flushes=self.flushes,
        )
