"""Per-request serving flow over the tiered cache.

For each model a request demands: serve from the direct tier when valid
(no inference call), otherwise run inference; a failed inference falls back
to the failover tier, and only when that also misses is the model served
with no embedding at all. Fresh embeddings are combined per request and
written back asynchronously, off the critical path.
"""

from __future__ import annotations

import math
import random
from enum import IntEnum
from typing import NamedTuple, Protocol

from .config import ConfigRegistry
from .core import (
    CacheEntry,
    EmbeddingVector,
    ModelKey,
    Tier,
    UserId,
    ValidationError,
)
from .store import CacheStore
from .writeback import WritePipeline


class AdRequest(NamedTuple):
    """One ad request's embedding demands across ranking stages."""

    request_id: int
    user: UserId
    timestamp_ms: int
    demands: tuple[ModelKey, ...]

    def validate(self) -> None:
        if self.request_id <= 0:
            raise ValidationError("request_id must be positive")
        if self.user <= 0:
            raise ValidationError("user must be positive")
        if not self.demands:
            raise ValidationError("demands must be nonempty")
        if len(set(self.demands)) != len(self.demands):
            raise ValidationError("demands must be unique")


class Source(IntEnum):
    """Where a model's embedding came from (or FALLBACK for none)."""

    DIRECT_CACHE = 0
    INFERENCE = 1
    FAILOVER_CACHE = 2
    FALLBACK = 3


class ModelServe(NamedTuple):
    model: ModelKey
    source: Source
    embedding: EmbeddingVector | None  # absent iff FALLBACK
    embedding_age_ms: int              # 0 for fresh inference
    critical_path_latency_ms: float


class ServingResult(NamedTuple):
    request_id: int
    user: UserId
    timestamp_ms: int
    serves: tuple[ModelServe, ...]
    critical_path_latency_ms: float  # slowest model path; excludes cache writes


class InferenceResponse(NamedTuple):
    """Per-model embeddings (None marks a failed model) plus service latency."""

    embeddings: dict[ModelKey, EmbeddingVector | None]
    latency_ms: float


class InferenceBackend(Protocol):
    def infer(self, user: UserId, models: list[ModelKey],
              now: int) -> InferenceResponse: ...


class _Stash(NamedTuple):
    """Lookup facts carried from the cache check to the inference step."""

    entry: CacheEntry | None
    age_ms: int
    read_latency_ms: float
    failover_valid: bool
    cacheable: bool


class ReadLatencyModel:
    """Lognormal cache-read latency proxy, fit by (p50, p99) in ms.

    Used for latency accounting only; it never influences event ordering or
    cache outcomes.
    """

    P99_Z = 2.3263478740408408  # standard normal 99th percentile

    def __init__(self, p50_ms: float = 0.77, p99_ms: float = 8.47,
                 rng: random.Random | None = None) -> None:
        if p50_ms <= 0 or p99_ms <= p50_ms:
            raise ValidationError("need 0 < p50 < p99 for the latency model")
        self.mu = math.log(p50_ms)
        self.sigma = math.log(p99_ms / p50_ms) / self.P99_Z
        self._rng = rng or random.Random(0)
        self._exp = math.exp
        self._gauss = self._rng.gauss

    def sample_ms(self) -> float:
        return self._exp(self._gauss(self.mu, self.sigma))


class SimulatedBackend:
    """Deterministic inference stand-in for simulation and tests.

    Failures are drawn from a dedicated RNG stream at probability
    ``failure_prob`` (optionally only inside failure windows, and overridable
    per model id); latency is lognormal. Under a fixed seed the whole
    response stream is reproducible.
    """

    def __init__(self, *, dim: int = 8, failure_prob: float = 0.0,
                 latency_p50_ms: float = 15.0, latency_p99_ms: float = 80.0,
                 failure_windows: tuple[tuple[int, int], ...] = (),
                 per_model_failure: dict[int, float] | None = None,
                 static_payload: bool = False,
                 seed: int | str = 0) -> None:
        if not 0.0 <= failure_prob <= 1.0:
            raise ValidationError("failure_prob must be within [0, 1]")
        self.dim = dim
        self.failure_prob = failure_prob
        self.failure_windows = failure_windows
        self.per_model_failure = per_model_failure or {}
        self._rng = random.Random(f"{seed}:backend")
        self._latency = ReadLatencyModel(latency_p50_ms, latency_p99_ms,
                                         random.Random(f"{seed}:backend-latency"))
        # long simulations reuse one payload: cache behavior never depends on
        # vector content, and fresh allocation per inference dominates cost
        self._static = self._make_embedding() if static_payload else None
        self.calls = 0
        self.failures = 0

    def _fails_now(self, model: ModelKey, now: int) -> bool:
        prob = self.per_model_failure.get(model.model_id, self.failure_prob)
        if prob <= 0.0:
            return False
        if self.failure_windows and not any(start <= now < end
                                            for start, end in self.failure_windows):
            return False
        return prob >= 1.0 or self._rng.random() < prob

    def _make_embedding(self) -> EmbeddingVector:
        r = self._rng.random
        return EmbeddingVector(tuple(r() * 2.0 - 1.0 for _ in range(self.dim)))

    def infer(self, user: UserId, models: list[ModelKey],
              now: int) -> InferenceResponse:
        self.calls += 1
        static = self._static
        embeddings: dict[ModelKey, EmbeddingVector | None] = {}
        for model in models:
            if self._fails_now(model, now):
                self.failures += 1
                embeddings[model] = None
            elif static is not None:
                embeddings[model] = static
            else:
                embeddings[model] = self._make_embedding()
        return InferenceResponse(embeddings, self._latency.sample_ms())


class AlwaysFailBackend:
    """Backend whose every inference fails; exercises the failover path."""

    def __init__(self, latency_ms: float = 10.0) -> None:
        self.latency_ms = latency_ms
        self.calls = 0

    def infer(self, user: UserId, models: list[ModelKey],
              now: int) -> InferenceResponse:
        self.calls += 1
        return InferenceResponse({model: None for model in models}, self.latency_ms)


class RequestOrchestrator:
    """Drives the direct-check / inference / failover / update sequence.

    Per-model outcomes are independent: one model's failure never degrades
    another's. A direct hit does not refresh the entry's TTL and enqueues no
    write. The failover tier is consulted only after an inference failure
    (never racing inference). Cache writes ride the async pipeline and are
    excluded from the critical path, whose per-model latency is one cache
    read plus the inference latency when inference ran. Models with caching
    disabled bypass the store entirely.
    """

    def __init__(self, store: CacheStore, registry: ConfigRegistry,
                 pipeline: WritePipeline,
                 backend: InferenceBackend | None = None,
                 read_latency: ReadLatencyModel | None = None) -> None:
        self._store = store
        self._registry = registry
        self._pipeline = pipeline
        self._backend = backend
        self.read_latency = read_latency or ReadLatencyModel()
        self.inference_calls = 0       # models sent to inference
        self.inference_failures = 0    # models whose inference failed

    @property
    def pipeline(self) -> WritePipeline:
        return self._pipeline

    @property
    def store(self) -> CacheStore:
        return self._store

    def attach_backend(self, backend: InferenceBackend) -> None:
        """Subsequent handles use this backend."""
        self._backend = backend

    def handle(self, request: AdRequest, now: int) -> ServingResult:
        """Serve one request; inference failure is data, not an exception."""
        demands = request.demands
        if not demands:
            raise ValidationError("request demands must be nonempty")
        if len(demands) > 1 and len(set(demands)) != len(demands):
            raise ValidationError("request demands must be unique")
        if self._backend is None:
            raise ValidationError("no inference backend attached")

        resolve = self._registry.resolve
        store_get = self._store.get
        sample_read = self.read_latency.sample_ms
        user = request.user

        serves: list[ModelServe] = []
        need_inference: list[ModelKey] | None = None
        stashes: list[_Stash] | None = None

        for model in demands:
            config = resolve(model)
            if not (config.enable_direct or config.enable_failover):
                if need_inference is None:
                    need_inference, stashes = [], []
                need_inference.append(model)
                stashes.append(_DISABLED_STASH)
                continue
            outcome = store_get(user, model, now, config)
            read_ms = sample_read()
            if outcome.tier is Tier.DIRECT:
                serves.append(ModelServe(model, Source.DIRECT_CACHE,
                                         outcome.entry.embedding,
                                         outcome.age_ms, read_ms))
                continue
            if need_inference is None:
                need_inference, stashes = [], []
            need_inference.append(model)
            stashes.append(_Stash(outcome.entry, outcome.age_ms, read_ms,
                                  outcome.tier is Tier.FAILOVER, True))

        if need_inference:
            response = self._backend.infer(user, need_inference, now)
            self.inference_calls += len(need_inference)
            infer_ms = response.latency_ms
            wrote = False
            accumulate = self._pipeline.accumulate
            embeddings = response.embeddings
            for model, stash in zip(need_inference, stashes):
                embedding = embeddings.get(model)
                latency = stash.read_latency_ms + infer_ms
                if embedding is not None:
                    serves.append(ModelServe(model, Source.INFERENCE, embedding,
                                             0, latency))
                    if stash.cacheable:
                        accumulate(request.request_id, user, model, embedding, now)
                        wrote = True
                    continue
                self.inference_failures += 1
                if stash.failover_valid:
                    serves.append(ModelServe(model, Source.FAILOVER_CACHE,
                                             stash.entry.embedding, stash.age_ms,
                                             latency))
                else:
                    serves.append(ModelServe(model, Source.FALLBACK, None, 0,
                                             latency))
            if wrote:
                self._pipeline.enqueue_async(self._pipeline.seal(request.request_id))

        if len(serves) == 1:
            critical = serves[0].critical_path_latency_ms
        else:
            critical = max(s.critical_path_latency_ms for s in serves)
        return ServingResult(request.request_id, user, request.timestamp_ms,
                             tuple(serves), critical)


_DISABLED_STASH = _Stash(None, 0, 0.0, False, False)
