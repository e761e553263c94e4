"""Deterministic discrete-event engine and scenario runners.

Events replay in global timestamp order through routing, admission, the
request orchestrator, and the async write pipeline, all under virtual time.
Every random stream is derived from the config seed by purpose (trace,
router, backend, read latency), so identical config+seed gives bit-identical
reports, and write-path activity can never perturb serving-path draws.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

from .config import ConfigRegistry, config_from_record, registry_to_records
from .core import (
    MS_PER_HOUR,
    ModelCacheConfig,
    ModelKey,
    Stage,
    ValidationError,
)
from .orchestrator import (
    AdRequest,
    ReadLatencyModel,
    RequestOrchestrator,
    SimulatedBackend,
    Source,
)
from .regions import RegionRateLimiter, RegionRouter, RegionTopology
from .store import CacheStore
from .workload import (
    InterArrivalModel,
    Trace,
    default_demand_profile,
    generate_trace,
    profile_catalog,
    read_trace_csv,
)
from .writeback import WritePipeline

DEFAULT_PURGE_INTERVAL_MS = MS_PER_HOUR

#: TTL at or above which served-embedding staleness is flagged in the
#: triangle report (ranking quality is known to degrade in this regime).
FRESHNESS_CAUTION_TTL_MS = 600_000


class LogSketch:
    """Log-bucketed histogram for deterministic quantiles of positive values.

    Relative bucket error is ``growth - 1``; the mean is exact (separate sum).
    """

    __slots__ = ("lo", "log_growth", "counts", "n", "total", "vmin", "vmax",
                 "_inv_log_growth", "_log_lo", "_nbuckets")

    def __init__(self, lo: float = 1e-3, hi: float = 1e9,
                 growth: float = 1.04) -> None:
        self.lo = lo
        self.log_growth = math.log(growth)
        self._inv_log_growth = 1.0 / self.log_growth
        self._log_lo = math.log(lo)
        self._nbuckets = int(math.log(hi / lo) * self._inv_log_growth) + 2
        self.counts = [0] * self._nbuckets
        self.n = 0
        self.total = 0.0
        self.vmin = math.inf
        self.vmax = 0.0

    def add(self, value: float) -> None:
        self.n += 1
        self.total += value
        if value < self.vmin:
            self.vmin = value
        if value > self.vmax:
            self.vmax = value
        if value <= self.lo:
            index = 0
        else:
            index = int((math.log(value) - self._log_lo) * self._inv_log_growth) + 1
            if index >= self._nbuckets:
                index = self._nbuckets - 1
        self.counts[index] += 1

    def add_many(self, value: float, count: int) -> None:
        if count <= 0:
            return
        self.n += count
        self.total += value * count
        if value < self.vmin:
            self.vmin = value
        if value > self.vmax:
            self.vmax = value
        if value <= self.lo:
            index = 0
        else:
            index = int((math.log(value) - self._log_lo) * self._inv_log_growth) + 1
            if index >= self._nbuckets:
                index = self._nbuckets - 1
        self.counts[index] += count

    def mean(self) -> float:
        return self.total / self.n if self.n else 0.0

    def quantile(self, q: float) -> float:
        """Value at quantile ``q`` (geometric bucket midpoint)."""
        if self.n == 0:
            return 0.0
        remaining = q * self.n
        for index, count in enumerate(self.counts):
            if count == 0:
                continue
            remaining -= count
            if remaining <= 0:
                if index == 0:
                    return self.lo
                lower = math.exp(self._log_lo + (index - 1) * self.log_growth)
                return lower * math.exp(0.5 * self.log_growth)
        return self.vmax

    def as_dict(self) -> dict[str, float]:
        return {"n": self.n, "mean": self.mean(), "p50": self.quantile(0.50),
                "p99": self.quantile(0.99),
                "min": self.vmin if self.n else 0.0, "max": self.vmax}


class _PooledLatencySampler:
    """Cycles a pre-drawn pool of lognormal read latencies.

    The pool is drawn once per run from a dedicated seeded stream; cycling
    keeps the per-lookup cost to an index bump, and the report's latency
    sketch is reconstructed exactly from pool counts afterwards. Samples
    repeat with the pool period, which is immaterial for a latency proxy
    that never feeds back into behavior.
    """

    POOL_BITS = 16

    __slots__ = ("pool", "_mask", "index")

    def __init__(self, p50_ms: float, p99_ms: float, rng: random.Random) -> None:
        base = ReadLatencyModel(p50_ms, p99_ms, rng)
        size = 1 << self.POOL_BITS
        sample = base.sample_ms
        self.pool = [sample() for _ in range(size)]
        self._mask = size - 1
        self.index = 0

    def sample_ms(self) -> float:
        i = self.index
        self.index = i + 1
        return self.pool[i & self._mask]

    def finalize_sketch(self) -> LogSketch:
        sketch = LogSketch(lo=1e-3, hi=1e7, growth=1.04)
        drawn = self.index
        size = len(self.pool)
        full_cycles, remainder = divmod(drawn, size)
        if full_cycles:
            for value in self.pool:
                sketch.add_many(value, full_cycles)
        for value in self.pool[:remainder]:
            sketch.add(value)
        return sketch


class _ModelAgg:
    """Per-model serving counters, gated by the warmup window."""

    __slots__ = ("serves", "direct", "inference", "failover", "fallback",
                 "failures", "staleness")

    def __init__(self) -> None:
        self.serves = 0
        self.direct = 0
        self.inference = 0
        self.failover = 0
        self.fallback = 0
        self.failures = 0
        self.staleness = LogSketch(lo=1.0, hi=1e10, growth=1.05)

    def as_dict(self) -> dict[str, Any]:
        return {
            "serves": self.serves,
            "direct": self.direct,
            "inference": self.inference,
            "failover": self.failover,
            "fallback": self.fallback,
            "inference_failures": self.failures,
            "direct_hit_rate": self.direct / self.serves if self.serves else 0.0,
            "staleness_ms": self.staleness.as_dict(),
        }


@dataclass(frozen=True)
class GeneratorSpec:
    """Inline trace generation: users, horizon, and the arrival model."""

    num_users: int
    horizon_ms: int
    model: InterArrivalModel

    def to_dict(self) -> dict[str, Any]:
        return {"num_users": self.num_users, "horizon_ms": self.horizon_ms,
                "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GeneratorSpec":
        return cls(int(data["num_users"]), int(data["horizon_ms"]),
                   InterArrivalModel.from_dict(data["model"]))


@dataclass(frozen=True)
class BackendSpec:
    """Simulated-inference knobs; payloads are static by default since cache
    behavior never reads vector content and fresh draws dominate miss cost."""

    dim: int = 8
    failure_prob: float = 0.0
    latency_p50_ms: float = 15.0
    latency_p99_ms: float = 80.0
    failure_windows: tuple[tuple[int, int], ...] = ()
    per_model_failure: tuple[tuple[int, float], ...] = ()
    static_payload: bool = True

    def build(self, seed: int | str) -> SimulatedBackend:
        return SimulatedBackend(
            dim=self.dim, failure_prob=self.failure_prob,
            latency_p50_ms=self.latency_p50_ms,
            latency_p99_ms=self.latency_p99_ms,
            failure_windows=self.failure_windows,
            per_model_failure=dict(self.per_model_failure) or None,
            static_payload=self.static_payload,
            seed=seed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "failure_prob": self.failure_prob,
            "latency_p50_ms": self.latency_p50_ms,
            "latency_p99_ms": self.latency_p99_ms,
            "failure_windows": [list(w) for w in self.failure_windows],
            "per_model_failure": {str(k): v for k, v in self.per_model_failure},
            "static_payload": self.static_payload,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BackendSpec":
        return cls(
            dim=int(data.get("dim", 8)),
            failure_prob=float(data.get("failure_prob", 0.0)),
            latency_p50_ms=float(data.get("latency_p50_ms", 15.0)),
            latency_p99_ms=float(data.get("latency_p99_ms", 80.0)),
            failure_windows=tuple((int(s), int(e))
                                  for s, e in data.get("failure_windows", [])),
            per_model_failure=tuple((int(k), float(v))
                                    for k, v in data.get("per_model_failure", {}).items()),
            static_payload=bool(data.get("static_payload", True)),
        )


@dataclass(frozen=True)
class SimConfig:
    """Everything a run needs; serializable and hashable into a report."""

    registry_configs: tuple[ModelCacheConfig, ...] = ()
    demand_profile: tuple[ModelKey, ...] = field(default_factory=default_demand_profile)
    trace_path: str | None = None
    generator: GeneratorSpec | None = None
    topology: RegionTopology = field(default_factory=RegionTopology)
    backend: BackendSpec = field(default_factory=BackendSpec)
    read_latency_p50_ms: float = 0.77
    read_latency_p99_ms: float = 8.47
    queue_capacity: int = 65_536
    flush_batch: int = 512
    purge_interval_ms: int = DEFAULT_PURGE_INTERVAL_MS
    warmup_ms: int = 0
    seed: int = 1

    def validate(self) -> None:
        if self.trace_path is None and self.generator is None:
            raise ValidationError("config needs a trace_path or a generator spec")
        if not self.demand_profile:
            raise ValidationError("demand profile must be nonempty")
        if self.warmup_ms < 0:
            raise ValidationError("warmup_ms must be nonnegative")
        self.topology.validate()
        for config in self.registry_configs:
            config.validate()

    def with_direct_ttl(self, ttl_ms: int) -> "SimConfig":
        """Sweep helper: every registry record gets this direct TTL.

        An enabled failover tier is widened to at least the swept TTL so the
        record stays valid; the failover tier is idle in a sweep anyway
        unless the backend is configured to fail.
        """
        updated = tuple(
            replace(cfg, enable_direct=ttl_ms > 0, direct_ttl_ms=ttl_ms,
                    failover_ttl_ms=(max(cfg.failover_ttl_ms, ttl_ms)
                                     if cfg.enable_failover else cfg.failover_ttl_ms))
            for cfg in self.registry_configs)
        return replace(self, registry_configs=updated)

    def to_dict(self) -> dict[str, Any]:
        return {
            "registry": registry_to_records(ConfigRegistry(self.registry_configs)),
            "demand_profile": [
                {"model_id": m.model_id, "model_type": m.model_type,
                 "stage": m.stage.value} for m in self.demand_profile],
            "trace_path": self.trace_path,
            "generator": self.generator.to_dict() if self.generator else None,
            "topology": {
                "region_count": self.topology.region_count,
                "stickiness_p": self.topology.stickiness_p,
                "threshold_qps": self.topology.threshold_qps,
                "drains": [list(w) for w in self.topology.drains],
            },
            "backend": self.backend.to_dict(),
            "read_latency": {"p50_ms": self.read_latency_p50_ms,
                             "p99_ms": self.read_latency_p99_ms},
            "queue": {"capacity": self.queue_capacity,
                      "flush_batch": self.flush_batch},
            "purge_interval_ms": self.purge_interval_ms,
            "warmup_ms": self.warmup_ms,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimConfig":
        from .regions import DrainWindow
        topo_data = data.get("topology", {})
        topology = RegionTopology(
            region_count=int(topo_data.get("region_count", 1)),
            stickiness_p=float(topo_data.get("stickiness_p", 0.95)),
            threshold_qps=(None if topo_data.get("threshold_qps") is None
                           else float(topo_data["threshold_qps"])),
            drains=[DrainWindow(int(r), int(s), int(e))
                    for r, s, e in topo_data.get("drains", [])],
        )
        profile = tuple(
            ModelKey(int(m["model_id"]), str(m["model_type"]),
                     Stage.parse(m["stage"]))
            for m in data.get("demand_profile", [])) or default_demand_profile()
        generator = (GeneratorSpec.from_dict(data["generator"])
                     if data.get("generator") else None)
        queue = data.get("queue", {})
        latency = data.get("read_latency", {})
        return cls(
            registry_configs=tuple(config_from_record(r)
                                   for r in data.get("registry", [])),
            demand_profile=profile,
            trace_path=data.get("trace_path"),
            generator=generator,
            topology=topology,
            backend=BackendSpec.from_dict(data.get("backend", {})),
            read_latency_p50_ms=float(latency.get("p50_ms", 0.77)),
            read_latency_p99_ms=float(latency.get("p99_ms", 8.47)),
            queue_capacity=int(queue.get("capacity", 65_536)),
            flush_batch=int(queue.get("flush_batch", 512)),
            purge_interval_ms=int(data.get("purge_interval_ms",
                                           DEFAULT_PURGE_INTERVAL_MS)),
            warmup_ms=int(data.get("warmup_ms", 0)),
            seed=int(data.get("seed", 1)),
        )

    @classmethod
    def from_json_file(cls, path: str | Path) -> "SimConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class SimReport:
    """Reproduction surface: rates, counters, proxies, and time series.

    "Inference requests avoided" stands in for computation-resource savings
    (power cannot be simulated); read-latency numbers are proxies drawn from
    the configured distribution and never influence event ordering.
    """

    seed: int
    events_offered: int = 0
    events_admitted: int = 0
    events_rate_limited: int = 0
    events_measured: int = 0
    warmup_ms: int = 0
    horizon_ms: int = 0
    region_count: int = 1
    stickiness_p: float = 0.95
    serves_total: int = 0
    serves_direct: int = 0
    serves_inference: int = 0
    serves_failover: int = 0
    serves_fallback: int = 0
    inference_requests: int = 0
    inference_failures: int = 0
    direct_hit_rate: float = 0.0
    failover_hit_rate_among_failures: float = 0.0
    fallback_rate_with: float = 0.0
    fallback_rate_without: float = 0.0
    inference_requests_avoided_fraction: float = 0.0
    combination_factor: float = 0.0
    write_requests: int = 0
    raw_write_items: int = 0
    dropped_writes: int = 0
    store_gets: int = 0
    store_puts: int = 0
    store_bytes_written: int = 0
    read_latency_ms: dict[str, float] = field(default_factory=dict)
    staleness_all_serves_ms_mean: float = 0.0
    staleness_cache_serves_ms: dict[str, float] = field(default_factory=dict)
    cross_region_lookup_fraction: float = 0.0
    routed_by_region: list[int] = field(default_factory=list)
    admitted_by_region: list[int] = field(default_factory=list)
    rejected_by_region: list[int] = field(default_factory=list)
    hit_rate_by_hour: list[float | None] = field(default_factory=list)
    gets_by_hour: list[int] = field(default_factory=list)
    per_model: dict[str, dict[str, Any]] = field(default_factory=dict)
    scenario: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {key: getattr(self, key) for key in self.__dataclass_fields__}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimReport":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_csv_rows(self) -> list[tuple[str, str]]:
        """Flat (metric, value) rows; series and nested maps are indexed keys."""
        rows: list[tuple[str, str]] = []
        for key in self.__dataclass_fields__:
            value = getattr(self, key)
            if isinstance(value, dict) and key in ("read_latency_ms",
                                                   "staleness_cache_serves_ms"):
                for sub, number in value.items():
                    rows.append((f"{key}.{sub}", repr(number)))
            elif key in ("per_model", "scenario"):
                rows.append((key, json.dumps(value, sort_keys=True)))
            elif isinstance(value, list):
                rows.append((key, json.dumps(value)))
            else:
                rows.append((key, repr(value) if isinstance(value, float)
                             else str(value)))
        return rows


def _load_trace(config: SimConfig) -> Trace:
    if config.trace_path is not None:
        return read_trace_csv(config.trace_path,
                              profile_catalog(config.demand_profile))
    spec = config.generator
    return generate_trace(spec.model, spec.num_users, spec.horizon_ms,
                          config.demand_profile, config.seed)


def run(config: SimConfig, trace: Trace | None = None,
        spike: tuple[int, int, int] | None = None) -> SimReport:
    """Replay a trace through the full stack and report.

    ``trace`` short-circuits loading (scenario runners reuse one trace across
    runs). ``spike`` is (multiplier, start_ms, end_ms): events inside the
    window are offered ``multiplier`` times, used by the spike scenario.
    """
    config.validate()
    if trace is None:
        trace = _load_trace(config)

    seed = config.seed
    registry = ConfigRegistry(config.registry_configs)
    topology = config.topology
    region_count = topology.region_count
    multi_region = region_count > 1
    router = RegionRouter(topology, random.Random(f"{seed}:router"))
    limiter = (RegionRateLimiter(region_count, topology.threshold_qps)
               if topology.threshold_qps is not None else None)
    backend = config.backend.build(seed)

    read_latency = _PooledLatencySampler(
        config.read_latency_p50_ms, config.read_latency_p99_ms,
        random.Random(f"{seed}:read-latency"))

    stores = [CacheStore() for _ in range(region_count)]
    pipelines = []
    orchestrators = []
    for region in range(region_count):
        pipeline = WritePipeline(stores[region],
                                 queue_capacity=config.queue_capacity,
                                 flush_batch=config.flush_batch,
                                 source_region=region)
        pipelines.append(pipeline)
        orchestrators.append(RequestOrchestrator(
            stores[region], registry, pipeline, backend, read_latency))

    horizon = trace.horizon_ms
    if len(trace) and trace.timestamps[-1] >= horizon:
        horizon = trace.timestamps[-1] + 1
    hours = max(1, (horizon + MS_PER_HOUR - 1) // MS_PER_HOUR)
    gets_by_hour = [0] * hours
    direct_by_hour = [0] * hours

    aggs: dict[ModelKey, _ModelAgg] = {m: _ModelAgg() for m in trace.demands}
    all_staleness_sum = 0.0
    warmup = config.warmup_ms
    purge_interval = config.purge_interval_ms
    next_purge = purge_interval if purge_interval > 0 else None
    purge_horizon = max(registry.max_retention_ms(), 1)

    user_write_region: dict[int, int] = {}
    cross_region = 0
    lookups_with_history = 0

    offered = 0
    admitted = 0
    rate_limited = 0
    measured_events = 0
    routed = [0] * region_count

    spike_mult, spike_start, spike_end = spike if spike else (1, 0, 0)

    demands = trace.demands
    src_direct = Source.DIRECT_CACHE
    src_inference = Source.INFERENCE
    src_failover = Source.FAILOVER_CACHE
    rid = 0

    # single-region, single-model replay is the bulk workload: bind the hot
    # callables once and track the sole aggregate directly
    single_agg = aggs[demands[0]] if len(demands) == 1 else None
    track_regions = multi_region
    handle0 = orchestrators[0].handle
    pipeline0 = pipelines[0]
    queue0 = pipeline0._queue
    user_write_get = user_write_region.get

    for ts, user in zip(trace.timestamps, trace.users):
        copies = spike_mult if (spike and spike_start <= ts < spike_end) else 1
        for _ in range(copies):
            rid += 1
            offered += 1
            if multi_region:
                region = router.route(user, ts)
                routed[region] += 1
            else:
                region = 0
            if limiter is not None and not limiter.admit(region, ts):
                rate_limited += 1
                continue
            admitted += 1

            if next_purge is not None and ts >= next_purge:
                for store in stores:
                    store.purge_expired(ts, purge_horizon)
                next_purge += purge_interval * (1 + (ts - next_purge) // purge_interval)

            if region:
                pipeline = pipelines[region]
                writes_before = pipeline.combined_requests_out
                result = orchestrators[region].handle(
                    AdRequest(rid, user, ts, demands), ts)
                if pipeline._queue:
                    pipeline.drain_one(ts)
                wrote = pipeline.combined_requests_out != writes_before
            else:
                writes_before = pipeline0.combined_requests_out
                result = handle0(AdRequest(rid, user, ts, demands), ts)
                if queue0:
                    pipeline0.drain_one(ts)
                wrote = pipeline0.combined_requests_out != writes_before

            if ts >= warmup:
                measured_events += 1
                hour = ts // MS_PER_HOUR
                serves = result.serves
                gets_by_hour[hour] += len(serves)
                if track_regions:
                    last_write_region = user_write_get(user)
                    if last_write_region is not None:
                        lookups_with_history += 1
                        if last_write_region != region:
                            cross_region += 1
                for serve in serves:
                    agg = single_agg if single_agg is not None else aggs[serve.model]
                    agg.serves += 1
                    source = serve.source
                    if source is src_direct:
                        agg.direct += 1
                        direct_by_hour[hour] += 1
                        age = serve.embedding_age_ms
                        agg.staleness.add(age)
                        all_staleness_sum += age
                    elif source is src_inference:
                        agg.inference += 1
                    elif source is src_failover:
                        agg.failover += 1
                        agg.failures += 1
                        age = serve.embedding_age_ms
                        agg.staleness.add(age)
                        all_staleness_sum += age
                    else:
                        agg.fallback += 1
                        agg.failures += 1
            if wrote and track_regions:
                user_write_region[user] = region

    if not multi_region:
        routed[0] = offered

    for pipeline in pipelines:
        pipeline.flush_all()

    return _build_report(config, aggs, gets_by_hour, direct_by_hour,
                         read_latency.finalize_sketch(), all_staleness_sum,
                         offered, admitted, rate_limited, measured_events,
                         horizon, stores, pipelines, limiter, routed,
                         cross_region, lookups_with_history)


def _build_report(config: SimConfig, aggs, gets_by_hour, direct_by_hour,
                  latency_sketch, all_staleness_sum, offered, admitted,
                  rate_limited, measured_events, horizon, stores, pipelines,
                  limiter, routed, cross_region, lookups_with_history) -> SimReport:
    serves = sum(a.serves for a in aggs.values())
    direct = sum(a.direct for a in aggs.values())
    inference = sum(a.inference for a in aggs.values())
    failover = sum(a.failover for a in aggs.values())
    fallback = sum(a.fallback for a in aggs.values())
    failures = sum(a.failures for a in aggs.values())

    staleness = LogSketch(lo=1.0, hi=1e10, growth=1.05)
    for agg in aggs.values():
        sketch = agg.staleness
        staleness.n += sketch.n
        staleness.total += sketch.total
        staleness.vmin = min(staleness.vmin, sketch.vmin)
        staleness.vmax = max(staleness.vmax, sketch.vmax)
        for index, count in enumerate(sketch.counts):
            staleness.counts[index] += count

    raw_items = sum(p.raw_items_in for p in pipelines)
    combined = sum(p.combined_requests_out for p in pipelines)
    dropped = sum(p.dropped_overflow for p in pipelines)

    hit_rate_by_hour: list[float | None] = [
        (direct_by_hour[h] / gets_by_hour[h]) if gets_by_hour[h] else None
        for h in range(len(gets_by_hour))]

    report = SimReport(
        seed=config.seed,
        events_offered=offered,
        events_admitted=admitted,
        events_rate_limited=rate_limited,
        events_measured=measured_events,
        warmup_ms=config.warmup_ms,
        horizon_ms=horizon,
        region_count=config.topology.region_count,
        stickiness_p=config.topology.stickiness_p,
        serves_total=serves,
        serves_direct=direct,
        serves_inference=inference,
        serves_failover=failover,
        serves_fallback=fallback,
        inference_requests=inference + failures,
        inference_failures=failures,
        direct_hit_rate=direct / serves if serves else 0.0,
        failover_hit_rate_among_failures=failover / failures if failures else 0.0,
        fallback_rate_with=fallback / serves if serves else 0.0,
        fallback_rate_without=failures / serves if serves else 0.0,
        inference_requests_avoided_fraction=direct / serves if serves else 0.0,
        combination_factor=(raw_items / combined) if combined else 0.0,
        write_requests=combined,
        raw_write_items=raw_items,
        dropped_writes=dropped,
        store_gets=sum(s.gets_total for s in stores),
        store_puts=sum(s.puts_total for s in stores),
        store_bytes_written=sum(s.bytes_written_total for s in stores),
        read_latency_ms=latency_sketch.as_dict(),
        staleness_all_serves_ms_mean=(all_staleness_sum / serves) if serves else 0.0,
        staleness_cache_serves_ms=staleness.as_dict(),
        cross_region_lookup_fraction=(cross_region / lookups_with_history
                                      if lookups_with_history else 0.0),
        routed_by_region=routed,
        admitted_by_region=(list(limiter.admitted) if limiter
                            else list(routed)),
        rejected_by_region=(list(limiter.rejected) if limiter
                            else [0] * len(routed)),
        hit_rate_by_hour=hit_rate_by_hour,
        gets_by_hour=gets_by_hour,
        per_model={f"{m.model_id}:{m.model_type}:{m.stage.value}": agg.as_dict()
                   for m, agg in sorted(aggs.items(), key=lambda kv: kv[0].model_id)},
    )
    return report


def ttl_sweep(config: SimConfig, ttls: Sequence[int],
              trace: Trace | None = None,
              warmup_by_ttl: dict[int, int] | None = None
              ) -> list[tuple[int, SimReport]]:
    """Run the same trace and seed once per direct-cache TTL.

    ``warmup_by_ttl`` optionally overrides the measurement warmup per TTL;
    steady state takes longer to reach the longer the TTL, so large-TTL runs
    want warmups scaled to their cycle length.
    """
    if trace is None:
        trace = _load_trace(config)
    results = []
    for ttl in ttls:
        ttl = int(ttl)
        run_config = config.with_direct_ttl(ttl)
        if warmup_by_ttl is not None and ttl in warmup_by_ttl:
            run_config = replace(run_config, warmup_ms=warmup_by_ttl[ttl])
        report = run(run_config, trace=trace)
        report.scenario = {"kind": "ttl_sweep", "direct_ttl_ms": ttl}
        results.append((ttl, report))
    return results


def failover_experiment(config: SimConfig, failure_prob: float,
                        failover_ttl_ms: int,
                        trace: Trace | None = None) -> SimReport:
    """Failover-tier run: direct tier off, inference failing at ``failure_prob``.

    With the direct tier off every demand attempts inference, so the measured
    ``fallback_rate_without`` estimates the configured failure probability and
    ``fallback_with = f * (1 - h)`` is checkable from the same run.
    """
    if not 0.0 < failure_prob <= 1.0:
        raise ValidationError("failure_prob must be in (0, 1]")
    registry = tuple(replace(cfg, enable_direct=False,
                             enable_failover=True,
                             failover_ttl_ms=failover_ttl_ms)
                     for cfg in config.registry_configs)
    scenario_config = replace(
        config, registry_configs=registry,
        backend=replace(config.backend, failure_prob=failure_prob))
    report = run(scenario_config, trace=trace)
    report.scenario = {
        "kind": "failover",
        "failure_prob": failure_prob,
        "failover_ttl_ms": failover_ttl_ms,
        "identity_gap": abs(report.fallback_rate_with
                            - failure_prob
                            * (1.0 - report.failover_hit_rate_among_failures)),
    }
    return report


def drain_test(config: SimConfig, region: int, start_ms: int, end_ms: int,
               trace: Trace | None = None) -> SimReport:
    """Drain one region for a window; report hourly hit rate and stability."""
    topology = RegionTopology(
        region_count=config.topology.region_count,
        stickiness_p=config.topology.stickiness_p,
        threshold_qps=config.topology.threshold_qps,
        drains=list(config.topology.drains),
    )
    topology.drain(region, start_ms, end_ms)
    report = run(replace(config, topology=topology), trace=trace)

    warmup_hour = (config.warmup_ms + MS_PER_HOUR - 1) // MS_PER_HOUR
    start_hour = start_ms // MS_PER_HOUR
    end_hour = (end_ms + MS_PER_HOUR - 1) // MS_PER_HOUR
    pre = [r for r in report.hit_rate_by_hour[warmup_hour:start_hour]
           if r is not None]
    during = [r for r in report.hit_rate_by_hour[start_hour:end_hour]
              if r is not None]
    pre_mean = sum(pre) / len(pre) if pre else 0.0
    max_dev = max((abs(r - pre_mean) for r in during), default=0.0)
    report.scenario = {
        "kind": "drain",
        "region": region,
        "start_ms": start_ms,
        "end_ms": end_ms,
        "pre_drain_mean_hit_rate": pre_mean,
        "max_abs_deviation_during_drain": max_dev,
        "lost_requests": report.events_offered - report.events_admitted
        - report.events_rate_limited,
    }
    return report


def spike_test(config: SimConfig, multiplier: int, window: tuple[int, int],
               trace: Trace | None = None) -> SimReport:
    """Scale offered QPS by ``multiplier`` inside the window; check admission."""
    if multiplier < 1:
        raise ValidationError("spike multiplier must be >= 1")
    start_ms, end_ms = window
    report = run(config, trace=trace, spike=(multiplier, start_ms, end_ms))
    threshold = config.topology.threshold_qps
    window_seconds = (end_ms - start_ms) / 1000.0
    report.scenario = {
        "kind": "spike",
        "multiplier": multiplier,
        "window_ms": [start_ms, end_ms],
        "threshold_qps": threshold,
        "admitted_bound": (None if threshold is None
                           else threshold * window_seconds + threshold),
    }
    return report


def triangle_report(sweep: Sequence[tuple[int, SimReport]]) -> list[dict[str, Any]]:
    """Quantified freshness / compute / reliability trade-off, one row per TTL."""
    if not sweep:
        raise ValidationError("triangle report needs a nonempty sweep")
    rows = []
    for ttl, report in sweep:
        rows.append({
            "direct_ttl_ms": ttl,
            "staleness_mean_ms": report.staleness_all_serves_ms_mean,
            "inference_avoided_fraction": report.inference_requests_avoided_fraction,
            "fallback_rate": report.fallback_rate_with,
            "read_latency_p99_ms": report.read_latency_ms.get("p99", 0.0),
            "freshness_caution": ttl >= FRESHNESS_CAUTION_TTL_MS,
        })
    return rows
