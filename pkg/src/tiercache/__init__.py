"""Two-tier TTL embedding cache with a deterministic workload simulator,
calibrated inter-arrival model, and a line-protocol cache server."""

from .config import ConfigRegistry, load_registry
from .core import (
    CacheEntry,
    EmbeddingVector,
    LookupOutcome,
    ModelCacheConfig,
    ModelKey,
    Stage,
    Tier,
    UserId,
    ValidationError,
    tier_valid,
)
from .orchestrator import (
    AdRequest,
    RequestOrchestrator,
    ServingResult,
    SimulatedBackend,
    Source,
)
from .regions import RegionRateLimiter, RegionRouter, RegionTopology
from .simulator import (
    SimConfig,
    SimReport,
    drain_test,
    failover_experiment,
    run,
    spike_test,
    triangle_report,
    ttl_sweep,
)
from .store import CacheStore, StoreStats
from .workload import (
    CalibrationResult,
    InterArrivalModel,
    Trace,
    calibrate,
    expected_hit_rate,
    generate_trace,
)
from .writeback import PendingWrite, QueueStats, WritePipeline

__version__ = "0.1.0"

__all__ = [
    "AdRequest",
    "CacheEntry",
    "CacheStore",
    "CalibrationResult",
    "ConfigRegistry",
    "EmbeddingVector",
    "InterArrivalModel",
    "LookupOutcome",
    "ModelCacheConfig",
    "ModelKey",
    "PendingWrite",
    "QueueStats",
    "RegionRateLimiter",
    "RegionRouter",
    "RegionTopology",
    "RequestOrchestrator",
    "ServingResult",
    "SimConfig",
    "SimReport",
    "SimulatedBackend",
    "Source",
    "Stage",
    "StoreStats",
    "Tier",
    "Trace",
    "UserId",
    "ValidationError",
    "WritePipeline",
    "calibrate",
    "drain_test",
    "expected_hit_rate",
    "failover_experiment",
    "generate_trace",
    "load_registry",
    "run",
    "spike_test",
    "tier_valid",
    "triangle_report",
    "ttl_sweep",
]
