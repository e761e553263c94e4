from __future__ import annotations

import pytest

from tiercache.core import CacheEntry, EmbeddingVector, ModelCacheConfig, ModelKey, Stage
from tiercache.workload import calibrate


def make_embedding(*values: float) -> EmbeddingVector:
    return EmbeddingVector(tuple(values) or (0.25, -1.5, 3.0))


def make_model(model_id: int = 1, model_type: str = "CVR",
               stage: Stage = Stage.FIRST) -> ModelKey:
    return ModelKey(model_id, model_type, stage)


def make_entry(user: int = 7, model: ModelKey | None = None,
               written_at: int = 0, region: int = 0,
               embedding: EmbeddingVector | None = None) -> CacheEntry:
    return CacheEntry(user, model or make_model(),
                      embedding or make_embedding(), written_at, region)


def make_config(direct_ttl: int = 60_000, failover_ttl: int = 3_600_000,
                model_id: int | None = 1, model_type: str | None = None,
                enable_direct: bool = True,
                enable_failover: bool = True) -> ModelCacheConfig:
    return ModelCacheConfig(model_id=model_id, model_type=model_type,
                            enable_direct=enable_direct, direct_ttl_ms=direct_ttl,
                            enable_failover=enable_failover,
                            failover_ttl_ms=failover_ttl)


@pytest.fixture(scope="session")
def paper_calibration():
    """One calibration of the paper workload shared across the suite."""
    return calibrate()


@pytest.fixture(scope="session")
def paper_model(paper_calibration):
    return paper_calibration.model
