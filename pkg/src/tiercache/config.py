"""Registry resolving the effective cache config for a model key.

Records are keyed by either model_id or model_type; an exact model_id match
beats a model_type match, and anything unmatched gets the disabled default.
Updates publish atomically under a lock and affect subsequent requests only.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Any, Iterable

from .core import DISABLED_CONFIG, ModelCacheConfig, ModelKey, ValidationError


class ConfigRegistry:
    """Dual-keyed (model_id / model_type) config store."""

    def __init__(self, configs: Iterable[ModelCacheConfig] = ()) -> None:
        self._by_id: dict[int, ModelCacheConfig] = {}
        self._by_type: dict[str, ModelCacheConfig] = {}
        self._lock = threading.Lock()
        for config in configs:
            self.upsert(config)

    def upsert(self, config: ModelCacheConfig) -> ModelCacheConfig | None:
        """Insert or replace the record with the same selector.

        Returns the replaced config, or None. Raises ValidationError if the
        config violates its invariants (e.g. failover TTL below direct TTL).
        """
        config.validate()
        with self._lock:
            if config.model_id is not None:
                previous = self._by_id.get(config.model_id)
                self._by_id[config.model_id] = config
            else:
                previous = self._by_type.get(config.model_type)
                self._by_type[config.model_type] = config
        return previous

    def resolve(self, model: ModelKey) -> ModelCacheConfig:
        """Effective config: id match > type match > disabled default."""
        config = self._by_id.get(model.model_id)
        if config is not None:
            return config
        config = self._by_type.get(model.model_type)
        if config is not None:
            return config
        return DISABLED_CONFIG

    def max_retention_ms(self) -> int:
        """Largest TTL any record can keep an entry readable; purge horizon."""
        horizon = 0
        with self._lock:
            for config in list(self._by_id.values()) + list(self._by_type.values()):
                if config.enable_failover:
                    horizon = max(horizon, config.failover_ttl_ms)
                if config.enable_direct:
                    horizon = max(horizon, config.direct_ttl_ms)
        return horizon

    def snapshot(self) -> list[ModelCacheConfig]:
        with self._lock:
            return list(self._by_id.values()) + list(self._by_type.values())


def config_from_record(record: dict[str, Any]) -> ModelCacheConfig:
    """Build a config from one JSON record; exactly one selector key."""
    known = {"model_id", "model_type", "enable_direct", "direct_ttl_ms",
             "enable_failover", "failover_ttl_ms"}
    unknown = set(record) - known
    if unknown:
        raise ValidationError(f"unknown config fields: {sorted(unknown)}")
    config = ModelCacheConfig(
        model_id=record.get("model_id"),
        model_type=record.get("model_type"),
        enable_direct=bool(record.get("enable_direct", False)),
        direct_ttl_ms=int(record.get("direct_ttl_ms", 0)),
        enable_failover=bool(record.get("enable_failover", False)),
        failover_ttl_ms=int(record.get("failover_ttl_ms", 0)),
    )
    config.validate()
    return config


def load_registry(path: str | Path) -> ConfigRegistry:
    """Load a registry from a JSON document: a list of config records."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValidationError("config document must be a JSON list of records")
    registry = ConfigRegistry()
    for index, record in enumerate(data):
        if not isinstance(record, dict):
            raise ValidationError(f"config record {index} is not an object")
        try:
            registry.upsert(config_from_record(record))
        except (ValidationError, TypeError, ValueError) as exc:
            raise ValidationError(f"config record {index}: {exc}") from exc
    return registry


def registry_to_records(registry: ConfigRegistry) -> list[dict[str, Any]]:
    records = []
    for config in registry.snapshot():
        record: dict[str, Any] = {}
        if config.model_id is not None:
            record["model_id"] = config.model_id
        else:
            record["model_type"] = config.model_type
        record.update(
            enable_direct=config.enable_direct,
            direct_ttl_ms=config.direct_ttl_ms,
            enable_failover=config.enable_failover,
            failover_ttl_ms=config.failover_ttl_ms,
        )
        records.append(record)
    return records
