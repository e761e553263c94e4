"""Shared domain vocabulary: identifiers, embeddings, cache entries, per-model
cache configs, lookup outcomes, and the tier-validity predicate.

All timestamps and durations are integer milliseconds. Every type here is an
immutable value and safe to share between threads.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

UserId = int  # positive 64-bit identifier; 0 is the "no user" sentinel

MS_PER_SECOND = 1_000
MS_PER_MINUTE = 60_000
MS_PER_HOUR = 3_600_000
MS_PER_DAY = 86_400_000

MAX_TTL_MS = 7 * MS_PER_DAY  # sanity bound on any configured TTL


class ValidationError(ValueError):
    """An input violated a documented invariant."""


class NotFoundError(LookupError):
    """A referenced key or staged request does not exist."""


class Stage(Enum):
    """Ranking pipeline stage that demands a model's embedding."""

    RETRIEVAL = "Retrieval"
    FIRST = "First"
    SECOND = "Second"

    @classmethod
    def parse(cls, text: str) -> "Stage":
        for member in cls:
            if member.value == text:
                return member
        raise ValidationError(f"unknown stage {text!r}")


class Tier(Enum):
    """The two logical cache tiers backed by one physical entry."""

    DIRECT = "direct"
    FAILOVER = "failover"


class ModelKey(NamedTuple):
    """Identity of one ranking model. ``model_id`` alone is unique; type and
    stage are attributes used for config selection and reporting."""

    model_id: int
    model_type: str
    stage: Stage

    def validate(self) -> None:
        if self.model_id <= 0:
            raise ValidationError(f"model_id must be positive, got {self.model_id}")
        if not self.model_type:
            raise ValidationError("model_type must be nonempty")
        if not isinstance(self.stage, Stage):
            raise ValidationError(f"stage must be a Stage, got {self.stage!r}")


_F32 = struct.Struct("<f")
_F32_MAX = 3.4028235677973366e38  # doubles beyond this overflow float32


def _to_f32(value: float) -> float:
    """Round a Python float to the nearest 32-bit value.

    NaN and infinities pass through; finite doubles beyond float32 range
    overflow to signed infinity, matching a float64-to-float32 cast.
    """
    value = float(value)
    if value > _F32_MAX:
        return math.inf
    if value < -_F32_MAX:
        return -math.inf
    return _F32.unpack(_F32.pack(value))[0]


@dataclass(frozen=True, slots=True)
class EmbeddingVector:
    """A fixed-dimension vector of finite 32-bit floats.

    Components are stored at 32-bit precision so the hex wire encoding
    round-trips bit-exactly. Construction does not reject non-finite values;
    boundaries (store writes, protocol parsing) call :meth:`is_valid`.
    """

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        values = self.values
        try:
            coerced = struct.unpack(f"<{len(values)}f",
                                    struct.pack(f"<{len(values)}f", *values))
        except (struct.error, OverflowError, TypeError):
            coerced = tuple(_to_f32(v) for v in values)
        object.__setattr__(self, "values", coerced)

    @property
    def dim(self) -> int:
        return len(self.values)

    def is_valid(self) -> bool:
        # components are float32-coerced, so their double sum cannot overflow
        # and is non-finite exactly when some component is
        return bool(self.values) and math.isfinite(sum(self.values))

    def to_hex(self) -> str:
        """Little-endian 32-bit IEEE-754 components, concatenated, lowercase hex."""
        return struct.pack(f"<{len(self.values)}f", *self.values).hex()

    @classmethod
    def from_hex(cls, dim: int, text: str) -> "EmbeddingVector":
        if dim <= 0:
            raise ValidationError(f"dim must be positive, got {dim}")
        if len(text) != dim * 8:
            raise ValidationError(f"hex length {len(text)} != dim {dim} * 8")
        try:
            raw = bytes.fromhex(text)
        except ValueError as exc:
            raise ValidationError(f"bad hex embedding: {exc}") from exc
        return cls(struct.unpack(f"<{dim}f", raw))

    @property
    def nbytes(self) -> int:
        return 4 * len(self.values)


class CacheEntry(NamedTuple):
    """One user-by-model embedding as stored, aged, and evicted."""

    user: UserId
    model: ModelKey
    embedding: EmbeddingVector
    written_at: int  # ms since epoch, inference completion time
    source_region: int

    def validate(self) -> None:
        if self.user <= 0:
            raise ValidationError(f"user must be positive, got {self.user}")
        self.model.validate()
        if self.written_at < 0:
            raise ValidationError("written_at must be >= 0")
        if not self.embedding.is_valid():
            raise ValidationError("embedding has no components or non-finite values")


@dataclass(frozen=True, slots=True)
class ModelCacheConfig:
    """Per-model (or per-model-type) tier enablement and TTLs.

    Exactly one of ``model_id`` / ``model_type`` selects which models the
    record applies to. When both tiers are enabled the failover TTL must be
    at least the direct TTL, so a direct-valid entry is always failover-valid.
    """

    model_id: int | None = None
    model_type: str | None = None
    enable_direct: bool = False
    direct_ttl_ms: int = 0
    enable_failover: bool = False
    failover_ttl_ms: int = 0

    def validate(self) -> None:
        if (self.model_id is None) == (self.model_type is None):
            raise ValidationError("exactly one of model_id / model_type must be given")
        if self.model_id is not None and self.model_id <= 0:
            raise ValidationError(f"model_id must be positive, got {self.model_id}")
        if self.model_type is not None and not self.model_type:
            raise ValidationError("model_type must be nonempty")
        for name, ttl in (("direct_ttl_ms", self.direct_ttl_ms),
                          ("failover_ttl_ms", self.failover_ttl_ms)):
            if not isinstance(ttl, int) or ttl < 0:
                raise ValidationError(f"{name} must be a nonnegative integer, got {ttl!r}")
            if ttl > MAX_TTL_MS:
                raise ValidationError(f"{name} {ttl} exceeds the 7-day sanity bound")
        if (self.enable_direct and self.enable_failover
                and self.failover_ttl_ms < self.direct_ttl_ms):
            raise ValidationError(
                f"failover_ttl_ms {self.failover_ttl_ms} < direct_ttl_ms "
                f"{self.direct_ttl_ms} with both tiers enabled")

    @property
    def any_tier_enabled(self) -> bool:
        return self.enable_direct or self.enable_failover


#: Resolution fallback: caching disabled on both tiers.
DISABLED_CONFIG = ModelCacheConfig(model_type="*", enable_direct=False,
                                   enable_failover=False)


class LookupOutcome(NamedTuple):
    """Result of a tiered cache lookup.

    ``tier`` is ``Tier.DIRECT`` or ``Tier.FAILOVER`` for hits, ``None`` for a
    miss. ``age_ms`` is ``now - written_at`` (clamped at 0 under clock skew).
    """

    tier: Tier | None
    age_ms: int
    entry: CacheEntry | None

    @property
    def is_direct_hit(self) -> bool:
        return self.tier is Tier.DIRECT

    @property
    def is_failover_hit(self) -> bool:
        return self.tier is Tier.FAILOVER

    @property
    def is_miss(self) -> bool:
        return self.tier is None


MISS = LookupOutcome(None, 0, None)


def entry_age_ms(entry: CacheEntry, now: int) -> int:
    """Age of an entry at ``now``; clock skew (now < written_at) reads as 0."""
    age = now - entry.written_at
    return age if age > 0 else 0


def tier_valid(entry: CacheEntry, now: int, config: ModelCacheConfig,
               tier: Tier) -> bool:
    """True iff ``tier`` is enabled and the entry is younger than its TTL.

    The boundary is strict: age == TTL is expired. Callers that care about
    clock skew count it themselves via ``now < entry.written_at``.
    """
    age = now - entry.written_at
    if age < 0:
        age = 0
    if tier is Tier.DIRECT:
        return config.enable_direct and age < config.direct_ttl_ms
    return config.enable_failover and age < config.failover_ttl_ms
