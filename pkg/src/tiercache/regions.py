"""Multi-region placement: sticky routing, drain windows, rate limiting.

Each region owns an independent cache store; a user's requests stay in the
region of their previous serving with probability ``stickiness_p``, otherwise
(or when that region is drained or unseen) a rendezvous hash assigns one of
the currently available regions. Draining a region reroutes its traffic for
the window but leaves its cache contents untouched.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import NamedTuple

from .core import UserId, ValidationError


class DrainWindow(NamedTuple):
    region: int
    start_ms: int
    end_ms: int


@dataclass
class RegionTopology:
    """Region count, routing stickiness, limiter thresholds, drain schedule."""

    region_count: int = 1
    stickiness_p: float = 0.95
    threshold_qps: float | None = None  # None disables rate limiting
    drains: list[DrainWindow] = field(default_factory=list)

    def validate(self) -> None:
        if self.region_count < 1:
            raise ValidationError("region_count must be >= 1")
        if not 0.0 <= self.stickiness_p <= 1.0:
            raise ValidationError("stickiness_p must be within [0, 1]")
        if self.threshold_qps is not None and self.threshold_qps < 0:
            raise ValidationError("threshold_qps must be nonnegative")
        for window in self.drains:
            self._check_drain(window)

    def _check_drain(self, window: DrainWindow) -> None:
        if not 0 <= window.region < self.region_count:
            raise ValidationError(f"drain region {window.region} out of range")
        if window.start_ms >= window.end_ms:
            raise ValidationError("drain start must precede end")
        # at every boundary instant at least one region must stay available
        edges = {window.start_ms, window.end_ms}
        for other in self.drains:
            edges.update((other.start_ms, other.end_ms))
        candidate = self.drains + [window]
        for edge in edges:
            drained = {w.region for w in candidate if w.start_ms <= edge < w.end_ms}
            if len(drained) >= self.region_count:
                raise ValidationError("drain schedule would leave zero regions")

    def drain(self, region: int, start_ms: int, end_ms: int) -> None:
        """Schedule a drain window; rejected if it would empty the topology."""
        window = DrainWindow(region, start_ms, end_ms)
        self._check_drain(window)
        self.drains.append(window)

    def drained_at(self, region: int, now: int) -> bool:
        return any(w.region == region and w.start_ms <= now < w.end_ms
                   for w in self.drains)

    def available_regions(self, now: int) -> list[int]:
        drained = {w.region for w in self.drains if w.start_ms <= now < w.end_ms}
        return [r for r in range(self.region_count) if r not in drained]


def _mix64(x: int) -> int:
    """splitmix64 finalizer; cheap stable hash for rendezvous scoring."""
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & 0xFFFFFFFFFFFFFFFF
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


class RegionRouter:
    """Sticky-with-rendezvous-fallback request router.

    With probability ``stickiness_p`` a user lands in their previous region
    (when available); otherwise, and for first-seen users or drained previous
    regions, the highest-rendezvous-score available region wins. The choice
    is recorded as the user's new previous region. Routing never drops a
    request: some region is always returned.
    """

    def __init__(self, topology: RegionTopology, rng: random.Random) -> None:
        topology.validate()
        self._topology = topology
        self._rng = rng
        self._last_region: dict[UserId, int] = {}
        self.sticky_routes = 0  # previous region reused by the sticky branch
        self.rehash_routes = 0  # rendezvous fallback despite a usable previous

    def route(self, user: UserId, now: int) -> int:
        topo = self._topology
        if topo.region_count == 1:
            return 0
        last = self._last_region.get(user)
        if last is not None and not topo.drained_at(last, now):
            if self._rng.random() < topo.stickiness_p:
                self.sticky_routes += 1
                return last
            self.rehash_routes += 1
        region = self._rendezvous(user, topo.available_regions(now))
        self._last_region[user] = region
        return region

    def _rendezvous(self, user: UserId, regions: list[int]) -> int:
        best_region = regions[0]
        best_score = -1
        for region in regions:
            score = _mix64(user * 0x9E3779B97F4A7C15 + region + 1)
            if score > best_score:
                best_score = score
                best_region = region
        return best_region

    def last_region(self, user: UserId) -> int | None:
        return self._last_region.get(user)


class RegionRateLimiter:
    """Per-region token buckets refilled at the regional QPS threshold.

    Burst capacity defaults to one second of tokens. A zero threshold admits
    nothing; a ``None`` threshold admits everything.
    """

    def __init__(self, region_count: int, threshold_qps: float | None,
                 burst: float | None = None) -> None:
        if threshold_qps is not None and threshold_qps < 0:
            raise ValidationError("threshold_qps must be nonnegative")
        self.threshold_qps = threshold_qps
        self.burst = (threshold_qps if burst is None else burst) or 0.0
        self._level = [self.burst] * region_count
        self._last_ms = [0] * region_count
        self.admitted = [0] * region_count
        self.rejected = [0] * region_count

    def admit(self, region: int, now: int) -> bool:
        if self.threshold_qps is None:
            self.admitted[region] += 1
            return True
        level = self._level[region]
        elapsed = now - self._last_ms[region]
        if elapsed > 0:
            level += elapsed * self.threshold_qps / 1000.0
            if level > self.burst:
                level = self.burst
            self._last_ms[region] = now
        if level >= 1.0:
            self._level[region] = level - 1.0
            self.admitted[region] += 1
            return True
        self._level[region] = level
        self.rejected[region] += 1
        return False
