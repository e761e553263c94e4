"""User access-pattern model, calibration, and deterministic trace generation.

Inter-arrival gaps are modeled as a mixture of exponential components. Each
component is a class of users issuing requests as a Poisson process; the
mixture weights are gap (event) weights, so the pooled gap CDF is
``F(t) = sum_k w_k (1 - exp(-rate_k t))`` and the hit rate of a no-refresh
TTL cache is ``H(T) = sum_k w_k rate_k T / (1 + rate_k T)`` per the renewal
cycle argument (one miss starts a cycle, arrivals within the TTL hit).
An optional lognormal per-user rate multiplier (mean 1) adds heterogeneity
inside each class.
"""

from __future__ import annotations

import csv
import json
import math
import random
from array import array
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy.optimize import linprog, minimize, nnls

from .core import (
    MS_PER_HOUR,
    MS_PER_MINUTE,
    ModelKey,
    Stage,
    UserId,
    ValidationError,
)

#: Pooled gap-CDF calibration anchors: (duration_ms, cumulative probability).
DEFAULT_CDF_ANCHORS: tuple[tuple[int, float], ...] = (
    (MS_PER_MINUTE, 0.52),
    (10 * MS_PER_MINUTE, 0.76),
    (MS_PER_HOUR, 0.88),
)

#: Direct-cache hit-rate calibration targets: (ttl_ms, hit rate).
DEFAULT_HIT_RATE_TARGETS: tuple[tuple[int, float], ...] = (
    (MS_PER_MINUTE, 0.516),
    (5 * MS_PER_MINUTE, 0.687),
    (MS_PER_HOUR, 0.897),
    (6 * MS_PER_HOUR, 0.971),
    (12 * MS_PER_HOUR, 0.979),
)

CALIBRATION_TOLERANCE = 0.03

# Fastest component mean is floored so that no user class carries a per-user
# event rate a desk-scale stratified population cannot represent.
_GRID_MEAN_BOUNDS_MS = (1_500.0, 48.0 * MS_PER_HOUR)
_GRID_POINTS = 30


class CdfAnchor(NamedTuple):
    t_ms: int
    probability: float


def _as_anchors(pairs: Sequence[tuple[int, float]]) -> list[CdfAnchor]:
    anchors = [CdfAnchor(int(t), float(p)) for t, p in pairs]
    if not anchors:
        raise ValidationError("need at least one anchor")
    for anchor in anchors:
        if anchor.t_ms <= 0:
            raise ValidationError("anchor durations must be positive")
        if not 0.0 <= anchor.probability <= 1.0:
            raise ValidationError("anchor probabilities must lie in [0, 1]")
    for left, right in zip(anchors, anchors[1:]):
        if right.t_ms <= left.t_ms or right.probability < left.probability:
            raise ValidationError(
                "anchors must be sorted by duration with nondecreasing probability")
    return anchors


def _check_targets(targets: Sequence[tuple[int, float]]) -> list[tuple[int, float]]:
    out = [(int(t), float(r)) for t, r in targets]
    for ttl, rate in out:
        if ttl <= 0:
            raise ValidationError("hit-target TTLs must be positive")
        if not 0.0 <= rate <= 1.0:
            raise ValidationError("hit-target rates must lie in [0, 1]")
    for left, right in zip(out, out[1:]):
        if right[0] <= left[0] or right[1] < left[1]:
            raise ValidationError(
                "hit targets must be sorted by TTL with nondecreasing rate")
    return out


# Gauss-Hermite nodes for integrating over the lognormal user multiplier.
_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(24)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(math.pi)


def _multiplier_nodes(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes/weights for m ~ LogNormal(-sigma^2/2, sigma^2)."""
    nodes = np.exp(-0.5 * sigma * sigma + sigma * math.sqrt(2.0) * _GH_NODES)
    return nodes, _GH_WEIGHTS


@dataclass(frozen=True)
class InterArrivalModel:
    """Mixture of exponential gap components with optional user heterogeneity.

    ``weights`` are gap (event) weights; the probability that a *user*
    belongs to component k is proportional to ``weights[k] / rates[k]``.
    """

    rates_per_ms: tuple[float, ...]
    weights: tuple[float, ...]
    user_sigma: float = 0.0

    def __post_init__(self) -> None:
        if len(self.rates_per_ms) != len(self.weights) or not self.rates_per_ms:
            raise ValidationError("rates and weights must be nonempty and equal length")
        if any(r <= 0 for r in self.rates_per_ms):
            raise ValidationError("all rates must be positive")
        if any(w < 0 for w in self.weights):
            raise ValidationError("weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValidationError("weights must sum to 1")
        if self.user_sigma < 0:
            raise ValidationError("user_sigma must be nonnegative")

    # -- analytic forms ------------------------------------------------------

    def cdf(self, t_ms: float) -> float:
        """Pooled gap CDF at ``t_ms``."""
        if t_ms <= 0:
            return 0.0
        if self.user_sigma == 0.0:
            return sum(w * (1.0 - math.exp(-r * t_ms))
                       for w, r in zip(self.weights, self.rates_per_ms))
        nodes, gh_w = _multiplier_nodes(self.user_sigma)
        total = 0.0
        for w, r in zip(self.weights, self.rates_per_ms):
            # event weighting tilts the multiplier law by m
            total += w * float(np.sum(gh_w * nodes * (1.0 - np.exp(-nodes * r * t_ms))))
        return total

    def mean_gap_ms(self) -> float:
        """Pooled mean gap; with heterogeneity the event-weighted mean gap."""
        if self.user_sigma == 0.0:
            return sum(w / r for w, r in zip(self.weights, self.rates_per_ms))
        # E*[1/(m r)] under the size-biased multiplier law equals 1/r
        return sum(w / r for w, r in zip(self.weights, self.rates_per_ms))

    def user_class_probs(self) -> tuple[float, ...]:
        """Per-user component probabilities (weights divided by rates)."""
        raw = [w / r for w, r in zip(self.weights, self.rates_per_ms)]
        total = sum(raw)
        return tuple(x / total for x in raw)

    # -- sampling ------------------------------------------------------------

    def sample_pooled_gaps(self, n: int, rng: random.Random) -> list[float]:
        """IID draws from the pooled gap distribution (for CDF agreement tests)."""
        cum = []
        acc = 0.0
        for w in self.weights:
            acc += w
            cum.append(acc)
        sigma = self.user_sigma
        out = []
        rnd = rng.random
        expo = rng.expovariate
        gauss = rng.gauss
        for _ in range(n):
            u = rnd()
            k = 0
            while cum[k] < u and k < len(cum) - 1:
                k += 1
            rate = self.rates_per_ms[k]
            if sigma > 0.0:
                # gaps are event-weighted, so the multiplier law is size-biased
                m = math.exp(gauss(0.5 * sigma * sigma, sigma))
                rate *= m
            out.append(expo(rate))
        return out

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "rates_per_ms": list(self.rates_per_ms),
            "weights": list(self.weights),
            "user_sigma": self.user_sigma,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InterArrivalModel":
        return cls(tuple(float(x) for x in data["rates_per_ms"]),
                   tuple(float(x) for x in data["weights"]),
                   float(data.get("user_sigma", 0.0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "InterArrivalModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def expected_hit_rate(model: InterArrivalModel, ttl_ms: float) -> float:
    """Analytic hit rate of a no-refresh TTL cache fed by the model.

    Per component (a Poisson user class) the renewal-reward cycle gives
    ``E[N(T)] / (1 + E[N(T)]) = rate*T / (1 + rate*T)``; components combine
    by event weight. Exact for a pure exponential model.
    """
    if ttl_ms <= 0:
        return 0.0
    if model.user_sigma == 0.0:
        return sum(w * (r * ttl_ms) / (1.0 + r * ttl_ms)
                   for w, r in zip(model.weights, model.rates_per_ms))
    nodes, gh_w = _multiplier_nodes(model.user_sigma)
    total = 0.0
    for w, r in zip(model.weights, model.rates_per_ms):
        x = nodes * (r * ttl_ms)
        total += w * float(np.sum(gh_w * nodes * (x / (1.0 + x))))
    return total


# -- calibration --------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationResult:
    """Fitted model plus the residual report (never hidden)."""

    model: InterArrivalModel
    anchor_residuals: tuple[float, ...]
    hit_residuals: tuple[float, ...]
    tolerance: float

    @property
    def max_abs_residual(self) -> float:
        residuals = self.anchor_residuals + self.hit_residuals
        return max(abs(r) for r in residuals) if residuals else 0.0

    @property
    def ok(self) -> bool:
        return self.max_abs_residual <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "anchor_residuals": list(self.anchor_residuals),
            "hit_residuals": list(self.hit_residuals),
            "max_abs_residual": self.max_abs_residual,
            "tolerance": self.tolerance,
            "ok": self.ok,
        }


def _design_matrix(rates: np.ndarray, anchor_ts: np.ndarray,
                   target_ttls: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows of F/H values per candidate rate; both are linear in the weights."""
    f_rows = 1.0 - np.exp(-np.outer(anchor_ts, rates))
    x = np.outer(target_ttls, rates)
    h_rows = x / (1.0 + x)
    return f_rows, h_rows


def _minimax_weights(rates: np.ndarray, anchor_ts: np.ndarray,
                     anchor_ps: np.ndarray, target_ttls: np.ndarray,
                     target_rates: np.ndarray,
                     anchor_cap: float | None = None
                     ) -> tuple[np.ndarray | None, float]:
    """Weights on the simplex minimizing the largest absolute residual.

    With ``anchor_cap`` the anchor residuals become hard constraints and only
    the hit residuals are minimized; hit targets are the quantities the
    simulator must reproduce, so they get whatever slack the anchors leave.
    """
    f_rows, h_rows = _design_matrix(rates, anchor_ts, target_ttls)
    n = len(rates)
    blocks_ub = []
    rhs_ub = []
    if anchor_cap is not None and len(target_ttls):
        blocks_ub.append(np.hstack([h_rows, -np.ones((len(target_rates), 1))]))
        rhs_ub.append(target_rates)
        blocks_ub.append(np.hstack([-h_rows, -np.ones((len(target_rates), 1))]))
        rhs_ub.append(-target_rates)
        blocks_ub.append(np.hstack([f_rows, np.zeros((len(anchor_ps), 1))]))
        rhs_ub.append(anchor_ps + anchor_cap)
        blocks_ub.append(np.hstack([-f_rows, np.zeros((len(anchor_ps), 1))]))
        rhs_ub.append(-(anchor_ps - anchor_cap))
    else:
        a_mat = np.vstack([f_rows, h_rows]) if len(target_ttls) else f_rows
        b_vec = np.concatenate([anchor_ps, target_rates])
        blocks_ub.append(np.hstack([a_mat, -np.ones((len(b_vec), 1))]))
        rhs_ub.append(b_vec)
        blocks_ub.append(np.hstack([-a_mat, -np.ones((len(b_vec), 1))]))
        rhs_ub.append(-b_vec)
    a_ub = np.vstack(blocks_ub)
    b_ub = np.concatenate(rhs_ub)
    a_eq = np.concatenate([np.ones(n), [0.0]])[None, :]
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    result = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
                     bounds=[(0, None)] * n + [(0, None)], method="highs")
    if not result.success:
        return None, math.inf
    return result.x[:n], float(result.x[-1])


def _least_squares_weights(rates: np.ndarray, anchor_ts: np.ndarray,
                           anchor_ps: np.ndarray, target_ttls: np.ndarray,
                           target_rates: np.ndarray) -> np.ndarray:
    """Sum-to-one nonnegative least squares via an augmented penalty row."""
    f_rows, h_rows = _design_matrix(rates, anchor_ts, target_ttls)
    a_mat = np.vstack([f_rows, h_rows]) if len(target_ttls) else f_rows
    b_vec = np.concatenate([anchor_ps, target_rates])
    penalty = 1e3
    a_aug = np.vstack([a_mat, penalty * np.ones(len(rates))])
    b_aug = np.concatenate([b_vec, [penalty]])
    weights, _ = nnls(a_aug, b_aug)
    total = weights.sum()
    return weights / total if total > 0 else weights


def calibrate(anchors: Sequence[tuple[int, float]] = DEFAULT_CDF_ANCHORS,
              hit_targets: Sequence[tuple[int, float]] = DEFAULT_HIT_RATE_TARGETS,
              k: int = 4,
              tolerance: float = CALIBRATION_TOLERANCE) -> CalibrationResult:
    """Fit a K-component mixture to CDF anchors and TTL hit-rate targets.

    A log-spaced rate grid seeds a least-squares fit; the heaviest K
    components are kept and their rates refined (Nelder-Mead over log rates,
    re-solving the weights each step with a minimax program, which bounds the
    worst residual instead of just the squared sum). The returned report
    carries every residual; ``ok`` says whether all are within tolerance.
    """
    anchor_list = _as_anchors(anchors)
    target_list = _check_targets(hit_targets)
    constraints = len(anchor_list) + len(target_list)
    if k < max(1, math.ceil(constraints / 2) if constraints > 1 else 1):
        raise ValidationError(
            f"k={k} too small for {constraints} calibration constraints")

    anchor_ts = np.array([a.t_ms for a in anchor_list], dtype=float)
    anchor_ps = np.array([a.probability for a in anchor_list], dtype=float)
    target_ttls = np.array([t for t, _ in target_list], dtype=float)
    target_rates = np.array([r for _, r in target_list], dtype=float)

    grid = 1.0 / np.geomspace(_GRID_MEAN_BOUNDS_MS[0], _GRID_MEAN_BOUNDS_MS[1],
                              _GRID_POINTS)

    ls_weights = _least_squares_weights(grid, anchor_ts, anchor_ps,
                                        target_ttls, target_rates)
    mm_weights, _ = _minimax_weights(grid, anchor_ts, anchor_ps,
                                     target_ttls, target_rates)
    seed_weights = mm_weights if mm_weights is not None else ls_weights

    top = np.argsort(seed_weights)[::-1][:k]
    support = np.sort(grid[top])[::-1]

    lo = math.log(1.0 / _GRID_MEAN_BOUNDS_MS[1])
    hi = math.log(1.0 / _GRID_MEAN_BOUNDS_MS[0])
    # anchors take the full tolerance so the hit targets, which the simulator
    # has to reproduce, keep the largest achievable margin
    anchor_cap = tolerance - 1e-6 if len(target_list) else None

    def objective(log_rates: np.ndarray) -> float:
        rates = np.exp(np.clip(log_rates, lo, hi))
        _, worst = _minimax_weights(rates, anchor_ts, anchor_ps,
                                    target_ttls, target_rates,
                                    anchor_cap=anchor_cap)
        return worst

    refined = minimize(objective, np.log(support), method="Nelder-Mead",
                       options={"maxiter": 250 * k, "xatol": 1e-4,
                                "fatol": 1e-7})
    rates = np.exp(np.clip(refined.x, lo, hi))
    weights, _ = _minimax_weights(rates, anchor_ts, anchor_ps,
                                  target_ttls, target_rates,
                                  anchor_cap=anchor_cap)
    if weights is None:
        weights, _ = _minimax_weights(rates, anchor_ts, anchor_ps,
                                      target_ttls, target_rates)
    if weights is None:
        rates = support
        weights = _least_squares_weights(rates, anchor_ts, anchor_ps,
                                         target_ttls, target_rates)

    keep = weights > 1e-9
    rates, weights = rates[keep], weights[keep]
    weights = weights / weights.sum()
    order = np.argsort(rates)[::-1]
    rates, weights = rates[order], weights[order]

    model = InterArrivalModel(tuple(float(r) for r in rates),
                              tuple(float(w) for w in weights))
    anchor_res = tuple(model.cdf(a.t_ms) - a.probability for a in anchor_list)
    hit_res = tuple(expected_hit_rate(model, ttl) - rate
                    for ttl, rate in target_list)
    return CalibrationResult(model, anchor_res, hit_res, tolerance)


# -- demand profiles -----------------------------------------------------------


def default_demand_profile() -> tuple[ModelKey, ...]:
    """Eight ranking models spread over retrieval/first/second stages."""
    return (
        ModelKey(1, "CVR", Stage.RETRIEVAL),
        ModelKey(2, "CTR", Stage.RETRIEVAL),
        ModelKey(3, "CVR", Stage.FIRST),
        ModelKey(4, "CVR", Stage.FIRST),
        ModelKey(5, "CTR", Stage.FIRST),
        ModelKey(6, "CTR", Stage.FIRST),
        ModelKey(7, "CTR", Stage.SECOND),
        ModelKey(8, "CVR", Stage.SECOND),
    )


def spread_demand_profile(num_models: int) -> tuple[ModelKey, ...]:
    """``num_models`` models alternating CVR/CTR, cycled across the stages."""
    stages = (Stage.RETRIEVAL, Stage.FIRST, Stage.SECOND)
    types = ("CVR", "CTR")
    return tuple(ModelKey(i + 1, types[i % 2], stages[i % 3])
                 for i in range(num_models))


def single_model_profile(model_id: int = 1, model_type: str = "CVR",
                         stage: Stage = Stage.FIRST) -> tuple[ModelKey, ...]:
    return (ModelKey(model_id, model_type, stage),)


def profile_catalog(profile: Sequence[ModelKey]) -> dict[int, ModelKey]:
    return {model.model_id: model for model in profile}


# -- traces ---------------------------------------------------------------------


def _stratified_classes(probs: Sequence[float], num_users: int) -> array:
    """Deterministic largest-remainder allocation of users to components.

    Proportional quotas remove the binomial variance in how much event mass
    each component carries, which matters because heavy components can have
    tiny user-level probabilities at desk scale.
    """
    quotas = [p * num_users for p in probs]
    counts = [int(q) for q in quotas]
    shortfall = num_users - sum(counts)
    by_remainder = sorted(range(len(probs)),
                          key=lambda k: (quotas[k] - counts[k], -k),
                          reverse=True)
    for k in by_remainder[:shortfall]:
        counts[k] += 1
    assignment = array("b") if len(probs) < 128 else array("i")
    for k, count in enumerate(counts):
        assignment.extend([k] * count)
    return assignment


class TraceEvent(NamedTuple):
    timestamp_ms: int
    request_id: int
    user: UserId
    demands: tuple[ModelKey, ...]


@dataclass
class Trace:
    """Column-oriented event trace, sorted by (timestamp, user).

    ``demands`` is one shared tuple applied to every event (the per-event CSV
    column still spells the ids out). Request ids are 1-based positions.
    """

    timestamps: array
    users: array
    demands: tuple[ModelKey, ...]
    horizon_ms: int = 0

    def __len__(self) -> int:
        return len(self.timestamps)

    def __iter__(self) -> Iterator[TraceEvent]:
        demands = self.demands
        for index, (ts, user) in enumerate(zip(self.timestamps, self.users)):
            yield TraceEvent(ts, index + 1, user, demands)

    def gaps_ms(self) -> list[int]:
        """Per-user consecutive gaps, pooled (order not meaningful)."""
        last_seen: dict[int, int] = {}
        gaps: list[int] = []
        for ts, user in zip(self.timestamps, self.users):
            prev = last_seen.get(user)
            if prev is not None:
                gaps.append(ts - prev)
            last_seen[user] = ts
        return gaps


def generate_trace(model: InterArrivalModel, num_users: int, horizon_ms: int,
                   demand_profile: Sequence[ModelKey], seed: int | str,
                   out_path: str | Path | None = None) -> Trace:
    """Generate per-user Poisson-class arrivals over ``[0, horizon_ms)``.

    Each user draws a component (and a rate multiplier when the model is
    heterogeneous) from a per-user substream seeded by ``(seed, user)``, so
    output is independent of generation order. Events are sorted by
    timestamp (ties by user id) and request ids assigned 1..N afterwards.
    """
    if num_users < 1:
        raise ValidationError("num_users must be >= 1")
    if horizon_ms <= 0:
        raise ValidationError("horizon_ms must be positive")
    demands = tuple(demand_profile)
    if not demands:
        raise ValidationError("demand profile must be nonempty")

    class_of_user = _stratified_classes(model.user_class_probs(), num_users)
    rates = model.rates_per_ms
    sigma = model.user_sigma

    ts_col = array("q")
    user_col = array("q")
    for user in range(1, num_users + 1):
        rng = random.Random(f"{seed}:user:{user}")
        rate = rates[class_of_user[user - 1]]
        if sigma > 0.0:
            rate *= math.exp(rng.gauss(-0.5 * sigma * sigma, sigma))
        expo = rng.expovariate
        t = expo(rate)
        while t < horizon_ms:
            ts_col.append(int(t))
            user_col.append(user)
            t += expo(rate)

    ts_np = np.frombuffer(ts_col, dtype=np.int64)
    user_np = np.frombuffer(user_col, dtype=np.int64)
    order = np.lexsort((user_np, ts_np))
    sorted_ts = array("q")
    sorted_users = array("q")
    sorted_ts.frombytes(ts_np[order].tobytes())
    sorted_users.frombytes(user_np[order].tobytes())

    trace = Trace(sorted_ts, sorted_users, demands, horizon_ms)
    if out_path is not None:
        write_trace_csv(trace, out_path)
    return trace


def write_trace_csv(trace: Trace, path: str | Path) -> None:
    """UTF-8, LF-terminated CSV: timestamp_ms,request_id,user_id,model_ids."""
    ids = ";".join(str(m.model_id) for m in trace.demands)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("timestamp_ms,request_id,user_id,model_ids\n")
        write = handle.write
        for index, (ts, user) in enumerate(zip(trace.timestamps, trace.users)):
            write(f"{ts},{index + 1},{user},{ids}\n")


class TraceParseError(ValueError):
    """A trace file line failed to parse; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def read_trace_csv(path: str | Path,
                   catalog: dict[int, ModelKey]) -> Trace:
    """Read a trace CSV back; model ids resolve through ``catalog``."""
    ts_col = array("q")
    user_col = array("q")
    demands_seen: dict[str, tuple[ModelKey, ...]] = {}
    shared: tuple[ModelKey, ...] | None = None
    last_ts = None
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["timestamp_ms", "request_id", "user_id", "model_ids"]:
            raise TraceParseError(1, f"bad header {header!r}")
        for line_number, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise TraceParseError(line_number, f"expected 4 fields, got {len(row)}")
            try:
                ts = int(row[0])
                user = int(row[2])
            except ValueError as exc:
                raise TraceParseError(line_number, str(exc)) from exc
            if user <= 0:
                raise TraceParseError(line_number, f"user_id must be positive, got {user}")
            if last_ts is not None and ts < last_ts:
                raise TraceParseError(line_number, "timestamps must be nondecreasing")
            last_ts = ts
            ids_text = row[3]
            demands = demands_seen.get(ids_text)
            if demands is None:
                try:
                    ids = [int(x) for x in ids_text.split(";") if x]
                except ValueError as exc:
                    raise TraceParseError(line_number, str(exc)) from exc
                if not ids:
                    raise TraceParseError(line_number, "empty model_ids")
                try:
                    demands = tuple(catalog[i] for i in ids)
                except KeyError as exc:
                    raise TraceParseError(line_number,
                                          f"model id {exc.args[0]} not in catalog") from exc
                demands_seen[ids_text] = demands
            if shared is None:
                shared = demands
            elif demands is not shared:
                raise TraceParseError(line_number,
                                      "mixed demand profiles are not supported")
            ts_col.append(ts)
            user_col.append(user)
    horizon = (ts_col[-1] + 1) if len(ts_col) else 0
    return Trace(ts_col, user_col, shared or (), horizon)
