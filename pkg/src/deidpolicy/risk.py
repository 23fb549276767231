"""PK re-identification risk, marketer risk, and replicate summaries.

PK risk of a released batch is the fraction of its records whose group
(records matching on all generalized demographics, diagnosed within the
lagging window) is smaller than k. Risk is computed from generalized key
counts only; individuals are never materialized.

These are the readable reference implementations; the engine's bulk paths in
``_kernels_impl`` compute the same integer ratios and match them exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .errors import ScheduleMismatchError, ValidationError
from .population import PopulationTable, aggregate
from .taxonomy import GeneralizationPolicy, GeneralizedKey, policy_key_index

DAILY = "daily"
WEEKLY = "weekly"


@dataclass(frozen=True)
class RiskParams:
    """Risk-measure and simulation parameters.

    ``lag_offset`` slides the attacker's window: day t's window covers
    release days [t - lagging_days + 1 + lag_offset, t + lag_offset], so 0
    is a trailing window and lagging_days - 1 a leading one.
    """

    k: int = 11
    threshold: float = 0.01
    lagging_days: int = 1
    lag_offset: int = 0
    schedule: str = DAILY
    n_replicates: int = 1000
    quantile_range: float = 0.95

    def __post_init__(self):
        if self.k < 2:
            raise ValidationError("k must be >= 2")
        if not 0.0 < self.threshold < 1.0:
            raise ValidationError("threshold must be in (0, 1)")
        if self.lagging_days < 1:
            raise ValidationError("lagging_days must be >= 1")
        if not 0 <= self.lag_offset < self.lagging_days:
            raise ValidationError("lag_offset must be in [0, lagging_days)")
        if self.schedule not in (DAILY, WEEKLY):
            raise ValidationError(f"schedule must be {DAILY!r} or {WEEKLY!r}")
        if self.n_replicates < 1:
            raise ValidationError("n_replicates must be >= 1")
        if not 0.0 <= self.quantile_range <= 1.0:
            raise ValidationError("quantile_range must be in [0, 1]")

    def snapshot(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RiskDistribution:
    """Per-release-time summary of per-replicate risk values.

    Arrays are indexed by release time; times with no released records carry
    NaN and ``n_evaluable`` 0.
    """

    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_evaluable: np.ndarray

    def __len__(self):
        return len(self.mean)


def nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    """Nearest-rank (type 1) empirical quantile of pre-sorted values."""
    n = len(sorted_values)
    # small slack so exact products like 0.025*1000 do not ceil one rank up
    rank = max(1, math.ceil(q * n - 1e-9))
    return float(sorted_values[min(rank, n) - 1])


def summarize(values, coverage: float = 0.95) -> tuple[float, float, float]:
    """Mean plus nearest-rank central quantile bounds of replicate values."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("summarize() requires at least one value")
    if not 0.0 <= coverage <= 1.0:
        raise ValidationError("coverage must be in [0, 1]")
    tail = (1.0 - coverage) / 2.0
    ordered = np.sort(arr)
    return (float(arr.mean()), nearest_rank(ordered, tail), nearest_rank(ordered, 1.0 - tail))


def summarize_matrix(values: np.ndarray, coverage: float = 0.95) -> RiskDistribution:
    """Summarize a (replicates, times) risk matrix; NaN columns = no release."""
    values = np.asarray(values, dtype=np.float64)
    n_reps, n_times = values.shape
    mean = np.full(n_times, np.nan)
    lower = np.full(n_times, np.nan)
    upper = np.full(n_times, np.nan)
    n_eval = np.zeros(n_times, dtype=np.int64)
    tail = (1.0 - coverage) / 2.0
    for t in range(n_times):
        col = values[:, t]
        if np.isnan(col).all():
            continue
        if np.isnan(col).any():
            raise ValidationError("risk matrix mixes released and empty replicates")
        ordered = np.sort(col)
        mean[t] = col.mean()
        lower[t] = nearest_rank(ordered, tail)
        upper[t] = nearest_rank(ordered, 1.0 - tail)
        n_eval[t] = n_reps
    return RiskDistribution(mean, lower, upper, n_eval)


def meets_threshold(dist_upper: float, params: RiskParams) -> bool:
    """True iff the upper bound is at or below the acceptable risk."""
    return dist_upper <= params.threshold


def pk_risk_profile(key_counts: np.ndarray, k: int, lag: int = 1,
                    lag_offset: int = 0) -> np.ndarray:
    """Per-time PK risk from a (times, keys) count matrix; NaN = no release."""
    key_counts = np.asarray(key_counts, dtype=np.int64)
    n_times = key_counts.shape[0]
    out = np.full(n_times, np.nan)
    for t in range(n_times):
        released = key_counts[t]
        n_t = int(released.sum())
        if n_t == 0:
            continue
        lo = max(0, t - lag + 1 + lag_offset)
        hi = min(n_times, t + lag_offset + 1)
        window = key_counts[lo:hi].sum(axis=0)
        out[t] = int(released[window < k].sum()) / n_t
    return out


def _trace_key_counts(trace, policy: GeneralizationPolicy) -> np.ndarray:
    key_idx, n_keys = policy_key_index(policy)
    counts = np.asarray(trace.counts)
    if counts.shape[1] != len(key_idx):
        raise ValidationError("trace bins do not match the policy's atomic domain")
    out = np.empty((counts.shape[0], n_keys), dtype=np.int64)
    for t in range(counts.shape[0]):
        out[t] = np.bincount(key_idx, weights=counts[t], minlength=n_keys)
    return out


def pk_risk_at(trace, t: int, policy: GeneralizationPolicy,
               params: RiskParams) -> float | None:
    """PK risk of the day-t release under a lagging-window attacker.

    Returns None when nothing is released at t. The trace and the params
    must both use the daily schedule.
    """
    if params.schedule != DAILY or trace.periodicity != DAILY:
        raise ScheduleMismatchError("pk_risk_at requires a daily schedule and trace")
    if not 0 <= t < trace.counts.shape[0]:
        raise ValidationError(f"time index {t} outside trace")
    profile = pk_risk_profile(
        _trace_key_counts(trace, policy), params.k,
        params.lagging_days, params.lag_offset,
    )
    return None if np.isnan(profile[t]) else float(profile[t])


def pk_risk_weekly(trace, week_index: int, policy: GeneralizationPolicy,
                   params: RiskParams) -> float | None:
    """PK risk of one weekly release; groups form within the week only."""
    if params.schedule != WEEKLY or trace.periodicity != WEEKLY:
        raise ScheduleMismatchError("pk_risk_weekly requires a weekly schedule and trace")
    if not 0 <= week_index < trace.counts.shape[0]:
        raise ValidationError(f"week index {week_index} outside trace")
    profile = pk_risk_profile(_trace_key_counts(trace, policy), params.k, lag=1)
    return None if np.isnan(profile[week_index]) else float(profile[week_index])


def marketer_risk(sample: Mapping[GeneralizedKey, int], pop: PopulationTable,
                  policy: GeneralizationPolicy) -> float:
    """Expected fraction of sampled records re-identified by population matching.

    Each record's re-identification probability is 1 over its population
    group size, so the risk is (1/n) * sum over keys of count/F_key.
    """
    group_sizes = aggregate(pop, policy)
    n = 0
    hits = 0.0
    for key, count in sample.items():
        if count < 0:
            raise ValidationError("negative sample count")
        if count == 0:
            continue
        size = group_sizes.get(tuple(key), 0)
        if size < count:
            raise ValidationError(
                f"sample of {count} exceeds population group of {size} for key {key}"
            )
        n += count
        hits += count / size
    if n == 0:
        raise ValidationError("marketer_risk requires a nonempty sample")
    return hits / n
