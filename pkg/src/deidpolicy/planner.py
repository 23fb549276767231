"""Policy search, county categories, weekly selection, and evaluation.

The search finds, per county and policy, the smallest case volume on a
configured grid at which the policy's PK upper bound meets the threshold.
Selection then picks, at the start of each release week, the most preferred
policy whose minimal volume is covered by the week's (forecast or actual)
case statistic, withholding the release when none qualifies.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .errors import AlignmentError, ScheduleMismatchError, ValidationError
from .population import PopulationTable
from .risk import RiskParams, WEEKLY, meets_threshold, nearest_rank, summarize_matrix
from .series import CaseSeries, week_start
from .taxonomy import (
    GeneralizationPolicy,
    HierarchySet,
    generalizes,
    integer_level,
)

logger = logging.getLogger(__name__)

WITHHOLD = "WITHHOLD"

MIN_DAILY = "min_daily"
MIN_ROLLING_SUM = "min_rolling_sum"
WEEKLY_TOTAL = "weekly_total"


@dataclass(frozen=True)
class CountyCategory:
    """Half-open population interval [lower, upper)."""

    label: str
    lower: int
    upper: int | None

    def contains(self, total: int) -> bool:
        return total >= self.lower and (self.upper is None or total < self.upper)


CATEGORIES = (
    CountyCategory("<1,000", 1, 1_000),
    CountyCategory("1,000-50,000", 1_000, 50_000),
    CountyCategory("50,000-100,000", 50_000, 100_000),
    CountyCategory("100,000-1,000,000", 100_000, 1_000_000),
    CountyCategory(">1,000,000", 1_000_000, None),
)


def category_for(total: int, categories=CATEGORIES) -> CountyCategory | None:
    for cat in categories:
        if cat.contains(total):
            return cat
    return None


@dataclass(frozen=True)
class PreferenceRule:
    """Total order over policies: granularity-weighted score, then levels.

    A policy scores the weighted sum of (max_level - level) per attribute,
    so more granular policies score higher. Ties break toward the lower
    level in ``tie_order`` sequence.
    """

    weights: dict = field(
        default_factory=lambda: {"age": 4.0, "race": 3.0, "ethnicity": 2.0, "sex": 1.0}
    )
    tie_order: tuple = ("age", "race", "sex", "ethnicity")

    _ATTR_POS = {"age": 0, "race": 1, "sex": 2, "ethnicity": 3}

    def score(self, policy: GeneralizationPolicy) -> float:
        if policy.indices is None or policy.hierarchy is None:
            raise ValidationError("preference scoring requires a lattice policy")
        total = 0.0
        for name, pos in self._ATTR_POS.items():
            max_level = policy.hierarchy.attributes[pos].n_levels - 1
            total += self.weights.get(name, 0.0) * (max_level - policy.indices[pos])
        return total

    def sort_key(self, policy: GeneralizationPolicy) -> tuple:
        ties = tuple(-policy.indices[self._ATTR_POS[a]] for a in self.tie_order)
        return (self.score(policy),) + ties


@dataclass
class SearchTable:
    """Minimal qualifying case volume per policy, for one county or category."""

    scope: str
    grid: tuple[int, ...]
    entries: dict[str, int | None]  # policy code -> volume, None = never within grid
    params: dict
    skipped_volumes: tuple[int, ...] = ()

    def acceptable(self, statistic: int) -> list[str]:
        return [
            code for code, vol in self.entries.items()
            if vol is not None and vol <= statistic
        ]

    def to_dict(self) -> dict:
        return {
            "scope": self.scope,
            "grid": list(self.grid),
            "entries": dict(self.entries),
            "params": dict(self.params),
            "skipped_volumes": list(self.skipped_volumes),
            "rng": engine.RNG_ALGORITHM,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SearchTable":
        return cls(
            scope=doc["scope"],
            grid=tuple(int(v) for v in doc["grid"]),
            entries={k: (None if v is None else int(v)) for k, v in doc["entries"].items()},
            params=dict(doc["params"]),
            skipped_volumes=tuple(int(v) for v in doc.get("skipped_volumes", ())),
        )


@dataclass(frozen=True)
class ReleaseDecision:
    """The policy (or WITHHOLD) fixed for one county-week."""

    fips: str
    week_start: dt.date | None
    decision: str
    selection_statistic: int
    source: str


DEFAULT_GRID = (5, 11, 25, 50, 100, 250, 500, 1000, 2500, 5000, 10000, 25000)


def _assert_parent_closure(table: SearchTable, policies: list[GeneralizationPolicy]):
    # coarsening can only lower risk, so a coarser policy must qualify at a
    # volume no larger than any policy it generalizes
    by_code = {p.code: p for p in policies}
    inf = float("inf")
    for code_p, vol_p in table.entries.items():
        if vol_p is None:
            continue
        for code_q, vol_q in table.entries.items():
            vq = inf if vol_q is None else vol_q
            if vq > vol_p and generalizes(by_code[code_q], by_code[code_p]):
                raise AssertionError(
                    f"{table.scope}: parent closure violated: {code_q} "
                    f"({vol_q}) vs {code_p} ({vol_p})"
                )


def search_county(pop: PopulationTable, policies: list[GeneralizationPolicy],
                  grid, params: RiskParams, seed: int) -> SearchTable:
    """Minimal qualifying volume per policy for one county.

    Runs ``params.n_replicates`` shared single draws per grid volume, takes
    the nearest-rank upper bound of the PK values, and records the first
    volume whose bound meets the threshold. Volumes beyond the county
    population are skipped with a warning.
    """
    volumes = tuple(int(v) for v in grid)
    if list(volumes) != sorted(set(volumes)) or (volumes and volumes[0] < 1):
        raise ValidationError("grid must be ascending positive case volumes")
    skipped = tuple(v for v in volumes if v > pop.total)
    if skipped:
        logger.warning(
            "county %s: skipping grid volumes %s above population %d",
            pop.fips, list(skipped), pop.total,
        )
    key_mat, n_keys = engine.key_index_matrix(policies)
    risks = engine.pk_search_matrix(
        pop, key_mat, n_keys, volumes, params.k, params.n_replicates, seed
    )
    tail = (1.0 - params.quantile_range) / 2.0
    order = np.sort(risks, axis=0)
    uppers = np.array([
        [nearest_rank(order[:, vi, j], 1.0 - tail) for j in range(order.shape[2])]
        for vi in range(order.shape[1])
    ])  # (volumes, policies)

    met = np.zeros_like(uppers, dtype=bool)
    feasible = np.asarray([v <= pop.total for v in volumes])
    met[feasible] = uppers[feasible] <= params.threshold
    # a policy qualifying at volume v qualifies at every larger volume
    met = np.logical_or.accumulate(met, axis=0)

    entries: dict[str, int | None] = {}
    for j, p in enumerate(policies):
        hit = np.flatnonzero(met[:, j])
        entries[p.code] = int(volumes[hit[0]]) if hit.size else None
    table = SearchTable(
        scope=pop.fips, grid=volumes, entries=entries,
        params=params.snapshot(), skipped_volumes=skipped,
    )
    _assert_parent_closure(table, policies)
    return table


def summarize_by_category(tables: dict[str, SearchTable],
                          totals: dict[str, int],
                          categories=CATEGORIES) -> dict[str, SearchTable]:
    """Combine county tables: a category entry is the worst member entry.

    A policy qualifies for a category at volume v only when it qualifies at
    v in every member county; counties with zero population are excluded
    with a warning.
    """
    members: dict[str, list[str]] = {}
    for fips, table in tables.items():
        total = totals.get(fips)
        if total is None:
            raise ValidationError(f"no population total for county {fips}")
        cat = category_for(total, categories)
        if cat is None:
            logger.warning("county %s has zero population; excluded", fips)
            continue
        members.setdefault(cat.label, []).append(fips)

    out: dict[str, SearchTable] = {}
    for label, fips_list in sorted(members.items()):
        first = tables[fips_list[0]]
        entries: dict[str, int | None] = {}
        skipped: set[int] = set()
        for fips in fips_list:
            table = tables[fips]
            if table.grid != first.grid:
                raise ValidationError(
                    f"county {fips} searched a different grid than {fips_list[0]}"
                )
            skipped.update(table.skipped_volumes)
        for code in first.entries:
            worst: int | None = 0
            for fips in fips_list:
                vol = tables[fips].entries.get(code)
                if vol is None:
                    worst = None
                    break
                worst = max(worst, vol)
            entries[code] = worst
        out[label] = SearchTable(
            scope=label, grid=first.grid, entries=entries,
            params=dict(first.params), skipped_volumes=tuple(sorted(skipped)),
        )
    return out


def distribute_weekly_forecast(weekly_point: int) -> np.ndarray:
    """Spread a weekly point estimate uniformly over 7 days, Sunday first.

    Each day gets the integer share; the remainder goes one case at a time
    to the earliest days. The total is conserved exactly.
    """
    w = int(weekly_point)
    if w < 0:
        raise ValidationError("weekly point estimate must be nonnegative")
    base, extra = divmod(w, 7)
    out = np.full(7, base, dtype=np.int64)
    out[:extra] += 1
    return out


def weekly_selection_statistic(history, week_forecast, mode: str,
                               lag: int | None = None) -> int:
    """Case-volume statistic used to pick the week's policy.

    ``history`` holds actual daily counts for the days before the week
    (needed for rolling sums), ``week_forecast`` the predicted daily counts
    of the week ahead.
    """
    forecast = np.asarray(week_forecast, dtype=np.int64)
    if forecast.size == 0 or forecast.size > 7:
        raise ValidationError("week_forecast must hold 1..7 daily counts")
    if (forecast < 0).any():
        raise ValidationError("forecast counts must be nonnegative")
    if mode == MIN_DAILY:
        return int(forecast.min())
    if mode == WEEKLY_TOTAL:
        return int(forecast.sum())
    if mode == MIN_ROLLING_SUM:
        if lag is None or lag < 1:
            raise ValidationError("min_rolling_sum requires the lagging-window length")
        hist = np.asarray(history, dtype=np.int64)
        if hist.size < lag - 1:
            raise ValidationError(
                f"min_rolling_sum needs {lag - 1} trailing days of history, "
                f"got {hist.size}"
            )
        seq = np.concatenate([hist[hist.size - (lag - 1):], forecast])
        sums = [int(seq[i:i + lag].sum()) for i in range(forecast.size)]
        return min(sums)
    raise ValidationError(f"unknown selection statistic mode {mode!r}")


def statistic_mode(params: RiskParams) -> str:
    if params.schedule == WEEKLY:
        return WEEKLY_TOTAL
    return MIN_DAILY if params.lagging_days == 1 else MIN_ROLLING_SUM


def select_policy(table: SearchTable, statistic: int, pref: PreferenceRule,
                  policies_by_code: dict[str, GeneralizationPolicy],
                  fips: str | None = None, week: dt.date | None = None,
                  source: str = "forecast") -> ReleaseDecision:
    """Most preferred policy whose minimal volume the statistic covers."""
    acceptable = table.acceptable(statistic)
    if acceptable:
        best = max((policies_by_code[c] for c in acceptable), key=pref.sort_key)
        decision = best.code
    else:
        decision = WITHHOLD
    return ReleaseDecision(
        fips=fips or table.scope,
        week_start=week,
        decision=decision,
        selection_statistic=int(statistic),
        source=source,
    )


def _zero_padded_history(counts: np.ndarray, upto: int, need: int) -> np.ndarray:
    # days before the series start are treated as zero-case days
    have = counts[max(0, upto - need):upto]
    if have.size < need:
        have = np.concatenate([np.zeros(need - have.size, dtype=np.int64), have])
    return have


def plan_decisions(table: SearchTable, actual: CaseSeries, params: RiskParams,
                   pref: PreferenceRule, policies_by_code: dict,
                   source: str, forecasts: dict[dt.date, int] | None = None,
                   ) -> list[ReleaseDecision]:
    """One decision per week of the series, forecast- or actual-driven.

    Forecast mode distributes each week's point estimate uniformly over the
    days; actual mode replaces the predictions with the reported counts
    (the perfect-forecast comparison).
    """
    mode = statistic_mode(params)
    lag = params.lagging_days
    decisions = []
    for sunday in actual.week_starts():
        lo, hi = actual.week_slice(sunday)
        if params.schedule == WEEKLY:
            if source == "actual":
                stat = int(actual.counts[lo:hi].sum()) if hi > lo else 0
            else:
                stat = _forecast_for(forecasts, actual.fips, sunday)
        else:
            if source == "actual":
                week_days = actual.counts[lo:hi]
            else:
                point = _forecast_for(forecasts, actual.fips, sunday)
                # keep only the week's days the series actually covers
                first = max((actual.start - sunday).days, 0)
                week_days = distribute_weekly_forecast(point)[first:first + (hi - lo)]
            history = _zero_padded_history(actual.counts, lo, max(lag - 1, 0))
            stat = weekly_selection_statistic(history, week_days, mode, lag=lag)
        decisions.append(select_policy(
            table, stat, pref, policies_by_code,
            fips=actual.fips, week=sunday, source=source,
        ))
    return decisions


def _forecast_for(forecasts, fips: str, sunday: dt.date) -> int:
    if not forecasts or sunday not in forecasts:
        raise AlignmentError(
            f"county {fips}: no forecast for week starting {sunday.isoformat()}"
        )
    return int(forecasts[sunday])


@dataclass
class ReleaseRow:
    """Risk outcome of one scheduled release period."""

    fips: str
    date: dt.date
    policy: str
    n_cases: int
    mean: float | None
    lower: float | None
    upper: float | None
    meets: bool | None
    n_evaluable: int


@dataclass
class EvaluationReport:
    """Per-release outcomes plus the county's meets-threshold proportion."""

    fips: str
    schedule: str
    rows: list[ReleaseRow]
    n_releases: int
    n_meeting: int

    @property
    def proportion(self) -> float | None:
        if self.n_releases == 0:
            return None
        return self.n_meeting / self.n_releases


def evaluate_sequence(decisions: list[ReleaseDecision], actual: CaseSeries,
                      pop: PopulationTable, params: RiskParams,
                      policies_by_code: dict[str, GeneralizationPolicy],
                      seed: int, withhold_meets: bool = True) -> EvaluationReport:
    """Simulate the actual series and score each release under its decision.

    Releases with zero records are not evaluable. Withheld periods with
    cases disclose nothing and count as meeting the threshold by default
    (set ``withhold_meets=False`` to count them as failures instead).
    """
    if actual.periodicity != params.schedule:
        raise ScheduleMismatchError(
            f"county {actual.fips}: {actual.periodicity} series evaluated "
            f"under a {params.schedule} schedule"
        )
    if actual.fips != pop.fips:
        raise AlignmentError(
            f"series county {actual.fips} does not match population {pop.fips}"
        )
    by_week = {}
    for d in decisions:
        if d.fips != actual.fips:
            raise AlignmentError(
                f"decision for county {d.fips} applied to series {actual.fips}"
            )
        by_week[d.week_start] = d

    needed = actual.week_starts()
    missing = [w for w in needed if w not in by_week]
    if missing:
        raise AlignmentError(
            f"county {actual.fips}: no decision for week starting "
            f"{missing[0].isoformat()}"
        )

    codes = sorted({
        by_week[w].decision for w in needed if by_week[w].decision != WITHHOLD
    })
    unknown = [c for c in codes if c not in policies_by_code]
    if unknown:
        raise ValidationError(f"decisions reference unknown policies {unknown}")

    lag = params.lagging_days if params.schedule != WEEKLY else 1
    summaries = {}
    if codes:
        key_mat, n_keys = engine.key_index_matrix([policies_by_code[c] for c in codes])
        risks = engine.pk_series_matrix(
            pop, actual, key_mat, n_keys, params.k, lag, params.lag_offset,
            params.n_replicates, seed,
        )
        for j, code in enumerate(codes):
            summaries[code] = summarize_matrix(risks[:, j, :], params.quantile_range)

    rows = []
    n_releases = 0
    n_meeting = 0
    for t in range(len(actual)):
        date = actual.date_at(t)
        decision = by_week[week_start(date)].decision
        n_cases = int(actual.counts[t])
        if n_cases == 0:
            rows.append(ReleaseRow(actual.fips, date, decision, 0,
                                   None, None, None, None, 0))
            continue
        n_releases += 1
        if decision == WITHHOLD:
            meets = withhold_meets
            rows.append(ReleaseRow(actual.fips, date, WITHHOLD, n_cases,
                                   None, None, None, meets, 0))
        else:
            dist = summaries[decision]
            upper = float(dist.upper[t])
            meets = meets_threshold(upper, params)
            rows.append(ReleaseRow(
                actual.fips, date, decision, n_cases,
                float(dist.mean[t]), float(dist.lower[t]), upper, meets,
                int(dist.n_evaluable[t]),
            ))
        if meets:
            n_meeting += 1
    return EvaluationReport(actual.fips, params.schedule, rows, n_releases, n_meeting)


def policy_risk_profiles(pop: PopulationTable, series: CaseSeries,
                         policies: list[GeneralizationPolicy],
                         params: RiskParams, seed: int) -> dict:
    """Longitudinal risk distribution per policy over the series."""
    key_mat, n_keys = engine.key_index_matrix(policies)
    lag = params.lagging_days if params.schedule != WEEKLY else 1
    risks = engine.pk_series_matrix(
        pop, series, key_mat, n_keys, params.k, lag, params.lag_offset,
        params.n_replicates, seed,
    )
    return {
        p.code: summarize_matrix(risks[:, j, :], params.quantile_range)
        for j, p in enumerate(policies)
    }


def builtin_k_anonymous_policy(hierarchy: HierarchySet) -> GeneralizationPolicy:
    """The static baseline: age 0-17/18-49/50-64/65+, all else fully shared.

    Modeled on retrospective k-anonymization practice for public surveillance
    releases; returned as a custom-leveled policy usable anywhere a lattice
    policy is, under the code ``kAse``-style (custom age symbol ``k``).
    """
    n_age = len(hierarchy.age.atoms)
    age_level = integer_level("k", n_age, breaks=[0, 18, 50, 65])
    levels = (
        age_level,
        hierarchy.race.levels[0],
        hierarchy.sex.levels[0],
        hierarchy.ethnicity.levels[0],
    )
    code = "".join(lv.symbol for lv in levels)
    return GeneralizationPolicy(levels=levels, code=code)
