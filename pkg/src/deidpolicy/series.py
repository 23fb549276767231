"""Case-count time series and forecast ingestion.

Case series CSV: header ``fips,date,new_cases``, ISO-8601 dates, one row per
period, contiguous within each county. Weekly series rows carry the Sunday
that starts the week (weeks run Sunday through Saturday).

Forecast CSV: header ``fips,week_start,point_estimate`` with ``week_start``
a Sunday.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ValidationError

DAILY = "daily"
WEEKLY = "weekly"


def week_start(day: dt.date) -> dt.date:
    """The Sunday starting the week that contains ``day``."""
    return day - dt.timedelta(days=(day.weekday() + 1) % 7)


def is_sunday(day: dt.date) -> bool:
    return day.weekday() == 6


@dataclass(frozen=True)
class CaseSeries:
    """New reported cases per period for one county."""

    fips: str
    periodicity: str
    start: dt.date
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if (counts < 0).any():
            raise ValidationError(f"county {self.fips}: negative case count")
        if self.periodicity not in (DAILY, WEEKLY):
            raise ValidationError(f"periodicity must be {DAILY!r} or {WEEKLY!r}")
        if self.periodicity == WEEKLY and not is_sunday(self.start):
            raise ValidationError(
                f"county {self.fips}: weekly series must start on a Sunday "
                f"(got {self.start.isoformat()})"
            )
        object.__setattr__(self, "counts", counts)

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def step(self) -> dt.timedelta:
        return dt.timedelta(days=1 if self.periodicity == DAILY else 7)

    def date_at(self, t: int) -> dt.date:
        return self.start + self.step * t

    @property
    def end(self) -> dt.date:
        return self.date_at(len(self) - 1)

    def index_of(self, day: dt.date) -> int:
        delta = (day - self.start).days
        step = 1 if self.periodicity == DAILY else 7
        if delta % step or not 0 <= delta // step < len(self):
            raise ValidationError(f"{day.isoformat()} not in series for county {self.fips}")
        return delta // step

    def total(self) -> int:
        return int(self.counts.sum())

    def week_starts(self) -> list[dt.date]:
        """Sundays of every week the series overlaps, in order."""
        first = week_start(self.start)
        out = []
        cur = first
        while cur <= self.end:
            out.append(cur)
            cur += dt.timedelta(days=7)
        return out

    def week_slice(self, sunday: dt.date) -> tuple[int, int]:
        """Index range [lo, hi) of periods falling in the given week."""
        if self.periodicity == WEEKLY:
            try:
                i = self.index_of(sunday)
            except ValidationError:
                return (0, 0)
            return (i, i + 1)
        lo = max((sunday - self.start).days, 0)
        hi = min((sunday + dt.timedelta(days=7) - self.start).days, len(self))
        return (lo, max(lo, hi))


def _parse_dates(raw: pd.Series, context: str) -> list[dt.date]:
    out = []
    for v in raw:
        try:
            out.append(dt.date.fromisoformat(str(v)))
        except ValueError:
            raise ValidationError(f"{context}: invalid ISO date {v!r}") from None
    return out


def load_case_series(source, periodicity: str | None = None) -> dict[str, CaseSeries]:
    """Load per-county case series, inferring periodicity when not given."""
    df = pd.read_csv(source, dtype={"fips": str})
    missing = [c for c in ("fips", "date", "new_cases") if c not in df.columns]
    if missing:
        raise ValidationError(f"case series file missing columns: {missing}")
    cases = pd.to_numeric(df["new_cases"], errors="coerce")
    if cases.isna().any() or (cases != np.floor(cases)).any():
        raise ValidationError("new_cases must be integers")
    df = df.assign(new_cases=cases.astype(np.int64))

    out: dict[str, CaseSeries] = {}
    for fips, group in df.groupby("fips", sort=True):
        dates = _parse_dates(group["date"], f"county {fips}")
        order = np.argsort(np.array([d.toordinal() for d in dates]))
        dates = [dates[i] for i in order]
        counts = group["new_cases"].to_numpy()[order]
        if len(set(dates)) != len(dates):
            raise ValidationError(f"county {fips}: duplicate dates in case series")
        if len(dates) > 1:
            step = (dates[1] - dates[0]).days
            if step not in (1, 7):
                raise ValidationError(
                    f"county {fips}: dates advance by {step} days; expected 1 or 7"
                )
            for a, b in zip(dates, dates[1:]):
                if (b - a).days != step:
                    raise ValidationError(
                        f"county {fips}: gap in case series at {b.isoformat()}"
                    )
            inferred = DAILY if step == 1 else WEEKLY
        else:
            inferred = periodicity or DAILY
        if periodicity and inferred != periodicity:
            raise ValidationError(
                f"county {fips}: series is {inferred}, expected {periodicity}"
            )
        out[str(fips)] = CaseSeries(str(fips), inferred, dates[0], counts)
    return out


def load_forecasts(source) -> dict[str, dict[dt.date, int]]:
    """Load weekly point forecasts: county -> week Sunday -> cases.

    Point estimates may be fractional in the source; they are rounded to the
    nearest whole case.
    """
    df = pd.read_csv(source, dtype={"fips": str})
    missing = [c for c in ("fips", "week_start", "point_estimate") if c not in df.columns]
    if missing:
        raise ValidationError(f"forecast file missing columns: {missing}")
    points = pd.to_numeric(df["point_estimate"], errors="coerce")
    if points.isna().any() or (points < 0).any():
        raise ValidationError("point_estimate must be a nonnegative number")

    out: dict[str, dict[dt.date, int]] = {}
    for (fips, raw_date), value in zip(
        zip(df["fips"], df["week_start"]), points
    ):
        day = _parse_dates(pd.Series([raw_date]), f"county {fips}")[0]
        if not is_sunday(day):
            raise ValidationError(
                f"county {fips}: forecast week must start Sunday, got {day.isoformat()} "
                f"({day.strftime('%A')})"
            )
        weeks = out.setdefault(str(fips), {})
        if day in weeks:
            raise ValidationError(
                f"county {fips}: duplicate forecast for week {day.isoformat()}"
            )
        weeks[day] = int(round(float(value)))
    return out
