"""Synthetic county data used across the test suite."""

from __future__ import annotations

import csv
import datetime as dt

import numpy as np
import yaml

from deidpolicy import CaseSeries, PopulationTable

SUNDAY = dt.date(2020, 8, 2)


def make_population(fips: str, total: int, hierarchy, rng,
                    concentration: float = 2.0) -> PopulationTable:
    probs = rng.dirichlet(np.full(hierarchy.n_bins, concentration))
    counts = rng.multinomial(total, probs).astype(np.int64)
    return PopulationTable(fips, counts, hierarchy)


def spike_series(fips: str, rng, weeks: int = 8, base: float = 2.0,
                 peak: float = 60.0, peak_week: float | None = None,
                 start: dt.date = SUNDAY) -> CaseSeries:
    days = weeks * 7
    if peak_week is None:
        peak_week = weeks / 2
    x = np.arange(days) / 7.0
    lam = base + peak * np.exp(-((x - peak_week) / 1.5) ** 2)
    counts = rng.poisson(lam).astype(np.int64)
    return CaseSeries(fips, "daily", start, counts)


def write_population_csv(path, pops: dict[str, PopulationTable], hierarchy):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fips", "age", "sex", "race", "ethnicity", "count"])
        na, nr, ns, ne = hierarchy.atom_sizes
        for fips in sorted(pops):
            counts = pops[fips].counts
            for idx in np.flatnonzero(counts):
                rem, e = divmod(int(idx), ne)
                rem, s = divmod(rem, ns)
                a, r = divmod(rem, nr)
                w.writerow([
                    fips, a, hierarchy.sex.atoms[s], hierarchy.race.atoms[r],
                    hierarchy.ethnicity.atoms[e], int(counts[idx]),
                ])


def write_cases_csv(path, series_list):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fips", "date", "new_cases"])
        for s in series_list:
            for t in range(len(s)):
                w.writerow([s.fips, s.date_at(t).isoformat(), int(s.counts[t])])


def write_forecasts_csv(path, forecasts: dict[str, dict[dt.date, int]]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fips", "week_start", "point_estimate"])
        for fips in sorted(forecasts):
            for day in sorted(forecasts[fips]):
                w.writerow([fips, day.isoformat(), forecasts[fips][day]])


def noisy_forecasts(series_list, rng, factor_lo=0.7, factor_hi=1.4):
    out = {}
    for s in series_list:
        weeks = {}
        for sunday in s.week_starts():
            lo, hi = s.week_slice(sunday)
            actual = int(s.counts[lo:hi].sum())
            weeks[sunday] = int(round(actual * rng.uniform(factor_lo, factor_hi)))
        out[s.fips] = weeks
    return out


def write_config(path, *, population, cases=None, forecasts=None, out="out",
                 seed=17, grid=None, params=None, **extra):
    doc = {"population": str(population), "out": str(out), "seed": seed}
    if cases:
        doc["cases"] = str(cases)
    if forecasts:
        doc["forecasts"] = str(forecasts)
    if grid:
        doc["grid"] = list(grid)
    if params:
        doc["params"] = dict(params)
    doc.update(extra)
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh)
    return path
