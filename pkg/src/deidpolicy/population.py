"""County population tables over atomic demographic bins.

The expected input is a long-format CSV with header
``fips,age,sex,race,ethnicity,count``: one row per occupied atomic bin, age
as an integer (the hierarchy's cap, 100 by default, means "that age and
older"), and category labels exactly as configured in the hierarchy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ValidationError
from .taxonomy import GeneralizationPolicy, GeneralizedKey, HierarchySet, key_labels, policy_key_index

REQUIRED_COLUMNS = ("fips", "age", "sex", "race", "ethnicity", "count")


@dataclass(frozen=True)
class AtomicBin:
    """One atomic demographic bin: exact age plus category labels."""

    age_year: int
    sex: str
    race: str
    ethnicity: str


class PopulationTable:
    """Immutable per-county resident counts over atomic bins.

    Counts are stored as a dense vector in the hierarchy's canonical bin
    order; bins absent from the source are zero.
    """

    def __init__(self, fips: str, counts: np.ndarray, hierarchy: HierarchySet):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (hierarchy.n_bins,):
            raise ValidationError(
                f"county {fips}: expected {hierarchy.n_bins} bin counts, got {counts.shape}"
            )
        if (counts < 0).any():
            raise ValidationError(f"county {fips}: negative population count")
        self.fips = fips
        self.hierarchy = hierarchy
        self._counts = counts
        self._counts.setflags(write=False)
        self.total = int(counts.sum())

    @property
    def counts(self) -> np.ndarray:
        return self._counts

    def bin_index(self, b: AtomicBin) -> int:
        h = self.hierarchy
        age = int(b.age_year)
        if not 0 <= age < len(h.age.atoms):
            raise ValidationError(f"age {age} outside 0..{len(h.age.atoms) - 1}")
        return h.bin_index(
            age, h.race.atom_index(b.race), h.sex.atom_index(b.sex),
            h.ethnicity.atom_index(b.ethnicity),
        )

    def count_of(self, b: AtomicBin) -> int:
        return int(self._counts[self.bin_index(b)])

    def __repr__(self):
        return f"PopulationTable(fips={self.fips!r}, total={self.total})"


def load_population(source, hierarchy: HierarchySet) -> dict[str, PopulationTable]:
    """Load one PopulationTable per county from a long-format CSV.

    ``source`` is a path or file-like object. Raises ValidationError on
    missing columns, unknown labels, out-of-range ages, negative or
    non-integer counts, and duplicate bins.
    """
    df = pd.read_csv(source, dtype={"fips": str})
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise ValidationError(f"population file missing columns: {missing}")
    if df["count"].isna().any():
        raise ValidationError("population file has empty counts")
    counts = df["count"].to_numpy()
    if not np.issubdtype(counts.dtype, np.integer):
        frac = counts != np.floor(counts)
        if frac.any():
            raise ValidationError(
                f"population counts must be integers (first bad row {int(np.argmax(frac)) + 2})"
            )
        counts = counts.astype(np.int64)
    if (counts < 0).any():
        bad = int(np.argmax(counts < 0)) + 2
        raise ValidationError(f"negative population count at row {bad}")

    ages = pd.to_numeric(df["age"], errors="coerce")
    if ages.isna().any() or (ages != np.floor(ages)).any():
        raise ValidationError("population ages must be integers")
    n_age = len(hierarchy.age.atoms)
    ages = ages.astype(np.int64).to_numpy()
    if ((ages < 0) | (ages >= n_age)).any():
        raise ValidationError(f"population ages must be within 0..{n_age - 1}")

    def codes(column: str, attr) -> np.ndarray:
        values = df[column].astype(str)
        lookup = {label: i for i, label in enumerate(attr.atoms)}
        unknown = sorted(set(values) - set(lookup))
        if unknown:
            raise ValidationError(
                f"unknown {column} labels {unknown}; accepted: {list(attr.atoms)}"
            )
        return values.map(lookup).to_numpy(dtype=np.int64)

    race = codes("race", hierarchy.race)
    sex = codes("sex", hierarchy.sex)
    eth = codes("ethnicity", hierarchy.ethnicity)

    na, nr, ns, ne = hierarchy.atom_sizes
    bin_idx = ((ages * nr + race) * ns + sex) * ne + eth

    tables: dict[str, PopulationTable] = {}
    for fips, group in df.assign(_bin=bin_idx, _count=counts).groupby("fips", sort=True):
        dup = group["_bin"].duplicated()
        if dup.any():
            row = group[dup].iloc[0]
            raise ValidationError(
                f"county {fips}: duplicate bin (age={row['age']}, sex={row['sex']}, "
                f"race={row['race']}, ethnicity={row['ethnicity']})"
            )
        vec = np.zeros(hierarchy.n_bins, dtype=np.int64)
        vec[group["_bin"].to_numpy()] = group["_count"].to_numpy()
        tables[str(fips)] = PopulationTable(str(fips), vec, hierarchy)
    return tables


def aggregate(pop: PopulationTable, policy: GeneralizationPolicy) -> dict[GeneralizedKey, int]:
    """Population counts per generalized key (occupied keys only)."""
    key_idx, n_keys = policy_key_index(policy)
    sums = np.bincount(key_idx, weights=pop.counts, minlength=n_keys).astype(np.int64)
    return {
        key_labels(policy, g): int(sums[g])
        for g in np.flatnonzero(sums)
    }


def population_group_size(pop: PopulationTable, policy: GeneralizationPolicy,
                          key: GeneralizedKey) -> int:
    """Residents matching ``key`` under ``policy``; 0 when the key is absent."""
    return aggregate(pop, policy).get(tuple(key), 0)
