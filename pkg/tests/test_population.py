import io

import numpy as np
import pytest

from deidpolicy import (
    AtomicBin,
    PopulationTable,
    ValidationError,
    aggregate,
    load_population,
    parse_policy_code,
    population_group_size,
)

HEADER = "fips,age,sex,race,ethnicity,count\n"


def _load(hierarchy, rows: str):
    return load_population(io.StringIO(HEADER + rows), hierarchy)


def test_load_echo(hierarchy):
    tables = _load(hierarchy, "47037,42,Female,White,Non-Hispanic,310\n")
    pop = tables["47037"]
    assert pop.count_of(AtomicBin(42, "Female", "White", "Non-Hispanic")) == 310
    assert pop.total == 310


def test_duplicate_bin_rejected(hierarchy):
    rows = ("47037,42,Female,White,Non-Hispanic,310\n"
            "47037,42,Female,White,Non-Hispanic,5\n")
    with pytest.raises(ValidationError, match="duplicate bin"):
        _load(hierarchy, rows)


def test_negative_count_rejected(hierarchy):
    with pytest.raises(ValidationError, match="negative"):
        _load(hierarchy, "47037,42,Female,White,Non-Hispanic,-1\n")


def test_fractional_count_rejected(hierarchy):
    with pytest.raises(ValidationError, match="integers"):
        _load(hierarchy, "47037,42,Female,White,Non-Hispanic,3.5\n")


def test_unknown_label_lists_accepted(hierarchy):
    with pytest.raises(ValidationError, match="accepted.*White"):
        _load(hierarchy, "47037,42,Female,Purple,Non-Hispanic,3\n")


def test_age_out_of_range(hierarchy):
    with pytest.raises(ValidationError, match="0..100"):
        _load(hierarchy, "47037,150,Female,White,Non-Hispanic,3\n")


def test_missing_column(hierarchy):
    with pytest.raises(ValidationError, match="missing columns"):
        load_population(io.StringIO("fips,age,count\n1,2,3\n"), hierarchy)


def test_multi_county_split(hierarchy):
    rows = ("47037,42,Female,White,Non-Hispanic,10\n"
            "47001,42,Female,White,Non-Hispanic,20\n")
    tables = _load(hierarchy, rows)
    assert sorted(tables) == ["47001", "47037"]
    assert tables["47001"].total == 20


def test_aggregate_additivity(hierarchy):
    rows = ("47037,40,Male,White,Non-Hispanic,5\n"
            "47037,41,Male,White,Non-Hispanic,7\n")
    pop = _load(hierarchy, rows)["47037"]
    agg = aggregate(pop, parse_policy_code("2Ase", hierarchy))
    assert agg[("40-44", "White", "Male", "Non-Hispanic")] == 12


def test_aggregate_suppressed_single_key(hierarchy, small_pop):
    agg = aggregate(small_pop, parse_policy_code("****", hierarchy))
    assert agg == {("*", "*", "*", "*"): small_pop.total}


def test_conservation_all_policies(hierarchy, small_pop, policies):
    for p in policies:
        assert sum(aggregate(small_pop, p).values()) == small_pop.total


def test_coarsening_additivity(hierarchy, small_pop):
    from deidpolicy.taxonomy import key_labels, policy_key_index

    fine = parse_policy_code("2Bse", hierarchy)
    coarse = parse_policy_code("4C*e", hierarchy)
    fine_idx, n_fine = policy_key_index(fine)
    coarse_idx, n_coarse = policy_key_index(coarse)
    # re-aggregating the fine keys through the coarse partitions must equal
    # aggregating the atomic bins directly
    fine_counts = np.bincount(fine_idx, weights=small_pop.counts, minlength=n_fine)
    fine_to_coarse = {}
    for b in range(len(fine_idx)):
        fk, ck = int(fine_idx[b]), int(coarse_idx[b])
        assert fine_to_coarse.setdefault(fk, ck) == ck  # key-merging again
    rebuilt_counts = np.zeros(n_coarse)
    for fk, ck in fine_to_coarse.items():
        rebuilt_counts[ck] += fine_counts[fk]
    coarse_agg = aggregate(small_pop, coarse)
    for g in np.flatnonzero(rebuilt_counts):
        assert coarse_agg[key_labels(coarse, int(g))] == int(rebuilt_counts[g])


def test_group_size_examples(hierarchy, small_pop):
    star = parse_policy_code("****", hierarchy)
    assert population_group_size(small_pop, star, ("*", "*", "*", "*")) == small_pop.total
    fine = parse_policy_code("1Ase", hierarchy)
    assert population_group_size(small_pop, fine, ("199", "White", "Female", "Non-Hispanic")) == 0


def test_group_size_single_bin_county(hierarchy):
    counts = np.zeros(hierarchy.n_bins, dtype=np.int64)
    counts[hierarchy.bin_index(30, 0, 0, 0)] = 8
    pop = PopulationTable("47175", counts, hierarchy)
    fine = parse_policy_code("1Ase", hierarchy)
    key = ("30", "White", "Female", "Hispanic-Latino")
    assert population_group_size(pop, fine, key) == 8


def test_counts_are_read_only(small_pop):
    with pytest.raises(ValueError):
        small_pop.counts[0] = 99
