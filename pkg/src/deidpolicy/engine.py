"""Monte Carlo case-reporting engine.

Cases are sampled without replacement from the county's uninfected
population at atomic-bin granularity. Randomness comes from the Philox4x64
counter-based generator: the key is derived from (seed, county), and the
256-bit counter encodes (stream, replicate), so every replicate owns an
independent stream and can run in any order, on any worker, with identical
results. Stream 0 feeds depleting series simulation; streams 1+i feed the
policy search's single draws at grid volume i.
"""

from __future__ import annotations

import datetime as dt
import hashlib
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from ._kernels import kernels as K
from .errors import InsufficientPopulationError, ValidationError
from .population import PopulationTable
from .series import CaseSeries

RNG_ALGORITHM = "philox4x64-10"

# counter words: [block (advances as values are drawn), stream, replicate, 0]
EVAL_STREAM = 0
SEARCH_STREAM_BASE = 1

_MAX_POP = 2**31 - 1  # individuals are indexed with int32


def _fips_entropy(fips: str) -> int:
    text = str(fips)
    if text.isdigit():
        return int(text)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stream_key(seed: int, fips: str) -> np.ndarray:
    """Philox key for one county's streams."""
    if seed < 0:
        raise ValidationError("seed must be a nonnegative integer")
    return SeedSequence([int(seed), _fips_entropy(fips)]).generate_state(2, np.uint64)


def replicate_rng(seed: int, fips: str, replicate_index: int,
                  stream: int = EVAL_STREAM) -> Generator:
    """Generator over one replicate's dedicated Philox stream."""
    if replicate_index < 0 or stream < 0:
        raise ValidationError("replicate_index and stream must be nonnegative")
    bitgen = Philox(key=stream_key(seed, fips), counter=[0, stream, replicate_index, 0])
    return Generator(bitgen)


def _pool_cum(pool: np.ndarray) -> np.ndarray:
    pool = np.asarray(pool, dtype=np.int64)
    if pool.ndim != 1:
        raise ValidationError("pool must be a 1-d count vector")
    if (pool < 0).any():
        raise ValidationError("pool counts must be nonnegative")
    cum = np.cumsum(pool)
    if pool.size and cum[-1] > _MAX_POP:
        raise ValidationError(f"population above {_MAX_POP} is not supported")
    return cum


def draw_without_replacement(pool, n: int, rng: Generator) -> np.ndarray:
    """Multivariate hypergeometric draw of ``n`` individuals from ``pool``.

    ``pool`` is a vector of per-bin counts; the result has the same shape
    with per-bin draws summing to ``n``.
    """
    cum = _pool_cum(pool)
    total = int(cum[-1]) if cum.size else 0
    n = int(n)
    if n < 0:
        raise ValidationError("draw size must be nonnegative")
    if n > total:
        raise InsufficientPopulationError(
            f"cannot draw {n} from a pool of {total}"
        )
    out = np.zeros(cum.size, dtype=np.int64)
    if n:
        K.draw_bin_counts(cum, rng.random(n), n, out)
    return out


@dataclass(frozen=True)
class ReplicateTrace:
    """Per-time-point sampled case counts at atomic-bin granularity."""

    fips: str
    periodicity: str
    start: dt.date
    counts: np.ndarray  # (times, bins)
    seed: int
    replicate_index: int

    def bin_counts(self, t: int) -> np.ndarray:
        return self.counts[t]


def _check_volume(pop: PopulationTable, series_counts: np.ndarray):
    cum = np.cumsum(series_counts)
    over = np.flatnonzero(cum > pop.total)
    if over.size:
        t = int(over[0])
        raise InsufficientPopulationError(
            f"county {pop.fips}: cumulative cases {int(cum[t])} exceed population "
            f"{pop.total} at time index {t}"
        )


def simulate_replicate(pop: PopulationTable, series: CaseSeries, seed: int,
                       replicate_index: int) -> ReplicateTrace:
    """Simulate one replicate of the full reporting series, depleting the pool."""
    if series.fips != pop.fips:
        raise ValidationError(
            f"series county {series.fips} does not match population {pop.fips}"
        )
    _check_volume(pop, series.counts)
    cum = _pool_cum(pop.counts)
    total = int(series.counts.sum())
    uniforms = replicate_rng(seed, pop.fips, replicate_index).random(total)
    out = np.zeros((len(series), pop.counts.size), dtype=np.int64)
    if total:
        K.sample_trace_dense(cum, series.counts, uniforms, out)
    assert (out.sum(axis=1) == series.counts).all()
    assert (out.sum(axis=0) <= pop.counts).all()  # no reinfection
    return ReplicateTrace(pop.fips, series.periodicity, series.start, out,
                          seed, replicate_index)


def simulate_single_draw(pop: PopulationTable, n_cases: int, seed: int,
                         replicate_index: int, stream: int = EVAL_STREAM) -> np.ndarray:
    """One draw of ``n_cases`` from the full (undepleted) population.

    With the default stream this equals the first time point of
    ``simulate_replicate`` on a one-point series, by construction.
    """
    if n_cases > pop.total:
        raise InsufficientPopulationError(
            f"county {pop.fips}: {n_cases} cases exceed population {pop.total}"
        )
    rng = replicate_rng(seed, pop.fips, replicate_index, stream=stream)
    return draw_without_replacement(pop.counts, n_cases, rng)


def _chunk_sizes(n_replicates: int, per_rep: int, budget: int = 8_000_000) -> list[int]:
    # cap transient uniform buffers around 64 MB
    chunk = max(1, min(n_replicates, budget // max(per_rep, 1)))
    sizes = []
    left = n_replicates
    while left > 0:
        take = min(chunk, left)
        sizes.append(take)
        left -= take
    return sizes


def pk_search_matrix(pop: PopulationTable, key_index_mat: np.ndarray,
                     n_keys: np.ndarray, grid, k: int, n_replicates: int,
                     seed: int) -> np.ndarray:
    """Per-replicate PK risk of single draws at each grid volume.

    Returns (replicates, volumes, policies); volumes above the county
    population come out NaN. Draws are shared across policies within a
    replicate, so coarser policies are never riskier in any replicate.
    """
    volumes = np.asarray(list(grid), dtype=np.int64)
    feasible = (volumes <= pop.total).astype(np.uint8)
    feasible &= volumes > 0
    cum = _pool_cum(pop.counts)
    key = stream_key(seed, pop.fips)
    n_vol = len(volumes)
    n_pol = key_index_mat.shape[0]
    risks = np.empty((n_replicates, n_vol, n_pol), dtype=np.float64)

    per_rep = int(volumes[feasible.astype(bool)].sum())
    start = 0
    for size in _chunk_sizes(n_replicates, per_rep):
        runs = []
        lengths = np.zeros(size * n_vol, dtype=np.int64)
        for local, rep in enumerate(range(start, start + size)):
            for vi, v in enumerate(volumes):
                if not feasible[vi]:
                    continue
                bitgen = Philox(key=key, counter=[0, SEARCH_STREAM_BASE + vi, rep, 0])
                runs.append(Generator(bitgen).random(int(v)))
                lengths[local * n_vol + vi] = v
        uniforms = np.concatenate(runs) if runs else np.empty(0, dtype=np.float64)
        urun_ptr = np.zeros(size * n_vol + 1, dtype=np.int64)
        np.cumsum(lengths, out=urun_ptr[1:])
        K.search_matrix(cum, volumes, feasible, uniforms, urun_ptr,
                        key_index_mat, n_keys, k, risks[start:start + size])
        start += size
    return risks


def pk_series_matrix(pop: PopulationTable, series: CaseSeries,
                     key_index_mat: np.ndarray, n_keys: np.ndarray, k: int,
                     lag: int, lag_offset: int, n_replicates: int,
                     seed: int) -> np.ndarray:
    """Per-replicate, per-policy, per-time PK risk over a depleting series.

    Returns (replicates, policies, times); times with no cases come out NaN.
    One trace per replicate is shared across all policies.
    """
    _check_volume(pop, series.counts)
    cum = _pool_cum(pop.counts)
    key = stream_key(seed, pop.fips)
    daily = np.asarray(series.counts, dtype=np.int64)
    total = int(daily.sum())
    n_pol = key_index_mat.shape[0]
    risks = np.empty((n_replicates, n_pol, len(daily)), dtype=np.float64)

    start = 0
    for size in _chunk_sizes(n_replicates, total):
        runs = []
        for rep in range(start, start + size):
            bitgen = Philox(key=key, counter=[0, EVAL_STREAM, rep, 0])
            runs.append(Generator(bitgen).random(total))
        uniforms = np.concatenate(runs) if runs else np.empty(0, dtype=np.float64)
        urep_ptr = np.arange(size + 1, dtype=np.int64) * total
        K.eval_matrix(cum, daily, uniforms, urep_ptr, key_index_mat, n_keys,
                      k, lag, lag_offset, risks[start:start + size])
        start += size
    return risks


def key_index_matrix(policies) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-policy bin->key maps for the bulk kernels."""
    from .taxonomy import policy_key_index

    idx = []
    sizes = []
    for p in policies:
        ki, nk = policy_key_index(p)
        idx.append(ki)
        sizes.append(nk)
    return np.vstack(idx), np.asarray(sizes, dtype=np.int64)
