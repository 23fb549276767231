"""Hot numeric kernels: case sampling and PK-risk accumulation.

Written in the numba-compatible subset of numpy Python. This module is
loaded twice by ``deidpolicy._kernels``: once left as-is (the pure fallback)
and once with every function compiled by ``numba.njit``. Both copies consume
pre-generated uniform variates positionally, so they produce bit-identical
results.

Sampling uses a partial Fisher-Yates shuffle of individual indices laid out
by atomic bin: drawing the next case picks a uniformly random remaining
individual, which makes every draw an exact multivariate hypergeometric
sample and makes sequential draws deplete the pool (no reinfection) by
construction. Swaps are undone afterwards so the scratch permutation can be
reused.
"""

import numpy as np

try:
    from numba import prange
except ImportError:  # pragma: no cover - exercised only without numba
    prange = range

# kernel name -> numba compile options, in dependency order
KERNEL_SPECS = (
    ("bisect_right", {}),
    ("draw_day", {}),
    ("flush_touched", {}),
    ("undo_swaps", {}),
    ("draw_bin_counts", {}),
    ("sample_trace_dense", {}),
    ("sample_trace_sparse", {}),
    ("pk_single", {}),
    ("_build_day", {}),
    ("pk_series", {}),
    ("search_matrix", {"parallel": True}),
    ("eval_matrix", {"parallel": True}),
)


def bisect_right(cum, x):
    # first index with cum[idx] > x
    lo = 0
    hi = cum.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if x < cum[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def draw_day(perm, pop_cum, uniforms, u0, drawn0, n_draw, scratch, touched):
    """Draw ``n_draw`` individuals without replacement, tallying bins.

    Swaps perm[drawn0 : drawn0+n_draw] into place (consuming one uniform per
    case), adds per-bin counts into ``scratch`` and appends newly touched bin
    ids to ``touched``. Returns the number of touched bins.
    """
    n_pop = perm.shape[0]
    n_touch = 0
    for i in range(n_draw):
        pos = drawn0 + i
        m = n_pop - pos
        off = int(uniforms[u0 + i] * m)
        if off >= m:  # guard the (astronomically rare) u*m == m rounding
            off = m - 1
        j = pos + off
        v = perm[j]
        perm[j] = perm[pos]
        perm[pos] = v
        b = bisect_right(pop_cum, v)
        if scratch[b] == 0:
            touched[n_touch] = b
            n_touch += 1
        scratch[b] += 1
    return n_touch


def flush_touched(scratch, touched, n_touch, out_bins, out_cnts, nnz):
    # move touched bin tallies into the sparse output and zero the scratch
    for i in range(n_touch):
        b = touched[i]
        out_bins[nnz] = b
        out_cnts[nnz] = scratch[b]
        scratch[b] = 0
        nnz += 1
    return nnz


def undo_swaps(perm, uniforms, u0, drawn0, n_draw):
    # replay the swap sequence backwards to restore the permutation
    n_pop = perm.shape[0]
    for i in range(n_draw - 1, -1, -1):
        pos = drawn0 + i
        m = n_pop - pos
        off = int(uniforms[u0 + i] * m)
        if off >= m:
            off = m - 1
        j = pos + off
        v = perm[j]
        perm[j] = perm[pos]
        perm[pos] = v


def draw_bin_counts(pop_cum, uniforms, n_draw, out_counts):
    """One multivariate hypergeometric draw; dense per-bin counts."""
    n_pop = pop_cum[pop_cum.shape[0] - 1]
    perm = np.arange(n_pop, dtype=np.int32)
    for i in range(n_draw):
        m = n_pop - i
        off = int(uniforms[i] * m)
        if off >= m:
            off = m - 1
        j = i + off
        v = perm[j]
        perm[j] = perm[i]
        perm[i] = v
        out_counts[bisect_right(pop_cum, v)] += 1


def sample_trace_dense(pop_cum, daily, uniforms, out_counts):
    """Sequentially deplete the population over a series; dense (T, B) tallies."""
    n_pop = pop_cum[pop_cum.shape[0] - 1]
    perm = np.arange(n_pop, dtype=np.int32)
    drawn = 0
    for t in range(daily.shape[0]):
        for _ in range(daily[t]):
            m = n_pop - drawn
            off = int(uniforms[drawn] * m)
            if off >= m:
                off = m - 1
            j = drawn + off
            v = perm[j]
            perm[j] = perm[drawn]
            perm[drawn] = v
            out_counts[t, bisect_right(pop_cum, v)] += 1
            drawn += 1


def sample_trace_sparse(perm, pop_cum, daily, uniforms, day_ptr, tbins, tcnts,
                        scratch, touched):
    """Depleting draw over a series into per-day sparse (bin, count) runs.

    The permutation is restored before returning. Returns total nonzeros.
    """
    nnz = 0
    drawn = 0
    for t in range(daily.shape[0]):
        day_ptr[t] = nnz
        n_t = daily[t]
        n_touch = draw_day(perm, pop_cum, uniforms, drawn, drawn, n_t, scratch, touched)
        nnz = flush_touched(scratch, touched, n_touch, tbins, tcnts, nnz)
        drawn += n_t
    day_ptr[daily.shape[0]] = nnz
    undo_swaps(perm, uniforms, 0, 0, drawn)
    return nnz


def pk_single(tbins, tcnts, nnz, total, key_index, k, acc, ktouch):
    """PK risk of a single released batch: the batch is its own window."""
    n_touch = 0
    for i in range(nnz):
        g = key_index[tbins[i]]
        if acc[g] == 0:
            ktouch[n_touch] = g
            n_touch += 1
        acc[g] += tcnts[i]
    num = 0
    for i in range(n_touch):
        c = acc[ktouch[i]]
        if c < k:
            num += c
        acc[ktouch[i]] = 0
    return num / total


def pk_series(day_ptr, tbins, tcnts, day_totals, key_index, k, lag, lag_offset,
              w_acc, r_acc, ktouch, kkeys, kcnts, kday_ptr, kday_len, out_risks):
    """Per-day PK risk under one policy, lagging window of ``lag`` days.

    The window for day t covers days [t-lag+1+lag_offset, t+lag_offset],
    clamped to the series; lag_offset in [0, lag) keeps t inside its own
    window. w_acc and r_acc are zeroed scratch of at least n_keys entries and
    are left zeroed; kkeys/kcnts/kday_ptr/kday_len hold per-day key runs.
    """
    n_days = day_totals.shape[0]
    kp = 0

    # aggregate day d's bin run into a key run and add it to the window
    # (inline helper pattern: numba-friendly, no closures)
    prime = lag_offset if lag_offset < n_days else n_days
    for d in range(prime):
        kp = _build_day(d, day_ptr, tbins, tcnts, key_index, w_acc, r_acc,
                        ktouch, kkeys, kcnts, kday_ptr, kday_len, kp)
    for t in range(n_days):
        d_add = t + lag_offset
        if d_add < n_days:
            kp = _build_day(d_add, day_ptr, tbins, tcnts, key_index, w_acc, r_acc,
                            ktouch, kkeys, kcnts, kday_ptr, kday_len, kp)
        d_drop = t + lag_offset - lag
        if d_drop >= 0:
            for i in range(kday_ptr[d_drop], kday_ptr[d_drop] + kday_len[d_drop]):
                w_acc[kkeys[i]] -= kcnts[i]
        n_t = day_totals[t]
        if n_t == 0:
            out_risks[t] = np.nan
        else:
            num = 0
            for i in range(kday_ptr[t], kday_ptr[t] + kday_len[t]):
                if w_acc[kkeys[i]] < k:
                    num += kcnts[i]
            out_risks[t] = num / n_t
    # remove the trailing window so w_acc leaves zeroed
    first_left = n_days + lag_offset - lag
    if first_left < 0:
        first_left = 0
    for d in range(first_left, n_days):
        for i in range(kday_ptr[d], kday_ptr[d] + kday_len[d]):
            w_acc[kkeys[i]] -= kcnts[i]


def _build_day(d, day_ptr, tbins, tcnts, key_index, w_acc, r_acc, ktouch,
               kkeys, kcnts, kday_ptr, kday_len, kp):
    n_touch = 0
    for i in range(day_ptr[d], day_ptr[d + 1]):
        g = key_index[tbins[i]]
        if r_acc[g] == 0:
            ktouch[n_touch] = g
            n_touch += 1
        r_acc[g] += tcnts[i]
    kday_ptr[d] = kp
    kday_len[d] = n_touch
    for i in range(n_touch):
        g = ktouch[i]
        kkeys[kp] = g
        kcnts[kp] = r_acc[g]
        w_acc[g] += r_acc[g]
        r_acc[g] = 0
        kp += 1
    return kp


def search_matrix(pop_cum, volumes, feasible, uniforms, urun_ptr, key_index_mat,
                  n_keys, k, out_risks):
    """PK risk of single draws at each grid volume, all policies, one draw
    per (replicate, volume) shared across policies.

    uniforms holds each replicate's per-volume variates back to back;
    urun_ptr has one entry per (replicate, volume) run plus a terminator.
    out_risks has shape (replicates, volumes, policies); infeasible volumes
    come out NaN.
    """
    n_bins = key_index_mat.shape[1]
    n_pop = pop_cum[n_bins - 1]
    n_pol = key_index_mat.shape[0]
    n_vol = volumes.shape[0]
    n_reps = out_risks.shape[0]
    max_keys = 0
    for p in range(n_pol):
        if n_keys[p] > max_keys:
            max_keys = n_keys[p]
    for r in prange(n_reps):
        perm = np.arange(n_pop, dtype=np.int32)
        scratch = np.zeros(n_bins, dtype=np.int32)
        touched = np.empty(n_bins, dtype=np.int32)
        tbins = np.empty(n_bins, dtype=np.int32)
        tcnts = np.empty(n_bins, dtype=np.int32)
        acc = np.zeros(max_keys, dtype=np.int64)
        ktouch = np.empty(n_bins, dtype=np.int32)
        for vi in range(n_vol):
            if feasible[vi] == 0:
                for p in range(n_pol):
                    out_risks[r, vi, p] = np.nan
                continue
            v = volumes[vi]
            u0 = urun_ptr[r * n_vol + vi]
            n_touch = draw_day(perm, pop_cum, uniforms, u0, 0, v, scratch, touched)
            nnz = flush_touched(scratch, touched, n_touch, tbins, tcnts, 0)
            for p in range(n_pol):
                out_risks[r, vi, p] = pk_single(
                    tbins, tcnts, nnz, v, key_index_mat[p], k, acc, ktouch
                )
            undo_swaps(perm, uniforms, u0, 0, v)


def eval_matrix(pop_cum, daily, uniforms, urep_ptr, key_index_mat, n_keys, k,
                lag, lag_offset, out_risks):
    """Per-day PK risk for every policy over a depleting case series.

    One trace per replicate shared across policies. out_risks has shape
    (replicates, policies, days).
    """
    n_bins = key_index_mat.shape[1]
    n_pol = key_index_mat.shape[0]
    n_days = daily.shape[0]
    n_reps = out_risks.shape[0]
    max_keys = 0
    for p in range(n_pol):
        if n_keys[p] > max_keys:
            max_keys = n_keys[p]
    cap = 0
    for t in range(n_days):
        c = daily[t]
        if c > n_bins:
            c = n_bins
        cap += c
    for r in prange(n_reps):
        perm = np.arange(pop_cum[n_bins - 1], dtype=np.int32)
        scratch = np.zeros(n_bins, dtype=np.int32)
        touched = np.empty(n_bins, dtype=np.int32)
        tbins = np.empty(cap, dtype=np.int32)
        tcnts = np.empty(cap, dtype=np.int32)
        day_ptr = np.empty(n_days + 1, dtype=np.int64)
        u = uniforms[urep_ptr[r]:urep_ptr[r + 1]]
        sample_trace_sparse(perm, pop_cum, daily, u, day_ptr, tbins, tcnts,
                            scratch, touched)
        w_acc = np.zeros(max_keys, dtype=np.int64)
        r_acc = np.zeros(max_keys, dtype=np.int64)
        ktouch = np.empty(n_bins, dtype=np.int32)
        kkeys = np.empty(cap, dtype=np.int32)
        kcnts = np.empty(cap, dtype=np.int32)
        kday_ptr = np.empty(n_days, dtype=np.int64)
        kday_len = np.empty(n_days, dtype=np.int64)
        for p in range(n_pol):
            pk_series(day_ptr, tbins, tcnts, daily, key_index_mat[p], k, lag,
                      lag_offset, w_acc, r_acc, ktouch, kkeys, kcnts, kday_ptr,
                      kday_len, out_risks[r, p])
