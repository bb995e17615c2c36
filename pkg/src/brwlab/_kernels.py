"""Compiled kernels: the hot loops behind both engines and all campaigns.

Everything here is numba-jitted with fastmath disabled so results are
bit-reproducible against the pure-Python reference in _rng (same IEEE
operation order, no FMA contraction).  Parallel kernels only parallelize
over replicates and write to disjoint output slots, which makes their
results independent of the worker count by construction.

Leaf sums use pairwise (binary-counter) reduction in left-to-right leaf
order; per-generation accumulators use compensated (Kahan) addition.  Both
are fixed-order schemes, so every output is a pure function of
(seed, replicate, horizon, parameters).
"""

import math
import os
import sys

if "numba" not in sys.modules:
    # Allow oversubscribed worker counts (--threads 8 on small boxes); must
    # happen before numba initializes its threading layer.
    os.environ.setdefault("NUMBA_NUM_THREADS", str(max(16, os.cpu_count() or 1)))

import numba
import numpy as np
from numba import njit, prange

from . import _rng

LN2 = 0.6931471805599453

# Leaf numerics jitted straight from the reference source: one implementation.
mix64 = njit(cache=True, inline="always")(_rng.mix64)
norm_quantile = njit(cache=True, inline="always")(_rng.norm_quantile)
ndtr = njit(cache=True)(_rng.ndtr)

_GOLD1 = _rng._GOLD1
_GOLD2 = _rng._GOLD2
MASK64 = _rng.MASK64
_INV_2_53 = _rng._INV_2_53

#: exp() argument beyond which martingale terms are treated as overflow.
EXP_ARG_LIMIT = 700.0


def max_threads() -> int:
    return int(numba.config.NUMBA_NUM_THREADS)


def set_threads(threads: int) -> int:
    """Clamp and apply the worker count; returns the effective value."""
    eff = max(1, min(int(threads), max_threads()))
    numba.set_num_threads(eff)
    return eff


@njit(cache=True, inline="always")
def address_hash(seed, replicate, node_index):
    h = mix64(seed)
    h = mix64(h ^ ((replicate * np.uint64(_GOLD1)) & np.uint64(MASK64)))
    return mix64(h ^ ((node_index * np.uint64(_GOLD2)) & np.uint64(MASK64)))


@njit(cache=True, inline="always")
def node_uniform(seed, replicate, node_index):
    h = address_hash(seed, replicate, node_index)
    return (float(h >> np.uint64(11)) + 0.5) * _INV_2_53


@njit(cache=True, inline="always")
def node_gaussian(seed, replicate, node_index):
    return norm_quantile(node_uniform(seed, replicate, node_index))


@njit(cache=True, inline="always")
def truncated_node_gaussian(seed, replicate, node_index, lo, hi, flo, fhi):
    u = node_uniform(seed, replicate, node_index)
    x = norm_quantile(flo + u * (fhi - flo))
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@njit(cache=True, parallel=True)
def draw_batch(seed, replicate, node_indices, out):
    for i in prange(node_indices.shape[0]):
        out[i] = node_gaussian(seed, replicate, np.uint64(node_indices[i]))


@njit(cache=True, parallel=True)
def draw_batch_truncated(seed, replicate, node_indices, lo, hi, flo, fhi, out):
    for i in prange(node_indices.shape[0]):
        out[i] = truncated_node_gaussian(
            seed, replicate, np.uint64(node_indices[i]), lo, hi, flo, fhi
        )


@njit(cache=True, inline="always")
def _draw_scheduled(seed, replicate, idx, d, trunc, lo, hi, flo, fhi):
    """Per-depth draw: truncated on scheduled depths, free elsewhere."""
    if trunc[d] != 0:
        return truncated_node_gaussian(
            seed, replicate, idx, lo[d], hi[d], flo[d], fhi[d]
        )
    return node_gaussian(seed, replicate, idx)


@njit(cache=True)
def dfs_leaves(seed, replicate, n, x0, trunc, lo, hi, flo, fhi, out):
    """Emit all 2^n leaf positions in left-to-right order, O(n) live state.

    Walks consecutive leaves and redraws only the path suffix below the
    common ancestor, so each tree node is hashed exactly once.
    """
    pos = np.empty(n + 1)
    pos[0] = x0
    if n == 0:
        out[0] = x0
        return
    for leaf in range(1 << n):
        if leaf == 0:
            d0 = 1
        else:
            t = 0
            while (leaf >> t) & 1 == 0:
                t += 1
            d0 = n - t
        for d in range(d0, n + 1):
            idx = np.uint64((1 << d) + (leaf >> (n - d)))
            pos[d] = pos[d - 1] + _draw_scheduled(
                seed, replicate, idx, d, trunc, lo, hi, flo, fhi
            )
        out[leaf] = pos[n]


@njit(cache=True, inline="always")
def _wz_single_sched(seed, replicate, n, beta, trunc, lo, hi, flo, fhi):
    """W_n, Z_n of one realization via streaming DFS with pairwise sums.

    Returns (W, Z, flag); flag=1 signals an exp() argument above the
    overflow guard, in which case the sums are meaningless.
    """
    shift = n * (LN2 + 0.5 * beta * beta)
    bn = beta * n
    if n == 0:
        return 1.0, 0.0, 0
    pos = np.empty(n + 1)
    pos[0] = 0.0
    stash_w = np.zeros(n + 1)
    stash_z = np.zeros(n + 1)
    flag = 0
    count = 0
    for leaf in range(1 << n):
        if leaf == 0:
            d0 = 1
        else:
            t = 0
            while (leaf >> t) & 1 == 0:
                t += 1
            d0 = n - t
        for d in range(d0, n + 1):
            idx = np.uint64((1 << d) + (leaf >> (n - d)))
            pos[d] = pos[d - 1] + _draw_scheduled(
                seed, replicate, idx, d, trunc, lo, hi, flo, fhi
            )
        s = pos[n]
        arg = beta * s - shift
        if arg > EXP_ARG_LIMIT:
            flag = 1
            arg = EXP_ARG_LIMIT
        term = math.exp(arg)
        w = term
        z = (bn - s) * term
        j = 0
        m = count
        while m & 1:
            w = stash_w[j] + w
            z = stash_z[j] + z
            m >>= 1
            j += 1
        stash_w[j] = w
        stash_z[j] = z
        count += 1
    return stash_w[n], stash_z[n], flag


@njit(cache=True, parallel=True)
def wz_horizon_batch(seed, rep0, reps, n, beta, trunc, lo, hi, flo, fhi,
                     out_w, out_z, out_flag):
    """(W_n, Z_n) for `reps` consecutive replicate streams."""
    for i in prange(reps):
        rep = np.uint64(rep0 + i)
        w, z, fl = _wz_single_sched(seed, rep, n, beta, trunc, lo, hi, flo, fhi)
        out_w[i] = w
        out_z[i] = z
        out_flag[i] = fl


@njit(cache=True, parallel=True)
def wz_multi_horizon_batch(seed, rep0, reps, n, beta, col_of_depth,
                           out_w, out_z, out_flag):
    """W_g, Z_g at every depth g with col_of_depth[g] >= 0, per replicate.

    One depth-n traversal serves all requested horizons at once (the deeper
    tree contains the shallower ones).  Per-depth sums use Kahan
    compensation in DFS visit order.
    """
    c1 = LN2 + 0.5 * beta * beta
    ncols = out_w.shape[1]
    for i in prange(reps):
        rep = np.uint64(rep0 + i)
        pos = np.empty(n + 1)
        pos[0] = 0.0
        sw = np.zeros(ncols)
        cw = np.zeros(ncols)
        sz = np.zeros(ncols)
        cz = np.zeros(ncols)
        flag = 0
        if col_of_depth[0] >= 0:
            sw[col_of_depth[0]] = 1.0
        for leaf in range(1 << n):
            if leaf == 0:
                d0 = 1
            else:
                t = 0
                while (leaf >> t) & 1 == 0:
                    t += 1
                d0 = n - t
            for d in range(d0, n + 1):
                idx = np.uint64((1 << d) + (leaf >> (n - d)))
                pos[d] = pos[d - 1] + node_gaussian(seed, rep, idx)
                c = col_of_depth[d]
                if c >= 0:
                    s = pos[d]
                    arg = beta * s - c1 * d
                    if arg > EXP_ARG_LIMIT:
                        flag = 1
                        arg = EXP_ARG_LIMIT
                    term = math.exp(arg)
                    y = term - cw[c]
                    tt = sw[c] + y
                    cw[c] = (tt - sw[c]) - y
                    sw[c] = tt
                    zterm = (beta * d - s) * term
                    y = zterm - cz[c]
                    tt = sz[c] + y
                    cz[c] = (tt - sz[c]) - y
                    sz[c] = tt
        for c in range(ncols):
            out_w[i, c] = sw[c]
            out_z[i, c] = sz[c]
        out_flag[i] = flag


@njit(cache=True, parallel=True)
def level_rate_batch(seed, rep0, reps, n, slope, out_counts):
    """Per-generation exceedance counts #{|u|=g : S_u > slope*g}."""
    for i in prange(reps):
        rep = np.uint64(rep0 + i)
        pos = np.empty(n + 1)
        pos[0] = 0.0
        counts = np.zeros(n + 1, dtype=np.int64)
        for leaf in range(1 << n):
            if leaf == 0:
                d0 = 1
            else:
                t = 0
                while (leaf >> t) & 1 == 0:
                    t += 1
                d0 = n - t
            for d in range(d0, n + 1):
                idx = np.uint64((1 << d) + (leaf >> (n - d)))
                pos[d] = pos[d - 1] + node_gaussian(seed, rep, idx)
                if pos[d] > slope * d:
                    counts[d] += 1
        for d in range(n + 1):
            out_counts[i, d] = counts[d]


@njit(cache=True)
def kahan_sum(values):
    """Compensated left-to-right sum of a 1-D array."""
    s = 0.0
    c = 0.0
    for i in range(values.shape[0]):
        y = values[i] - c
        t = s + y
        c = (t - s) - y
        s = t
    return s


_warmed = False


def warmup():
    """Force-compile the kernel suite on tiny inputs (one-time JIT cost)."""
    global _warmed
    if _warmed:
        return
    idx = np.array([2], dtype=np.int64)
    out = np.empty(1)
    draw_batch(np.uint64(1), np.uint64(0), idx, out)
    draw_batch_truncated(np.uint64(1), np.uint64(0), idx, 0.0, 0.5, 0.5, 0.6915, out)
    leaves = np.empty(2)
    trunc = np.zeros(2, dtype=np.uint8)
    band = np.zeros(2)
    dfs_leaves(np.uint64(1), np.uint64(0), 1, 0.0, trunc, band, band, band, band, leaves)
    w = np.empty(1)
    zz = np.empty(1)
    fl = np.empty(1, dtype=np.uint8)
    wz_horizon_batch(np.uint64(1), 0, 1, 1, 1.0, trunc, band, band, band, band, w, zz, fl)
    col = np.array([0, 1], dtype=np.int64)
    w2 = np.empty((1, 2))
    z2 = np.empty((1, 2))
    wz_multi_horizon_batch(np.uint64(1), 0, 1, 1, 1.0, col, w2, z2, fl)
    cnt = np.empty((1, 2), dtype=np.int64)
    level_rate_batch(np.uint64(1), 0, 1, 1, 0.0, cnt)
    kahan_sum(band)
    node_gaussian(np.uint64(1), np.uint64(0), np.uint64(2))
    node_uniform(np.uint64(1), np.uint64(0), np.uint64(2))
    ndtr(0.0)
    _warmed = True
