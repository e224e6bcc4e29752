"""Hot numeric kernels.

Every kernel exists twice: an explicit-loop version compiled with numba and a
vectorised numpy version. The unsuffixed names at the bottom of the module
bind to one of the two according to :mod:`mucs._accel`; both variants stay
importable so tests and the benchmark can compare them.
"""

import numpy as np

from mucs._accel import NUMBA_AVAILABLE, njit

# Slack used when mapping a confidence onto an interval boundary, so that
# 0.7 * 10 = 7.000000000000001 still lands in interval 7.
BIN_EPS = 1e-9


# --------------------------------------------------------------------------
# confidence binning
# --------------------------------------------------------------------------

@njit
def bin_index_loop(conf, m):
    out = np.empty(conf.shape[0], dtype=np.int64)
    for i in range(conf.shape[0]):
        b = int(np.ceil(conf[i] * m - BIN_EPS))
        if b < 1:
            b = 1
        elif b > m:
            b = m
        out[i] = b - 1
    return out


def bin_index_np(conf, m):
    b = np.ceil(np.asarray(conf, dtype=np.float64) * m - BIN_EPS).astype(np.int64)
    return np.clip(b, 1, m) - 1


# --------------------------------------------------------------------------
# cosine k-nearest neighbours
# --------------------------------------------------------------------------

@njit
def cosine_topk_loop(query, ref, k, exclude_diag):
    nq = query.shape[0]
    nr = ref.shape[0]
    dim = query.shape[1]
    qn = np.empty(nq)
    rn = np.empty(nr)
    for i in range(nq):
        s = 0.0
        for d in range(dim):
            s += query[i, d] * query[i, d]
        qn[i] = np.sqrt(s)
    for j in range(nr):
        s = 0.0
        for d in range(dim):
            s += ref[j, d] * ref[j, d]
        rn[j] = np.sqrt(s)

    idx = np.full((nq, k), -1, dtype=np.int64)
    sims = np.full((nq, k), -np.inf)
    row = np.empty(nr)
    taken = np.zeros(nr, dtype=np.bool_)
    for i in range(nq):
        for j in range(nr):
            taken[j] = False
            if exclude_diag and i == j:
                taken[j] = True
                row[j] = -np.inf
                continue
            denom = qn[i] * rn[j]
            if denom == 0.0:
                row[j] = 0.0
            else:
                s = 0.0
                for d in range(dim):
                    s += query[i, d] * ref[j, d]
                row[j] = s / denom
        for t in range(k):
            best = -1
            for j in range(nr):
                if taken[j]:
                    continue
                if best < 0 or row[j] > row[best]:
                    best = j
            if best < 0:
                break
            taken[best] = True
            idx[i, t] = best
            sims[i, t] = row[best]
    return idx, sims


def cosine_topk_np(query, ref, k, exclude_diag):
    query = np.asarray(query, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    qn = np.linalg.norm(query, axis=1)
    rn = np.linalg.norm(ref, axis=1)
    denom = np.outer(qn, rn)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom == 0.0, 0.0, (query @ ref.T) / np.where(denom == 0.0, 1.0, denom))
    if exclude_diag:
        n = min(sim.shape)
        sim[np.arange(n), np.arange(n)] = -np.inf
    order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    sims = np.take_along_axis(sim, order, axis=1)
    order = order.astype(np.int64)
    if exclude_diag:
        # a self-match can only surface when k exceeds the available pool
        order[np.isneginf(sims)] = -1
    short = k - order.shape[1]
    if short > 0:
        order = np.pad(order, ((0, 0), (0, short)), constant_values=-1)
        sims = np.pad(sims, ((0, 0), (0, short)), constant_values=-np.inf)
    return order, sims


# --------------------------------------------------------------------------
# greedy max-min diversity selection (ATS)
# --------------------------------------------------------------------------

@njit
def ats_greedy_loop(patterns, points, tie_rank, seed_order):
    n = patterns.shape[0]
    mind = np.full(n, np.inf)
    selected = np.zeros(n, dtype=np.bool_)
    order = np.empty(n, dtype=np.int64)
    pos = 0
    for s in range(seed_order.shape[0]):
        i = seed_order[s]
        selected[i] = True
        order[pos] = i
        pos += 1
        for j in range(n):
            if patterns[j] == patterns[i]:
                dx = points[j, 0] - points[i, 0]
                dy = points[j, 1] - points[i, 1]
                d = np.sqrt(dx * dx + dy * dy)
                if d < mind[j]:
                    mind[j] = d
    while pos < n:
        best = -1
        for j in range(n):
            if selected[j]:
                continue
            if best < 0:
                best = j
            elif mind[j] > mind[best]:
                best = j
            elif mind[j] == mind[best] and tie_rank[j] < tie_rank[best]:
                best = j
        selected[best] = True
        order[pos] = best
        pos += 1
        for j in range(n):
            if patterns[j] == patterns[best]:
                dx = points[j, 0] - points[best, 0]
                dy = points[j, 1] - points[best, 1]
                d = np.sqrt(dx * dx + dy * dy)
                if d < mind[j]:
                    mind[j] = d
    return order


def ats_greedy_np(patterns, points, tie_rank, seed_order):
    patterns = np.asarray(patterns, dtype=np.int64)
    points = np.asarray(points, dtype=np.float64)
    tie_rank = np.asarray(tie_rank, dtype=np.int64)
    n = patterns.shape[0]
    mind = np.full(n, np.inf)
    selected = np.zeros(n, dtype=bool)
    order = []

    def take(i):
        selected[i] = True
        order.append(i)
        same = patterns == patterns[i]
        d = np.sqrt(((points[same] - points[i]) ** 2).sum(axis=1))
        mind[same] = np.minimum(mind[same], d)

    for i in seed_order:
        take(int(i))
    while len(order) < n:
        cand = np.flatnonzero(~selected)
        # primary: largest gain; secondary: smallest tie rank
        pick = np.lexsort((tie_rank[cand], -mind[cand]))[0]
        take(int(cand[pick]))
    return np.asarray(order, dtype=np.int64)


# --------------------------------------------------------------------------
# per-row mode with lowest-label tie break (BALD)
# --------------------------------------------------------------------------

@njit
def mode_counts_loop(labels, n_classes):
    n = labels.shape[0]
    modes = np.empty(n, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    totals = np.zeros(n, dtype=np.int64)
    tally = np.zeros(n_classes, dtype=np.int64)
    for i in range(n):
        tally[:] = 0
        for t in range(labels.shape[1]):
            lab = labels[i, t]
            if lab >= 0:
                tally[lab] += 1
                totals[i] += 1
        best = 0
        for c in range(1, n_classes):
            if tally[c] > tally[best]:
                best = c
        modes[i] = best
        counts[i] = tally[best]
    return modes, counts, totals


def mode_counts_np(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros((labels.shape[0], n_classes), dtype=np.int64)
    rows, cols = np.nonzero(labels >= 0)
    np.add.at(onehot, (rows, labels[rows, cols]), 1)
    modes = onehot.argmax(axis=1)
    return modes, onehot.max(axis=1), onehot.sum(axis=1)


if NUMBA_AVAILABLE:
    bin_index = bin_index_loop
    cosine_topk = cosine_topk_loop
    ats_greedy = ats_greedy_loop
    mode_counts = mode_counts_loop
else:
    bin_index = bin_index_np
    cosine_topk = cosine_topk_np
    ats_greedy = ats_greedy_np
    mode_counts = mode_counts_np
