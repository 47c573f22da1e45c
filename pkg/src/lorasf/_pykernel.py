"""Pure numpy reception kernel, used when the compiled one is unavailable.

Events must be sorted by start time. Overlapping pairs are found by
comparing each event with its k-th successor for k = 1, 2, ... until no
pair overlaps; interference sums are then accumulated per gateway.
"""

from __future__ import annotations

import numpy as np


def overlapping_pairs(start: np.ndarray, end: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (a, b), a < b, whose [start, end) intervals intersect."""
    heads, tails = [], []
    n = len(start)
    k = 1
    while k < n:
        hit = np.flatnonzero(start[k:] < end[:-k])
        if hit.size == 0:
            break
        heads.append(hit)
        tails.append(hit + k)
        k += 1
    if not heads:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    return np.concatenate(heads), np.concatenate(tails)


def resolve_events(start, end, sf, ed, power, sens, allowed, capture_db, rejection_db, maxdur):
    E = len(start)
    M = power.shape[1]
    capture_on = capture_db != np.inf
    intersf_on = rejection_db != -np.inf
    lin = np.power(10.0, power / 10.0)
    a, b = overlapping_pairs(start, end)
    same_pair = sf[a] == sf[b]
    sa, sb = a[same_pair], b[same_pair]
    ca, cb = a[~same_pair], b[~same_pair]
    n_same = np.bincount(sa, minlength=E) + np.bincount(sb, minlength=E)
    delivered = np.zeros(E, dtype=bool)
    for g in range(M):
        p = lin[ed, g]
        cand = allowed[ed, g].astype(bool) & (power[ed, g] >= sens[sf])
        ok = cand.copy()
        if capture_on:
            same = np.bincount(sa, weights=p[sb], minlength=E) + np.bincount(sb, weights=p[sa], minlength=E)
            ok &= (n_same == 0) | (p >= same * 10.0 ** (capture_db / 10.0))
        else:
            ok &= n_same == 0
        if intersf_on:
            cross = np.bincount(ca, weights=p[cb], minlength=E) + np.bincount(cb, weights=p[ca], minlength=E)
            ok &= (cross <= 0.0) | (p >= cross * 10.0 ** (rejection_db / 10.0))
        delivered |= ok
    return delivered
