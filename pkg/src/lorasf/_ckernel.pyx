# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled reception kernel. Mirrors lorasf._pykernel.resolve_events."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def resolve_events(
    const double[::1] start,
    const double[::1] end,
    const long[::1] sf,
    const long[::1] ed,
    const double[:, ::1] power,
    const double[::1] sens,
    const unsigned char[:, ::1] allowed,
    double capture_db,
    double rejection_db,
    double maxdur,
):
    cdef Py_ssize_t E = start.shape[0]
    cdef Py_ssize_t M = power.shape[1]
    cdef Py_ssize_t i, j, g, ei, ej
    cdef bint capture_on = capture_db != INFINITY
    cdef bint intersf_on = rejection_db != -INFINITY
    cdef double cap_lin = 10.0 ** (capture_db / 10.0) if capture_on else 0.0
    cdef double rej_lin = 10.0 ** (rejection_db / 10.0) if intersf_on else 0.0
    cdef long n_same, n_cand
    cdef double s_i, p_i
    cdef bint ok

    lin_arr = np.power(10.0, np.asarray(power) / 10.0)
    cdef double[:, ::1] lin = lin_arr
    out_arr = np.zeros(E, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    same_arr = np.zeros(M, dtype=np.float64)
    cross_arr = np.zeros(M, dtype=np.float64)
    cand_arr = np.zeros(M, dtype=np.uint8)
    cdef double[::1] same = same_arr
    cdef double[::1] cross = cross_arr
    cdef unsigned char[::1] cand = cand_arr

    for i in range(E):
        ei = ed[i]
        s_i = sens[sf[i]]
        n_cand = 0
        for g in range(M):
            cand[g] = allowed[ei, g] and power[ei, g] >= s_i
            n_cand += cand[g]
            same[g] = 0.0
            cross[g] = 0.0
        if n_cand == 0:
            continue
        n_same = 0
        j = i - 1
        while j >= 0 and start[j] > start[i] - maxdur:
            if end[j] > start[i]:
                ej = ed[j]
                if sf[j] == sf[i]:
                    n_same += 1
                    for g in range(M):
                        same[g] += lin[ej, g]
                elif intersf_on:
                    for g in range(M):
                        cross[g] += lin[ej, g]
            j -= 1
        j = i + 1
        while j < E and start[j] < end[i]:
            ej = ed[j]
            if sf[j] == sf[i]:
                n_same += 1
                for g in range(M):
                    same[g] += lin[ej, g]
            elif intersf_on:
                for g in range(M):
                    cross[g] += lin[ej, g]
            j += 1
        for g in range(M):
            if not cand[g]:
                continue
            p_i = lin[ei, g]
            ok = True
            if n_same > 0:
                if not capture_on or not (p_i >= same[g] * cap_lin):
                    ok = False
            if ok and intersf_on and cross[g] > 0.0:
                if not (p_i >= cross[g] * rej_lin):
                    ok = False
            if ok:
                out[i] = 1
                break
    return out_arr.astype(bool)
