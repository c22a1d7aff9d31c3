# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled DTW kernel; same contract as _dtw_py."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def accumulated_cost(cost):
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0], m = c.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] acc = out
    cdef double best
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                best = 0.0
            elif i == 0:
                best = acc[0, j - 1]
            elif j == 0:
                best = acc[i - 1, 0]
            else:
                best = acc[i - 1, j - 1]
                if acc[i - 1, j] < best:
                    best = acc[i - 1, j]
                if acc[i, j - 1] < best:
                    best = acc[i, j - 1]
            acc[i, j] = c[i, j] + best
    return out


def backtrack(acc_in):
    cdef double[:, ::1] acc = np.ascontiguousarray(acc_in, dtype=np.float64)
    cdef Py_ssize_t i = acc.shape[0] - 1, j = acc.shape[1] - 1, k = 0
    cdef double diag, up, left
    path = np.empty((acc.shape[0] + acc.shape[1], 2), dtype=np.int64)
    cdef long long[:, ::1] p = path
    p[0, 0] = i
    p[0, 1] = j
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag = acc[i - 1, j - 1]
            up = acc[i - 1, j]
            left = acc[i, j - 1]
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        k += 1
        p[k, 0] = i
        p[k, 1] = j
    return path[: k + 1][::-1].copy()
