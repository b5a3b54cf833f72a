# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: edit-distance alignment and row scatter-add."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

# op codes shared with the pure-Python twin
cdef enum:
    OP_HIT = 0
    OP_SUB = 1
    OP_DEL = 2
    OP_INS = 3


def edit_align(const long long[::1] ref, const long long[::1] hyp):
    """Unit-cost Levenshtein distance plus backtraced op codes (ref order)."""
    cdef Py_ssize_t n = ref.shape[0], m = hyp.shape[0]
    cdef Py_ssize_t i, j, k
    cdef int a, b, c, best
    cdef cnp.ndarray[cnp.int32_t, ndim=2] table = np.empty((n + 1, m + 1), dtype=np.int32)
    cdef int[:, ::1] D = table
    for i in range(n + 1):
        D[i, 0] = <int>i
    for j in range(m + 1):
        D[0, j] = <int>j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            a = D[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            b = D[i - 1, j] + 1
            c = D[i, j - 1] + 1
            best = a
            if b < best:
                best = b
            if c < best:
                best = c
            D[i, j] = best

    cdef cnp.ndarray[cnp.int8_t, ndim=1] ops_arr = np.empty(n + m, dtype=np.int8)
    cdef signed char[::1] ops = ops_arr
    k = 0
    i = n
    j = m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and D[i - 1, j - 1] == D[i, j]:
            ops[k] = OP_HIT
            i -= 1
            j -= 1
        elif i > 0 and j > 0 and D[i - 1, j - 1] + 1 == D[i, j]:
            ops[k] = OP_SUB
            i -= 1
            j -= 1
        elif i > 0 and D[i - 1, j] + 1 == D[i, j]:
            ops[k] = OP_DEL
            i -= 1
        else:
            ops[k] = OP_INS
            j -= 1
        k += 1
    return int(D[n, m]), ops_arr[:k][::-1].copy()


def scatter_add_rows(float[:, ::1] dest, const long long[::1] index, const float[:, ::1] src):
    """dest[index[r], :] += src[r, :] for every r, accumulating duplicates."""
    cdef Py_ssize_t r, c, row
    cdef Py_ssize_t n = index.shape[0], d = src.shape[1]
    if src.shape[0] != n or dest.shape[1] != d:
        raise ValueError("scatter_add_rows: shape mismatch")
    for r in range(n):
        row = index[r]
        if row < 0 or row >= dest.shape[0]:
            raise IndexError("scatter_add_rows: row index out of range")
        for c in range(d):
            dest[row, c] += src[r, c]
