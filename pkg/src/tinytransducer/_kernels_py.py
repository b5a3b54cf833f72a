"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``."""
import numpy as np

OP_HIT, OP_SUB, OP_DEL, OP_INS = 0, 1, 2, 3


def edit_align(ref, hyp):
    n, m = len(ref), len(hyp)
    ref = [int(t) for t in ref]
    hyp = [int(t) for t in hyp]
    D = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        D[i][0] = i
    for j in range(m + 1):
        D[0][j] = j
    for i in range(1, n + 1):
        row, prev = D[i], D[i - 1]
        r = ref[i - 1]
        for j in range(1, m + 1):
            a = prev[j - 1] + (r != hyp[j - 1])
            b = prev[j] + 1
            c = row[j - 1] + 1
            row[j] = min(a, b, c)

    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and D[i - 1][j - 1] == D[i][j]:
            ops.append(OP_HIT)
            i -= 1
            j -= 1
        elif i > 0 and j > 0 and D[i - 1][j - 1] + 1 == D[i][j]:
            ops.append(OP_SUB)
            i -= 1
            j -= 1
        elif i > 0 and D[i - 1][j] + 1 == D[i][j]:
            ops.append(OP_DEL)
            i -= 1
        else:
            ops.append(OP_INS)
            j -= 1
    ops.reverse()
    return D[n][m], np.asarray(ops, dtype=np.int8)


def scatter_add_rows(dest, index, src):
    if src.shape[0] != index.shape[0] or dest.shape[1] != src.shape[1]:
        raise ValueError("scatter_add_rows: shape mismatch")
    if index.size and (index.min() < 0 or index.max() >= dest.shape[0]):
        raise IndexError("scatter_add_rows: row index out of range")
    np.add.at(dest, index, src)
