"""Pure-Python DTW kernel (fallback when the compiled extension is absent)."""
import numpy as np


def accumulated_cost(cost):
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    c = cost.tolist()
    acc = [[0.0] * m for _ in range(n)]
    inf = float("inf")
    for i in range(n):
        row, prev, ci = acc[i], acc[i - 1] if i else None, c[i]
        for j in range(m):
            if i == 0 and j == 0:
                best = 0.0
            else:
                best = inf
                if i and j:
                    best = prev[j - 1]
                if i and prev[j] < best:
                    best = prev[j]
                if j and row[j - 1] < best:
                    best = row[j - 1]
            row[j] = ci[j] + best
    return np.array(acc)


def backtrack(acc):
    """Optimal path from the accumulated cost; ties prefer the diagonal."""
    acc = np.asarray(acc, dtype=np.float64)
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
            if diag <= up and diag <= left:
                i, j = i - 1, j - 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    return np.array(path, dtype=np.int64)
