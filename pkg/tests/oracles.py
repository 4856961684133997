"""Independent reference implementations used as test oracles."""
import math

import numpy as np

from resample_forensics.segmentation import EDGE_FLOOR


def brute_otsu(counts):
    """Exhaustive split search, tie-break floor of the mean maximizer.

    sigma_B^2 = (n1 S0 - n0 S1)^2 / (N^2 n0 n1) is compared exactly by
    integer cross-multiplication, so ties are detected exactly.
    """
    counts = [int(c) for c in counts]
    total = sum(counts)
    best_num, best_den, ties = 0, 1, []
    n0 = s0 = 0
    s_all = sum(i * c for i, c in enumerate(counts))
    for t in range(len(counts) - 1):
        n0 += counts[t]
        s0 += t * counts[t]
        n1, s1 = total - n0, s_all - s0
        if n0 == 0 or n1 == 0:
            num, den = 0, 1
        else:
            num, den = (n1 * s0 - n0 * s1) ** 2, n0 * n1
        lhs, rhs = num * best_den, best_num * den
        if not ties or lhs > rhs:
            best_num, best_den, ties = num, den, [t]
        elif lhs == rhs:
            ties.append(t)
    return sum(ties) // len(ties)


def dense_walker(g, labels, beta):
    """Dense Laplacian built edge by edge, Dirichlet block solved directly."""
    h, w = g.shape
    n = h * w
    lap = np.zeros((n, n))
    for y in range(h):
        for x in range(w):
            for yy, xx in ((y, x + 1), (y + 1, x)):
                if yy < h and xx < w:
                    i, j = y * w + x, yy * w + xx
                    wt = math.exp(-beta * (g[y, x] - g[yy, xx]) ** 2) + EDGE_FLOOR
                    lap[i, j] -= wt
                    lap[j, i] -= wt
                    lap[i, i] += wt
                    lap[j, j] += wt
    flat = labels.ravel()
    u = np.flatnonzero(flat == 0)
    s = np.flatnonzero(flat != 0)
    xs = (flat[s] == 2).astype(float)
    out = np.empty(n)
    out[s] = xs
    if u.size:
        out[u] = np.linalg.solve(lap[np.ix_(u, u)], -lap[np.ix_(u, s)] @ xs)
    return out.reshape(h, w)
