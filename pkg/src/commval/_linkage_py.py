"""Vectorised average-linkage merge loop, used when the compiled kernel is absent.

Slots are cluster ids; a merge keeps the lower id. Among pairs whose distance
is within ``eps`` of the minimum, the lexicographically smallest
``(lower id, higher id)`` pair merges first.
"""

import numpy as np


def average_linkage_merges(dist, n_clusters, eps):
    d = np.array(dist, dtype=np.float64, copy=True)
    n = d.shape[0]
    n_merges = max(n - n_clusters, 0)
    np.fill_diagonal(d, np.inf)
    size = np.ones(n)
    pairs = np.empty((n_merges, 2), dtype=np.int64)
    heights = np.empty(n_merges)

    for step in range(n_merges):
        dmin = d.min()
        hit = d <= dmin + eps
        i = int(np.flatnonzero(hit.any(axis=1))[0])
        j = int(np.flatnonzero(hit[i])[0])
        merged = (size[i] * d[i] + size[j] * d[j]) / (size[i] + size[j])
        # dead slots and the diagonal stay at inf through the weighted sum
        merged[j] = np.inf
        d[i, :] = merged
        d[:, i] = merged
        d[j, :] = np.inf
        d[:, j] = np.inf
        size[i] += size[j]
        pairs[step] = (i, j)
        heights[step] = dmin
    return pairs, heights
