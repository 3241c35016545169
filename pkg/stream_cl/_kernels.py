import numba
import numpy as np


@numba.njit(cache=False, nogil=True)
def closest_same_class_pair(centroids: np.ndarray, labels: np.ndarray):
    """
    Scans every pair of rows sharing a label.

    Returns ``(i, j, squared_distance)`` with ``i < j`` for the closest pair;
    ties keep the first pair in row-major scan order. ``(-1, -1, inf)`` when
    no label has two rows.
    """
    n = centroids.shape[0]
    d = centroids.shape[1]
    best = np.inf
    best_i = -1
    best_j = -1
    for i in range(n):
        for j in range(i + 1, n):
            if labels[i] != labels[j]:
                continue
            dist = 0.0
            for k in range(d):
                diff = centroids[i, k] - centroids[j, k]
                dist += diff * diff
            if dist < best:
                best = dist
                best_i = i
                best_j = j
    return best_i, best_j, best
