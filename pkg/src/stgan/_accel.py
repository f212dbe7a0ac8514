"""Loop-heavy kernels with a numba path and a pure numpy/python fallback.

Set ``STGAN_NUMBA=0`` to force the fallback (also used when numba is not
importable).  Both paths must return identical results; the test suite runs
them against each other.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def numba_requested() -> bool:
    return os.environ.get("STGAN_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


USE_NUMBA = numba is not None and numba_requested()


# ---------------------------------------------------------------------------
# pure numpy / python reference versions
# ---------------------------------------------------------------------------

def lcs_length_py(a: np.ndarray, b: np.ndarray) -> int:
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        cur = np.zeros(m + 1, dtype=np.int64)
        ai = a[i]
        for j in range(m):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = max(prev[j + 1], cur[j])
        prev = cur
    return int(prev[m])


def min_sqdist_py(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """For each center, the smallest squared distance to any point."""
    if len(points) == 0:
        return np.full(len(centers), np.inf)
    diff = centers[:, None, :] - points[None, :, :]
    return (diff * diff).sum(axis=2).min(axis=1)


def argmin_sqdist_py(query: np.ndarray, table: np.ndarray) -> int:
    d = ((table - query[None, :]) ** 2).sum(axis=1)
    return int(np.argmin(d))


def pairwise_l1_similarity_py(m: np.ndarray) -> np.ndarray:
    """out[i, b] = sum_{j != i} exp(-||m[i, b] - m[j, b]||_1) for m of shape (n, B, C)."""
    dist = np.abs(m[:, None, :, :] - m[None, :, :, :]).sum(axis=3)
    return np.exp(-dist).sum(axis=1) - 1.0


def pairwise_l1_similarity_grad_py(m: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient of sum(g * pairwise_l1_similarity(m)) with respect to m."""
    diff = m[:, None, :, :] - m[None, :, :, :]
    e = np.exp(-np.abs(diff).sum(axis=3))
    w = (g[:, None, :] + g[None, :, :]) * e
    return -(w[..., None] * np.sign(diff)).sum(axis=1)


# ---------------------------------------------------------------------------
# numba versions
# ---------------------------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True)
    def lcs_length_nb(a, b):
        n, m = len(a), len(b)
        if n == 0 or m == 0:
            return 0
        prev = np.zeros(m + 1, dtype=np.int64)
        cur = np.zeros(m + 1, dtype=np.int64)
        for i in range(n):
            ai = a[i]
            cur[0] = 0
            for j in range(m):
                if ai == b[j]:
                    cur[j + 1] = prev[j] + 1
                elif prev[j + 1] >= cur[j]:
                    cur[j + 1] = prev[j + 1]
                else:
                    cur[j + 1] = cur[j]
            prev, cur = cur, prev
        return prev[m]

    @numba.njit(cache=True)
    def min_sqdist_nb(points, centers):
        k, d = centers.shape
        out = np.full(k, np.inf)
        for c in range(k):
            best = np.inf
            for p in range(points.shape[0]):
                s = 0.0
                for j in range(d):
                    diff = centers[c, j] - points[p, j]
                    s += diff * diff
                if s < best:
                    best = s
            out[c] = best
        return out

    @numba.njit(cache=True)
    def argmin_sqdist_nb(query, table):
        best = np.inf
        best_i = 0
        for i in range(table.shape[0]):
            s = 0.0
            for j in range(table.shape[1]):
                diff = table[i, j] - query[j]
                s += diff * diff
            if s < best:
                best = s
                best_i = i
        return best_i

    @numba.njit(cache=True)
    def pairwise_l1_similarity_nb(m):
        n, nb, nc = m.shape
        out = np.zeros((n, nb))
        for i in range(n):
            for j in range(i + 1, n):
                for b in range(nb):
                    s = 0.0
                    for c in range(nc):
                        s += abs(m[i, b, c] - m[j, b, c])
                    e = np.exp(-s)
                    out[i, b] += e
                    out[j, b] += e
        return out

    @numba.njit(cache=True)
    def pairwise_l1_similarity_grad_nb(m, g):
        n, nb, nc = m.shape
        out = np.zeros_like(m)
        for i in range(n):
            for j in range(i + 1, n):
                for b in range(nb):
                    s = 0.0
                    for c in range(nc):
                        s += abs(m[i, b, c] - m[j, b, c])
                    w = (g[i, b] + g[j, b]) * np.exp(-s)
                    for c in range(nc):
                        d = m[i, b, c] - m[j, b, c]
                        if d > 0:
                            out[i, b, c] -= w
                            out[j, b, c] += w
                        elif d < 0:
                            out[i, b, c] += w
                            out[j, b, c] -= w
        return out


def _pick(name: str):
    if USE_NUMBA:
        return globals()[name + "_nb"]
    return globals()[name + "_py"]


def lcs_length(a, b) -> int:
    return int(_pick("lcs_length")(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)))


def min_sqdist(points, centers) -> np.ndarray:
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(len(points), -1)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    return _pick("min_sqdist")(points, centers)


def argmin_sqdist(query, table) -> int:
    return int(_pick("argmin_sqdist")(np.ascontiguousarray(query, dtype=np.float64),
                                      np.ascontiguousarray(table, dtype=np.float64)))


def pairwise_l1_similarity(m) -> np.ndarray:
    return _pick("pairwise_l1_similarity")(np.ascontiguousarray(m, dtype=np.float64))


def pairwise_l1_similarity_grad(m, g) -> np.ndarray:
    return _pick("pairwise_l1_similarity_grad")(np.ascontiguousarray(m, dtype=np.float64),
                                                np.ascontiguousarray(g, dtype=np.float64))
