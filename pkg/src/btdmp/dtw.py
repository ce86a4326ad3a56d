"""Dynamic time warping: the exact O(nm) dynamic program and the FastDTW approximation.

Distances are raw sums of Euclidean point costs along the warp path (no length
normalisation). Warp paths are 0-based index pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .trajectory import Trajectory

DEFAULT_RADIUS = 1


@dataclass(frozen=True)
class WarpPath:
    pairs: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def is_valid(self, n: int, m: int) -> bool:
        """Boundary, step-size and length conditions for sequences of length n and m."""
        p = self.pairs
        if not p or p[0] != (0, 0) or p[-1] != (n - 1, m - 1):
            return False
        for (i0, j0), (i1, j1) in zip(p, p[1:]):
            di, dj = i1 - i0, j1 - j0
            if di not in (0, 1) or dj not in (0, 1) or di + dj == 0:
                return False
        return max(n, m) <= len(p) < n + m


def _as_array(x) -> np.ndarray:
    if isinstance(x, Trajectory):
        arr = x.values
    else:
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("DTW needs non-empty sequences")
    return np.ascontiguousarray(arr, dtype=np.float64)


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_array(a), _as_array(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return a, b


@numba.njit(cache=True)
def _dist(a, b, i, j):
    s = 0.0
    for k in range(a.shape[1]):
        d = a[i, k] - b[j, k]
        s += d * d
    return np.sqrt(s)


@numba.njit(cache=True)
def _dp_full(a, b):
    n, m = a.shape[0], b.shape[0]
    D = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            c = _dist(a, b, i, j)
            if i == 0 and j == 0:
                D[i, j] = c
            elif i == 0:
                D[i, j] = c + D[i, j - 1]
            elif j == 0:
                D[i, j] = c + D[i - 1, j]
            else:
                D[i, j] = c + min(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
    return D


@numba.njit(cache=True)
def _dp_window(a, b, lo, hi):
    n, m = a.shape[0], b.shape[0]
    D = np.full((n, m), np.inf)
    for i in range(n):
        for j in range(lo[i], hi[i] + 1):
            c = _dist(a, b, i, j)
            if i == 0 and j == 0:
                D[i, j] = c
                continue
            best = np.inf
            if i > 0 and j > 0 and D[i - 1, j - 1] < best:
                best = D[i - 1, j - 1]
            if i > 0 and D[i - 1, j] < best:
                best = D[i - 1, j]
            if j > 0 and D[i, j - 1] < best:
                best = D[i, j - 1]
            D[i, j] = c + best
    return D


@numba.njit(cache=True)
def _backtrack(D):
    i, j = D.shape[0] - 1, D.shape[1] - 1
    out = np.empty((D.shape[0] + D.shape[1], 2), dtype=np.int64)
    k = 0
    out[k, 0], out[k, 1] = i, j
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = D[i - 1, j - 1], D[i - 1, j], D[i, j - 1]
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        k += 1
        out[k, 0], out[k, 1] = i, j
    return out[k::-1].copy()


def _to_path(arr: np.ndarray) -> WarpPath:
    return WarpPath(tuple((int(i), int(j)) for i, j in arr))


def _exact(a: np.ndarray, b: np.ndarray):
    D = _dp_full(a, b)
    return float(D[-1, -1]), _backtrack(D)


def dtw_exact(a, b) -> tuple[float, WarpPath]:
    """Exact DTW distance and an optimal warp path."""
    a, b = _check_pair(a, b)
    dist, path = _exact(a, b)
    return dist, _to_path(path)


def _coarsen(x: np.ndarray) -> np.ndarray:
    # average adjacent pairs; an odd trailing sample is kept as is
    n = x.shape[0]
    half = n // 2
    out = 0.5 * (x[0 : 2 * half : 2] + x[1 : 2 * half : 2])
    if n % 2:
        out = np.vstack([out, x[-1:]])
    return np.ascontiguousarray(out)


@numba.njit(cache=True)
def _expand_window(path, n, m, radius):
    nc = path[-1, 0] + 1
    row_min = np.full(nc, m, dtype=np.int64)
    row_max = np.zeros(nc, dtype=np.int64)
    for k in range(path.shape[0]):
        ci, cj = path[k, 0], path[k, 1]
        row_min[ci] = min(row_min[ci], cj)
        row_max[ci] = max(row_max[ci], cj)
    # projection of each coarse cell onto its 2x2 block of fine cells
    plo = np.empty(n, dtype=np.int64)
    phi = np.empty(n, dtype=np.int64)
    for i in range(n):
        ci = i // 2
        plo[i] = 2 * row_min[ci]
        phi[i] = min(2 * row_max[ci] + 1, m - 1)
    lo = np.empty(n, dtype=np.int64)
    hi = np.empty(n, dtype=np.int64)
    for i in range(n):
        a = max(0, i - radius)
        b = min(n - 1, i + radius)
        l, h = plo[a], phi[a]
        for r in range(a + 1, b + 1):
            l = min(l, plo[r])
            h = max(h, phi[r])
        lo[i] = max(0, l - radius)
        hi[i] = min(m - 1, h + radius)
    return lo, hi


def _fastdtw(a: np.ndarray, b: np.ndarray, radius: int):
    min_size = radius + 2
    if a.shape[0] <= min_size or b.shape[0] <= min_size:
        return _exact(a, b)
    _, coarse_path = _fastdtw(_coarsen(a), _coarsen(b), radius)
    lo, hi = _expand_window(coarse_path, a.shape[0], b.shape[0], radius)
    D = _dp_window(a, b, lo, hi)
    return float(D[-1, -1]), _backtrack(D)


def fastdtw(a, b, radius: int = DEFAULT_RADIUS) -> tuple[float, WarpPath]:
    """Coarse-to-fine DTW approximation (Salvador & Chan) in linear time for fixed radius."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    a, b = _check_pair(a, b)
    dist, path = _fastdtw(a, b, int(radius))
    return dist, _to_path(path)


def fastdtw_distance(a, b, radius: int = DEFAULT_RADIUS) -> float:
    a, b = _check_pair(a, b)
    return _fastdtw(a, b, int(radius))[0]


def dtw_distance(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(_dp_full(a, b)[-1, -1])
