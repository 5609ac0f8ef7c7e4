"""Exact Euclidean distance transform by separable lower-envelope passes.

Each axis is processed with the 1D squared-distance transform of
Felzenszwalb and Huttenlocher (lower envelope of parabolas), weighted by
the squared spacing of that axis. Axes are processed in order 0, 1, 2,
so the value at a voxel is the float expression
``((w0*d0*d0) + w1*d1*d1) + w2*d2*d2`` minimized over foreground voxels,
and because float addition is monotone the separable minimum equals the
brute-force minimum of that same expression exactly.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _envelope_rows(f, w, out):  # pragma: no cover - compiled
    rows, n = f.shape
    v = np.empty(n, np.int64)
    z = np.empty(n + 1, np.float64)
    inf = np.inf
    for r in range(rows):
        k = -1
        for q in range(n):
            fq = f[r, q]
            if fq == inf:
                continue
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -inf
                z[1] = inf
                continue
            while True:
                vk = v[k]
                s = ((fq + w * q * q) - (f[r, vk] + w * vk * vk)) / (2.0 * w * (q - vk))
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = inf
        if k < 0:
            for p in range(n):
                out[r, p] = inf
            continue
        k = 0
        for p in range(n):
            while z[k + 1] < p:
                k += 1
            d = p - v[k]
            out[r, p] = f[r, v[k]] + w * (d * d)


def squared_edt(mask: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Squared distance (mm^2) from every voxel to the nearest True voxel.

    Voxels are at infinite distance when ``mask`` is empty.
    """
    mask = np.asarray(mask, dtype=bool)
    f = np.where(mask, 0.0, np.inf)
    for axis, s in enumerate(spacing):
        moved = np.moveaxis(f, axis, -1)
        shape = moved.shape
        rows = np.ascontiguousarray(moved.reshape(-1, shape[-1]))
        out = np.empty_like(rows)
        _envelope_rows(rows, float(s) * float(s), out)
        f = np.moveaxis(out.reshape(shape), -1, axis)
    return np.ascontiguousarray(f)


def squared_distances_naive(points: np.ndarray, targets: np.ndarray, spacing,
                            chunk: int = 4096) -> np.ndarray:
    """Minimum squared distance from each point to the target set, by brute force.

    Uses the same per-axis accumulation order as :func:`squared_edt`.
    """
    w = [float(s) * float(s) for s in spacing]
    points = np.asarray(points, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    best = np.empty(len(points))
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk]
        d2 = None
        for axis in range(3):
            d = p[:, axis, None] - targets[None, :, axis]
            term = w[axis] * (d * d)
            d2 = term if d2 is None else d2 + term
        best[start:start + chunk] = d2.min(axis=1)
    return best
