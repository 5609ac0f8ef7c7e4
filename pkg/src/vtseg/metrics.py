"""Segmentation quality metrics: Dice, Hausdorff distance and 3D SSIM."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .distance import squared_distances_naive, squared_edt
from .volume import Grid, LabelMap, VolumeMeta, assert_compatible

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 255.0


class UndefinedMetric(ValueError):
    """The metric has no value for these inputs (e.g. HD with an empty mask)."""


@dataclass(frozen=True)
class MetricRecord:
    volume_id: str
    task_label: str
    dice: float
    hd: float | None  # None when undefined (an empty mask)
    hd_units: str
    ssim: float
    model: str = ""

    def __post_init__(self):
        if not 0.0 <= self.dice <= 1.0:
            raise ValueError(f"dice out of range: {self.dice}")
        if self.hd is not None and not self.hd >= 0.0:
            raise ValueError(f"hd must be >= 0, got {self.hd}")
        if not -1.0 - 1e-12 <= self.ssim <= 1.0 + 1e-12:
            raise ValueError(f"ssim out of range: {self.ssim}")
        if self.hd_units not in ("voxel", "mm"):
            raise ValueError(f"unknown hd units {self.hd_units!r}")

    @property
    def hd_defined(self) -> bool:
        return self.hd is not None


@dataclass(frozen=True)
class DistanceField:
    meta: VolumeMeta
    values: np.ndarray = field(repr=False)


def dice(a: LabelMap, b: LabelMap) -> float:
    """``2|A & B| / (|A| + |B|)``; 1.0 when both masks are empty."""
    assert_compatible(a.meta, b.meta)
    ma, mb = a.mask, b.mask
    total = int(np.count_nonzero(ma)) + int(np.count_nonzero(mb))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(ma & mb)) / total


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a 6-neighbour that is background or off-grid."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = mask.copy()
    n = mask.shape
    for axis in range(3):
        for shift in (0, 2):
            sl = [slice(1, 1 + n[0]), slice(1, 1 + n[1]), slice(1, 1 + n[2])]
            sl[axis] = slice(shift, shift + n[axis])
            interior &= padded[tuple(sl)]
    return mask & ~interior


def boundary_voxels(m: LabelMap) -> np.ndarray:
    """Boundary voxel indices as an ``(N, 3)`` array in C order."""
    return np.argwhere(boundary_mask(m.mask))


def edt(m: LabelMap, spacing=None) -> DistanceField:
    """Euclidean distance (mm) from every voxel center to the nearest foreground voxel."""
    if m.count == 0:
        raise UndefinedMetric("distance transform of an empty mask")
    spacing = m.meta.spacing if spacing is None else spacing
    return DistanceField(m.meta, np.sqrt(squared_edt(m.mask, spacing)))


def _directed_sq(points, target_mask, spacing, mode):
    if mode == "fast":
        field_sq = squared_edt(target_mask, spacing)
        return float(field_sq[tuple(points.T)].max())
    return float(squared_distances_naive(points, np.argwhere(target_mask), spacing).max())


def hausdorff(a: LabelMap, b: LabelMap, mode: str = "fast", surface: bool = True) -> float:
    """Symmetric Hausdorff distance between the boundary voxel sets of ``a`` and ``b``.

    Distances are in mm using the grid spacing (voxel units on a unit
    grid). ``surface=False`` uses every foreground voxel instead of the
    boundary. ``mode="naive"`` evaluates all point pairs directly; both
    modes return identical values.
    """
    if mode not in ("fast", "naive"):
        raise ValueError(f"unknown mode {mode!r}")
    assert_compatible(a.meta, b.meta)
    if a.count == 0 or b.count == 0:
        raise UndefinedMetric("Hausdorff distance is undefined for an empty mask")
    pick = boundary_mask if surface else (lambda m: np.asarray(m, dtype=bool))
    sa, sb = pick(a.mask), pick(b.mask)
    spacing = a.meta.spacing
    d_ab = _directed_sq(np.argwhere(sa), sb, spacing, mode)
    d_ba = _directed_sq(np.argwhere(sb), sa, spacing, mode)
    return math.sqrt(max(d_ab, d_ba))


def gaussian_window(sigma: float = SSIM_SIGMA, radius: int = SSIM_RADIUS) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _smooth(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    for axis in range(x.ndim):
        x = correlate1d(x, g, axis=axis, mode="constant", cval=0.0)
    return x


def _as_intensity(x: Grid, L: float) -> np.ndarray:
    if isinstance(x, LabelMap):
        return x.data.astype(np.float64) * L
    return x.data.astype(np.float64)


def ssim_map(x: Grid, y: Grid, window_sigma: float = SSIM_SIGMA, window_radius: int = SSIM_RADIUS,
             K1: float = SSIM_K1, K2: float = SSIM_K2, L: float = SSIM_L) -> np.ndarray:
    """Local SSIM at every voxel.

    Moments use a separable Gaussian window; near the border the window
    is truncated and renormalized to unit mass. Label maps are scaled
    from {0, 1} to {0, L}.
    """
    if type(x) is not type(y):
        raise TypeError("ssim3d needs two volumes or two label maps")
    assert_compatible(x.meta, y.meta)
    if not L > 0:
        raise ValueError("dynamic range L must be > 0")
    a, b = _as_intensity(x, L), _as_intensity(y, L)
    g = gaussian_window(window_sigma, window_radius)
    norm = _smooth(np.ones_like(a), g)
    mu_a = _smooth(a, g) / norm
    mu_b = _smooth(b, g) / norm
    var_a = _smooth(a * a, g) / norm - mu_a * mu_a
    var_b = _smooth(b * b, g) / norm - mu_b * mu_b
    cov = _smooth(a * b, g) / norm - mu_a * mu_b
    c1 = (K1 * L) ** 2
    c2 = (K2 * L) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim3d(x: Grid, y: Grid, window_sigma: float = SSIM_SIGMA, window_radius: int = SSIM_RADIUS,
           K1: float = SSIM_K1, K2: float = SSIM_K2, L: float = SSIM_L) -> float:
    """Mean local SSIM over all voxels."""
    return float(np.mean(ssim_map(x, y, window_sigma, window_radius, K1, K2, L)))


def evaluate(pred: LabelMap, reference: LabelMap, volume_id: str, task_label: str = "",
             model: str = "", **ssim_kwargs) -> MetricRecord:
    """Dice, Hausdorff and SSIM of ``pred`` against ``reference``.

    An empty mask on either side leaves HD undefined (``hd=None``).
    """
    assert_compatible(pred.meta, reference.meta)
    try:
        hd = hausdorff(pred, reference)
    except UndefinedMetric:
        hd = None
    units = "voxel" if reference.meta.is_unit_isotropic else "mm"
    return MetricRecord(
        volume_id=str(volume_id),
        task_label=str(task_label),
        dice=dice(pred, reference),
        hd=hd,
        hd_units=units,
        ssim=ssim3d(pred, reference, **ssim_kwargs),
        model=model,
    )
