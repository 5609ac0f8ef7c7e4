"""Deterministic synthetic phantoms with exact ground truth.

Airway phantoms are dark tubes of varying radius around a piecewise
linear centerline in brighter tissue, standing in for vocal-tract MRI.
Lung-like phantoms are two dark ellipsoids in a brighter body, standing
in for the CT pre-training data. Coordinates are voxel indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import LabelMap, Volume, VolumeMeta

Point = tuple[float, float, float]


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    control_points: tuple[Point, ...]
    radii: tuple[float, ...]
    tissue_intensity: float = 180.0
    air_intensity: float = 20.0
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "control_points",
                           tuple(tuple(float(c) for c in p) for p in self.control_points))
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        if len(self.control_points) < 2:
            raise ValueError("a centerline needs at least 2 control points")
        if len(self.radii) != len(self.control_points):
            raise ValueError("one radius per control point is required")
        if min(self.radii) <= 0:
            raise ValueError("radii must be > 0")
        _check_intensities(self.tissue_intensity, self.air_intensity, self.noise_sigma)
        for p in self.control_points:
            if len(p) != 3 or any(not 0 <= c <= n - 1 for c, n in zip(p, self.dims)):
                raise ValueError(f"centerline point {p} leaves the grid {self.dims}")


@dataclass(frozen=True)
class Ellipsoid:
    center: Point
    semi_axes: Point


@dataclass(frozen=True)
class LungPhantomSpec:
    dims: tuple[int, int, int]
    lungs: tuple[Ellipsoid, ...]
    tissue_intensity: float = 160.0
    air_intensity: float = 25.0
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        _check_intensities(self.tissue_intensity, self.air_intensity, self.noise_sigma)
        for e in self.lungs:
            if min(e.semi_axes) <= 0:
                raise ValueError("ellipsoid semi-axes must be > 0")
            for c, a, n in zip(e.center, e.semi_axes, self.dims):
                if c - a < 0 or c + a > n - 1:
                    raise ValueError(f"ellipsoid {e} extends outside the grid {self.dims}")


def _check_intensities(tissue, air, sigma):
    for v in (tissue, air):
        if not 0 <= v <= 255:
            raise ValueError("intensities must lie in [0, 255]")
    if sigma < 0:
        raise ValueError("noise_sigma must be >= 0")


def _grid(dims):
    return np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")


def tube_mask(dims, control_points, radii) -> np.ndarray:
    """Voxels within the linearly interpolated radius of some centerline segment."""
    x = np.stack(_grid(dims), axis=-1)
    mask = np.zeros(tuple(dims), dtype=bool)
    pts = np.asarray(control_points, dtype=np.float64)
    for (a, b), (ra, rb) in zip(zip(pts[:-1], pts[1:]), zip(radii[:-1], radii[1:])):
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0:
            t = np.zeros(dims)
        else:
            t = np.clip(((x - a) @ ab) / denom, 0.0, 1.0)
        nearest = a + t[..., None] * ab
        dist2 = np.sum((x - nearest) ** 2, axis=-1)
        r = ra + t * (rb - ra)
        mask |= dist2 <= r * r
    return mask


def _render(mask, tissue, air, sigma, seed, dims):
    img = np.where(mask, air, tissue).astype(np.float64)
    if sigma > 0:
        rng = np.random.default_rng(seed)
        img = np.clip(img + rng.normal(0.0, sigma * 255.0, size=img.shape), 0.0, 255.0)
    meta = VolumeMeta(dims)
    return Volume(meta, img), LabelMap(meta, mask.astype(np.uint8))


def make_airway_phantom(spec: PhantomSpec) -> tuple[Volume, LabelMap]:
    mask = tube_mask(spec.dims, spec.control_points, spec.radii)
    return _render(mask, spec.tissue_intensity, spec.air_intensity, spec.noise_sigma,
                   spec.seed, spec.dims)


def ellipsoid_mask(dims, ellipsoids) -> np.ndarray:
    grid = _grid(dims)
    mask = np.zeros(tuple(dims), dtype=bool)
    for e in ellipsoids:
        q = sum(((g - c) / a) ** 2 for g, c, a in zip(grid, e.center, e.semi_axes))
        mask |= q <= 1.0
    return mask


def make_lunglike_phantom(spec: LungPhantomSpec) -> tuple[Volume, LabelMap]:
    mask = ellipsoid_mask(spec.dims, spec.lungs)
    return _render(mask, spec.tissue_intensity, spec.air_intensity, spec.noise_sigma,
                   spec.seed, spec.dims)


def random_airway_spec(dims, seed: int, noise_sigma: float = 0.02) -> PhantomSpec:
    """A curved tube running along the superior-inferior axis.

    The tube enters near the anterior-superior corner, bends back, and
    descends; control points and radii vary with ``seed``.
    """
    dims = tuple(int(d) for d in dims)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA1]))
    n0, n1, n2 = dims
    m0, m1, m2 = (max(1.0, 0.15 * n) for n in dims)
    ys = np.linspace(m1, n1 - 1 - m1, 4)
    xs = [rng.uniform(m0, 0.45 * n0), rng.uniform(0.4 * n0, 0.6 * n0),
          rng.uniform(0.45 * n0, n0 - 1 - m0), rng.uniform(0.45 * n0, n0 - 1 - m0)]
    zs = rng.uniform(0.5 * n2 - 0.1 * n2, 0.5 * n2 + 0.1 * n2, 4)
    zs = np.clip(zs, m2, n2 - 1 - m2)
    scale = min(dims) / 32.0
    radii = rng.uniform(1.8, 3.5, 4) * scale
    radii[1] = rng.uniform(1.0, 1.8) * scale  # a narrow constriction
    pts = tuple((float(x), float(y), float(z)) for x, y, z in zip(xs, ys, zs))
    return PhantomSpec(dims, pts, tuple(float(r) for r in radii), noise_sigma=noise_sigma,
                       seed=int(rng.integers(0, 2**63)))


def random_lung_spec(dims, seed: int, noise_sigma: float = 0.02) -> LungPhantomSpec:
    """Two disjoint ellipsoids side by side across the left-right axis."""
    dims = tuple(int(d) for d in dims)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1B]))
    n0, n1, n2 = dims
    lungs = []
    for side in (0.27, 0.73):
        a0 = rng.uniform(0.22, 0.32) * n0
        a1 = rng.uniform(0.25, 0.35) * n1
        a2 = rng.uniform(0.13, 0.17) * n2
        c0 = rng.uniform(0.45, 0.55) * (n0 - 1)
        c1 = rng.uniform(0.45, 0.55) * (n1 - 1)
        c2 = side * (n2 - 1)
        a0 = min(a0, c0, n0 - 1 - c0)
        a1 = min(a1, c1, n1 - 1 - c1)
        a2 = min(a2, c2, n2 - 1 - c2)
        lungs.append(Ellipsoid((c0, c1, c2), (a0, a1, a2)))
    return LungPhantomSpec(dims, tuple(lungs), noise_sigma=noise_sigma,
                           seed=int(rng.integers(0, 2**63)))
