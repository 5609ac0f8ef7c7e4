"""Training-set augmentation of (Volume, LabelMap) pairs.

Random parameters for pair ``i`` come from
``numpy.random.SeedSequence([seed, i])``, so they depend only on the spec
seed and the pair's position, never on how many pairs precede it in a
run or on scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .volume import AXIS_LABELS, INPLANE_AXES, LabelMap, Volume, assert_compatible

Pair = tuple[Volume, LabelMap]

MAX_ROTATION_DEG = 45.0


@dataclass(frozen=True)
class AugmentSpec:
    noise_sigma_max: float = 0.01
    rotation_range_deg: float = 10.0
    flip_enabled: bool = True
    flip_axis: str = "left-right"
    intensity_range: tuple[float, float] = (0.0, 255.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "intensity_range", tuple(float(x) for x in self.intensity_range))
        if self.noise_sigma_max < 0:
            raise ValueError("noise_sigma_max must be >= 0")
        if not 0 <= self.rotation_range_deg <= MAX_ROTATION_DEG:
            raise ValueError(f"rotation_range_deg must be in [0, {MAX_ROTATION_DEG}]")
        if self.flip_axis not in AXIS_LABELS:
            raise ValueError(f"flip_axis must be one of {AXIS_LABELS}")
        lo, hi = self.intensity_range
        if not lo < hi:
            raise ValueError("intensity_range must be increasing")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned value")


def add_noise(v: Volume, sigma: float, seed, intensity_range=(0.0, 255.0)) -> Volume:
    """Add Gaussian noise with std ``sigma`` on the normalized [0, 1] scale.

    The image is normalized with the fixed ``intensity_range``, noised,
    clamped to [0, 1] and mapped back.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return v.with_data(v.data.copy())
    lo, hi = intensity_range
    rng = np.random.default_rng(seed)
    x = (v.data.astype(np.float64) - lo) / (hi - lo)
    x = np.clip(x + rng.normal(0.0, sigma, size=x.shape), 0.0, 1.0)
    return v.with_data(x * (hi - lo) + lo)


def _axis_index(axis) -> int:
    if isinstance(axis, str):
        try:
            return AXIS_LABELS.index(axis)
        except ValueError:
            raise ValueError(f"unknown axis {axis!r}; expected one of {AXIS_LABELS}") from None
    if axis not in (0, 1, 2):
        raise ValueError(f"axis index must be 0, 1 or 2, got {axis}")
    return int(axis)


def mirror_flip(pair: Pair, axis="left-right") -> Pair:
    """Reverse both image and label along ``axis``."""
    vol, lab = pair
    ax = _axis_index(axis)
    return (vol.with_data(np.flip(vol.data, ax).copy()),
            lab.with_data(np.flip(lab.data, ax).copy()))


def _rotated_coords(shape2d, angle_deg):
    n0, n1 = shape2d
    c0, c1 = (n0 - 1) / 2.0, (n1 - 1) / 2.0
    theta = math.radians(angle_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    i, j = np.meshgrid(np.arange(n0, dtype=np.float64), np.arange(n1, dtype=np.float64),
                       indexing="ij")
    di, dj = i - c0, j - c1
    # inverse mapping: output voxel -> source position
    u = cos * di + sin * dj + c0
    w = -sin * di + cos * dj + c1
    eps = 1e-9
    inside = (u >= -eps) & (u <= n0 - 1 + eps) & (w >= -eps) & (w <= n1 - 1 + eps)
    return np.clip(u, 0, n0 - 1), np.clip(w, 0, n1 - 1), inside


def _to_plane_first(data, plane):
    rest = [a for a in range(3) if a not in plane]
    return np.transpose(data, (*plane, *rest)), (*plane, *rest)


def rotate_pair(pair: Pair, angle_deg: float, fill: float = 0.0,
                plane=INPLANE_AXES) -> Pair:
    """Rotate every slice of ``plane`` about the slice center.

    Bilinear sampling in-plane (trilinear with an integral slice
    coordinate) for the image, nearest for the label. Voxels whose source
    falls outside the slice get ``fill`` (label: 0).
    """
    if abs(angle_deg) > MAX_ROTATION_DEG:
        raise ValueError(f"|angle| must be <= {MAX_ROTATION_DEG} degrees, got {angle_deg}")
    vol, lab = pair
    assert_compatible(vol.meta, lab.meta)
    if angle_deg == 0:
        return vol.with_data(vol.data.copy()), lab.with_data(lab.data.copy())
    plane = tuple(plane)
    img, order = _to_plane_first(vol.data.astype(np.float64), plane)
    seg, _ = _to_plane_first(lab.data, plane)
    n0, n1 = img.shape[:2]
    u, w, inside = _rotated_coords((n0, n1), angle_deg)

    u0 = np.floor(u).astype(np.intp)
    w0 = np.floor(w).astype(np.intp)
    u1 = np.minimum(u0 + 1, n0 - 1)
    w1 = np.minimum(w0 + 1, n1 - 1)
    tu = (u - u0)[..., None]
    tw = (w - w0)[..., None]
    out = ((img[u0, w0] * (1 - tu) + img[u1, w0] * tu) * (1 - tw)
           + (img[u0, w1] * (1 - tu) + img[u1, w1] * tu) * tw)
    out[~inside] = fill

    un = np.minimum(np.floor(u + 0.5).astype(np.intp), n0 - 1)
    wn = np.minimum(np.floor(w + 0.5).astype(np.intp), n1 - 1)
    lab_out = seg[un, wn].copy()
    lab_out[~inside] = 0

    inverse = np.argsort(order)
    return (vol.with_data(np.transpose(out, inverse)),
            lab.with_data(np.transpose(lab_out, inverse)))


@dataclass(frozen=True)
class AugmentParams:
    noise_sigma: float
    noise_seed: int
    angle_deg: float


def draw_params(spec: AugmentSpec, index: int) -> AugmentParams:
    """Augmentation parameters for the pair at ``index``."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    sigma = float(rng.uniform(0.0, spec.noise_sigma_max))
    angle = float(rng.uniform(-spec.rotation_range_deg, spec.rotation_range_deg))
    noise_seed = int(rng.integers(0, 2**63))
    return AugmentParams(noise_sigma=sigma, noise_seed=noise_seed, angle_deg=angle)


@dataclass(frozen=True)
class AugmentedPair:
    volume: Volume = field(repr=False)
    label: LabelMap = field(repr=False)
    kind: str  # original | noise | flip | rotate
    source_index: int
    params: dict

    @property
    def pair(self) -> Pair:
        return self.volume, self.label


def augment_pair(pair: Pair, index: int, spec: AugmentSpec) -> list[AugmentedPair]:
    vol, lab = pair
    p = draw_params(spec, index)
    out = [AugmentedPair(vol, lab, "original", index, {})]
    noised = add_noise(vol, p.noise_sigma, p.noise_seed, spec.intensity_range)
    out.append(AugmentedPair(noised, lab, "noise", index,
                             {"sigma": p.noise_sigma, "noise_seed": p.noise_seed}))
    if spec.flip_enabled:
        fv, fl = mirror_flip(pair, spec.flip_axis)
        out.append(AugmentedPair(fv, fl, "flip", index, {"axis": spec.flip_axis}))
    rv, rl = rotate_pair(pair, p.angle_deg)
    out.append(AugmentedPair(rv, rl, "rotate", index, {"angle_deg": p.angle_deg}))
    return out


def augment_dataset(pairs, spec: AugmentSpec) -> list[AugmentedPair]:
    """Original plus noised, flipped and rotated copies of every pair, in input order."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("augment_dataset needs at least one pair")
    out = []
    for i, pair in enumerate(pairs):
        out.extend(augment_pair(pair, i, spec))
    return out
