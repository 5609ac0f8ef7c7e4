"""CT and MRI preprocessing chains: clamp/rescale, anisotropic diffusion,
in-plane crop, resampling and binarization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .volume import INPLANE_AXES, Grid, LabelMap, Volume

GAD_MAX_STEP = 1.0 / 6.0  # explicit scheme in 3 spatial dimensions
CROP_ANCHORS = ("centered", "anterior-superior")
GAD_ORDERS = ("before-clamp", "after-clamp")


@dataclass(frozen=True)
class PreprocessConfig:
    modality: str = "mri"
    clamp_lo: float = 0.0
    clamp_hi: float = 255.0
    gad_iterations: int = 5
    gad_time_step: float = 0.0625
    gad_conductance: float = 1.0
    gad_order: str = "before-clamp"
    crop_fraction: float = 0.7
    crop_anchor: str = "centered"
    target_dims: tuple[int, int, int] = (256, 256, 32)
    label_threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "target_dims", tuple(int(d) for d in self.target_dims))
        if self.modality not in ("ct", "mri"):
            raise ValueError(f"modality must be 'ct' or 'mri', got {self.modality!r}")
        if not self.clamp_lo < self.clamp_hi:
            raise ValueError("clamp_lo must be < clamp_hi")
        if not 0 < self.crop_fraction <= 1:
            raise ValueError("crop_fraction must be in (0, 1]")
        if not self.gad_time_step > 0:
            raise ValueError("gad_time_step must be > 0")
        if self.gad_iterations < 0:
            raise ValueError("gad_iterations must be >= 0")
        if self.crop_anchor not in CROP_ANCHORS:
            raise ValueError(f"crop_anchor must be one of {CROP_ANCHORS}")
        if self.gad_order not in GAD_ORDERS:
            raise ValueError(f"gad_order must be one of {GAD_ORDERS}")
        if len(self.target_dims) != 3 or min(self.target_dims) < 1:
            raise ValueError("target_dims must be 3 positive integers")

    @classmethod
    def ct(cls, **overrides) -> "PreprocessConfig":
        return cls(**{"modality": "ct", "clamp_lo": -1000.0, "clamp_hi": 1000.0, **overrides})

    @classmethod
    def mri(cls, **overrides) -> "PreprocessConfig":
        return cls(**{"modality": "mri", **overrides})


def clamp_rescale(v: Volume, lo: float, hi: float) -> Volume:
    """Clamp to ``[lo, hi]`` then map linearly onto ``[0, 255]``."""
    if not lo < hi:
        raise ValueError(f"clamp range is empty: lo={lo} >= hi={hi}")
    x = np.clip(v.data.astype(np.float64), lo, hi)
    return v.with_data(255.0 * (x - lo) / (hi - lo))


def diffuse_gad(v: Volume, iterations: int = 5, time_step: float = 0.0625,
                conductance: float = 1.0) -> Volume:
    """Perona-Malik gradient anisotropic diffusion.

    Explicit scheme on the 6-neighbourhood with exponential conductance
    ``c(g) = exp(-(g/K)^2)`` evaluated on each nearest-neighbour
    difference. Fluxes between a voxel pair are antisymmetric, so the
    total intensity is conserved; boundaries are zero flux. With
    ``time_step <= 1/6`` every update is a convex combination of the
    voxel and its neighbours, which keeps values inside the input range.
    """
    if time_step > GAD_MAX_STEP:
        raise ValueError(f"time_step {time_step} exceeds the stability bound 1/6")
    if time_step <= 0:
        raise ValueError("time_step must be > 0")
    if conductance <= 0:
        raise ValueError("conductance must be > 0")
    img = v.data.astype(np.float64)
    k2 = float(conductance) ** 2
    for _ in range(iterations):
        update = np.zeros_like(img)
        for axis in range(img.ndim):
            if img.shape[axis] < 2:
                continue
            diff = np.diff(img, axis=axis)
            flux = np.exp(-(diff * diff) / k2) * diff
            lower = [slice(None)] * img.ndim
            upper = [slice(None)] * img.ndim
            lower[axis] = slice(None, -1)
            upper[axis] = slice(1, None)
            update[tuple(lower)] += flux
            update[tuple(upper)] -= flux
        img = img + time_step * update
    return v.with_data(img)


def _retained(n: int, fraction: float) -> int:
    # guard against products like 0.7 * 30 = 21.000000000000004
    return max(1, min(n, math.ceil(round(fraction * n, 9))))


def crop_fraction(v: Grid, fraction: float = 0.7, anchor: str = "centered") -> Grid:
    """Keep ``ceil(fraction * n)`` voxels along both in-plane axes.

    ``centered`` starts at ``(n - m) // 2``; ``anterior-superior`` keeps
    the low-index end of both in-plane axes. The slice axis is untouched
    and the origin shifts so retained voxels keep their world position.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"crop fraction must be in (0, 1], got {fraction}")
    if anchor not in CROP_ANCHORS:
        raise ValueError(f"unknown crop anchor {anchor!r}")
    meta = v.meta
    start = [0, 0, 0]
    stop = list(meta.dims)
    for axis in INPLANE_AXES:
        n = meta.dims[axis]
        m = _retained(n, fraction)
        start[axis] = (n - m) // 2 if anchor == "centered" else 0
        stop[axis] = start[axis] + m
    data = v.data[tuple(slice(a, b) for a, b in zip(start, stop))]
    origin = tuple(o + s * sp for o, s, sp in zip(meta.origin, start, meta.spacing))
    return v.with_data(data, meta.with_geometry(dims=data.shape, origin=origin))


def _source_coords(n_src: int, n_dst: int) -> np.ndarray:
    """Source index of each destination voxel center (center-aligned grids)."""
    ratio = n_src / n_dst
    c = (np.arange(n_dst) + 0.5) * ratio - 0.5
    return np.clip(c, 0.0, n_src - 1)


def resample(v: Grid, target_dims, mode: str | None = None) -> Grid:
    """Resample onto ``target_dims`` voxels covering the same physical extent.

    ``mode`` defaults to ``trilinear`` for volumes and ``nearest`` for
    label maps; trilinear on a label map is rejected. Samples beyond the
    outermost source voxel centers replicate the edge value.
    """
    target_dims = tuple(int(d) for d in target_dims)
    if len(target_dims) != 3 or min(target_dims) < 1:
        raise ValueError("target dims must be 3 positive integers")
    is_label = isinstance(v, LabelMap)
    mode = mode or ("nearest" if is_label else "trilinear")
    if mode not in ("trilinear", "nearest"):
        raise ValueError(f"unknown resample mode {mode!r}")
    if is_label and mode != "nearest":
        raise ValueError("label maps can only be resampled with mode='nearest'")

    meta = v.meta
    if target_dims == meta.dims:
        return v.with_data(v.data.copy())

    data = v.data if mode == "nearest" else v.data.astype(np.float64)
    for axis, (n_src, n_dst) in enumerate(zip(meta.dims, target_dims)):
        if n_src == n_dst:
            continue
        c = _source_coords(n_src, n_dst)
        if mode == "nearest":
            idx = np.minimum(np.floor(c + 0.5).astype(np.intp), n_src - 1)
            data = np.take(data, idx, axis=axis)
        else:
            lo = np.floor(c).astype(np.intp)
            hi = np.minimum(lo + 1, n_src - 1)
            t = c - lo
            shape = [1, 1, 1]
            shape[axis] = n_dst
            t = t.reshape(shape)
            data = np.take(data, lo, axis=axis) * (1.0 - t) + np.take(data, hi, axis=axis) * t

    spacing = tuple(s * a / b for s, a, b in zip(meta.spacing, meta.dims, target_dims))
    origin = tuple(
        o + (0.5 * a / b - 0.5) * s
        for o, s, a, b in zip(meta.origin, meta.spacing, meta.dims, target_dims)
    )
    return v.with_data(data, meta.with_geometry(dims=target_dims, spacing=spacing, origin=origin))


def binarize(v: Volume, threshold: float) -> LabelMap:
    """Label voxels strictly greater than ``threshold``."""
    return LabelMap(v.meta, (v.data > threshold).astype(np.uint8))


def preprocess_ct(v: Volume, cfg: PreprocessConfig | None = None) -> Volume:
    cfg = cfg or PreprocessConfig.ct()
    return resample(clamp_rescale(v, cfg.clamp_lo, cfg.clamp_hi), cfg.target_dims)


def preprocess_mri(v: Volume, cfg: PreprocessConfig | None = None) -> Volume:
    cfg = cfg or PreprocessConfig.mri()

    def gad(x):
        return diffuse_gad(x, cfg.gad_iterations, cfg.gad_time_step, cfg.gad_conductance)

    if cfg.gad_order == "before-clamp":
        out = clamp_rescale(gad(v), cfg.clamp_lo, cfg.clamp_hi)
    else:
        out = gad(clamp_rescale(v, cfg.clamp_lo, cfg.clamp_hi))
    out = crop_fraction(out, cfg.crop_fraction, cfg.crop_anchor)
    return resample(out, cfg.target_dims)


def preprocess_volume(v: Volume, cfg: PreprocessConfig) -> Volume:
    return preprocess_ct(v, cfg) if cfg.modality == "ct" else preprocess_mri(v, cfg)


def preprocess_label(label: Grid, cfg: PreprocessConfig) -> LabelMap:
    """Geometric part of the chain applied to a segmentation.

    Non-binary label volumes are binarized at ``cfg.label_threshold``
    first; MRI labels get the same crop as their image.
    """
    if not isinstance(label, LabelMap):
        label = binarize(label, cfg.label_threshold)
    if cfg.modality == "mri":
        label = crop_fraction(label, cfg.crop_fraction, cfg.crop_anchor)
    return resample(label, cfg.target_dims, "nearest")
