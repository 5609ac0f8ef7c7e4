"""Volumetric data types shared by every other module.

Array layout
------------
Every voxel array is a numpy array of shape ``(nx, ny, nz)`` indexed as
``data[i, j, k]``. Axis 0 and axis 1 span one sagittal slice
(anterior-posterior, superior-inferior) and axis 2 walks across sagittal
slices (left-right). On disk (NRRD) axis 0 is the fastest-varying index,
which is numpy Fortran order.

World coordinates are axis aligned: ``world = origin + index * spacing``,
all in millimeters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

#: Orientation tag of each array axis, in array order.
AXIS_LABELS = ("anterior-posterior", "superior-inferior", "left-right")
#: Index of the axis that walks across sagittal slices.
SLICE_AXIS = 2
#: The two axes spanning one sagittal slice.
INPLANE_AXES = (0, 1)

SPACING_RTOL = 1e-6


class VolumeError(ValueError):
    """Invalid volume construction or incompatible geometry."""


class DimensionMismatch(VolumeError):
    def __init__(self, axis: int, a: int, b: int):
        self.axis = axis
        super().__init__(f"dimension mismatch on axis {axis + 1}: {a} != {b}")


class SpacingMismatch(VolumeError):
    def __init__(self, axis: int, a: float, b: float):
        self.axis = axis
        super().__init__(f"spacing mismatch on axis {axis + 1}: {a!r} != {b!r}")


def _triple(values, name, cast):
    values = tuple(cast(v) for v in values)
    if len(values) != 3:
        raise VolumeError(f"{name} must have 3 components, got {len(values)}")
    return values


@dataclass(frozen=True)
class VolumeMeta:
    """Grid geometry of a volume.

    ``extra_fields`` carries unrecognized NRRD header lines verbatim so
    they survive a read/write cycle. ``spacing_defaulted`` is set when the
    source file declared no spacing and (1, 1, 1) mm was assumed.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    axis_labels: tuple[str, str, str] = AXIS_LABELS
    extra_fields: tuple[tuple[str, str], ...] = ()
    spacing_defaulted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dims", _triple(self.dims, "dims", int))
        object.__setattr__(self, "spacing", _triple(self.spacing, "spacing", float))
        object.__setattr__(self, "origin", _triple(self.origin, "origin", float))
        object.__setattr__(self, "axis_labels", _triple(self.axis_labels, "axis_labels", str))
        object.__setattr__(self, "extra_fields", tuple((str(k), str(v)) for k, v in self.extra_fields))
        for axis, n in enumerate(self.dims):
            if n < 1:
                raise VolumeError(f"dims[{axis}] must be >= 1, got {n}")
        for axis, s in enumerate(self.spacing):
            if not (math.isfinite(s) and s > 0):
                raise VolumeError(f"spacing[{axis}] must be finite and > 0, got {s}")
        if not all(math.isfinite(o) for o in self.origin):
            raise VolumeError("origin must be finite")

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def is_unit_isotropic(self) -> bool:
        return all(s == 1.0 for s in self.spacing)

    def world(self, index: Sequence[float]) -> tuple[float, float, float]:
        """World coordinate (mm) of a voxel center given by ``index``."""
        return tuple(o + i * s for o, i, s in zip(self.origin, index, self.spacing))

    def with_geometry(self, dims=None, spacing=None, origin=None) -> "VolumeMeta":
        return replace(
            self,
            dims=self.dims if dims is None else dims,
            spacing=self.spacing if spacing is None else spacing,
            origin=self.origin if origin is None else origin,
        )


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar intensity grid. ``data`` is read-only after construction."""

    meta: VolumeMeta
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype.kind not in "uif" or data.dtype == np.float16:
            raise VolumeError(f"unsupported voxel dtype {data.dtype}")
        if data.shape != self.meta.dims:
            raise VolumeError(f"data shape {data.shape} does not match dims {self.meta.dims}")
        if data.dtype.kind == "f" and not np.all(np.isfinite(data)):
            raise VolumeError("volume contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> "Volume":
        data = np.asarray(data)
        return cls(VolumeMeta(data.shape, spacing, origin), data)

    def with_data(self, data, meta: VolumeMeta | None = None) -> "Volume":
        data = np.asarray(data)
        meta = meta or self.meta
        if data.shape != meta.dims:
            meta = meta.with_geometry(dims=data.shape)
        return Volume(meta, data)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.meta == other.meta
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Binary segmentation grid; every voxel is exactly 0 or 1 (uint8)."""

    meta: VolumeMeta
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != self.meta.dims:
            raise VolumeError(f"data shape {data.shape} does not match dims {self.meta.dims}")
        if data.dtype == bool:
            data = data.astype(np.uint8)
        elif not np.all((data == 0) | (data == 1)):
            raise VolumeError("label map values must be exactly 0 or 1")
        object.__setattr__(self, "data", _frozen(data.astype(np.uint8)))

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> "LabelMap":
        data = np.asarray(data)
        return cls(VolumeMeta(data.shape, spacing, origin), data)

    def with_data(self, data, meta: VolumeMeta | None = None) -> "LabelMap":
        data = np.asarray(data)
        meta = meta or self.meta
        if data.shape != meta.dims:
            meta = meta.with_geometry(dims=data.shape)
        return LabelMap(meta, data)

    @property
    def mask(self) -> np.ndarray:
        return self.data.astype(bool)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.meta == other.meta and np.array_equal(self.data, other.data)


Grid = Union[Volume, LabelMap]


@dataclass(frozen=True)
class RaterStack:
    """Segmentations of one volume by K >= 2 raters on a shared grid."""

    volume_id: str
    raters: tuple[LabelMap, ...]

    def __post_init__(self):
        raters = tuple(self.raters)
        if len(raters) < 2:
            raise VolumeError(f"a rater stack needs at least 2 raters, got {len(raters)}")
        for r in raters[1:]:
            assert_compatible(raters[0].meta, r.meta)
        object.__setattr__(self, "raters", raters)

    @property
    def meta(self) -> VolumeMeta:
        return self.raters[0].meta

    def decisions(self) -> np.ndarray:
        """Rater decisions as a ``(K, nvoxels)`` uint8 matrix."""
        return np.stack([r.data.reshape(-1) for r in self.raters])


def assert_compatible(a: VolumeMeta, b: VolumeMeta) -> None:
    """Raise unless ``a`` and ``b`` share dims and (within 1e-6 rel.) spacing."""
    for axis, (da, db) in enumerate(zip(a.dims, b.dims)):
        if da != db:
            raise DimensionMismatch(axis, da, db)
    for axis, (sa, sb) in enumerate(zip(a.spacing, b.spacing)):
        if abs(sa - sb) > SPACING_RTOL * max(abs(sa), abs(sb)):
            raise SpacingMismatch(axis, sa, sb)
