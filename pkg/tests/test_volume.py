import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vtseg.volume import (AXIS_LABELS, INPLANE_AXES, SLICE_AXIS, DimensionMismatch, LabelMap,
                          RaterStack, SpacingMismatch, Volume, VolumeError, VolumeMeta,
                          assert_compatible)


def test_axis_constants_are_consistent():
    assert AXIS_LABELS[SLICE_AXIS] == "left-right"
    assert set(INPLANE_AXES) | {SLICE_AXIS} == {0, 1, 2}


def test_corner_voxel_indexing(corner_volume):
    # data[i, j, k] is the voxel at index (i, j, k)
    assert corner_volume.data[3, 2, 1] == 321
    assert corner_volume.data[1, 0, 0] == 100
    assert corner_volume.meta.dims == (4, 3, 2)


@pytest.mark.parametrize("dims", [(0, 2, 2), (2, -1, 2)])
def test_meta_rejects_bad_dims(dims):
    with pytest.raises(VolumeError):
        VolumeMeta(dims)


@pytest.mark.parametrize("spacing", [(0, 1, 1), (1, -2, 1), (1, 1, float("inf")), (1, float("nan"), 1)])
def test_meta_rejects_bad_spacing(spacing):
    with pytest.raises(VolumeError):
        VolumeMeta((2, 2, 2), spacing)


def test_world_coordinates():
    m = VolumeMeta((4, 4, 4), (0.5, 2.0, 1.0), (10.0, -5.0, 0.0))
    assert m.world((2, 3, 1)) == (11.0, 1.0, 1.0)


def test_volume_shape_and_finiteness():
    with pytest.raises(VolumeError):
        Volume(VolumeMeta((2, 2, 2)), np.zeros((2, 2, 3)))
    bad = np.zeros((2, 2, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(VolumeError):
        Volume(VolumeMeta((2, 2, 2)), bad)


def test_volume_data_is_read_only():
    v = Volume.from_array(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1


def test_volume_copies_input():
    a = np.zeros((2, 2, 2))
    v = Volume.from_array(a)
    a[0, 0, 0] = 7
    assert v.data[0, 0, 0] == 0


@given(st.integers(2, 255))
def test_labelmap_rejects_non_binary(value):
    data = np.zeros((2, 2, 2), dtype=np.uint8)
    data[1, 1, 1] = value
    with pytest.raises(VolumeError):
        LabelMap.from_array(data)


def test_labelmap_accepts_bool_and_binary():
    lab = LabelMap.from_array(np.eye(3, dtype=bool)[:, :, None].repeat(2, axis=2))
    assert lab.data.dtype == np.uint8
    assert lab.count == 6


def test_rater_stack_requires_two_compatible_raters():
    a = LabelMap.from_array(np.zeros((2, 2, 2), np.uint8))
    with pytest.raises(VolumeError):
        RaterStack("v", (a,))
    b = LabelMap.from_array(np.zeros((2, 2, 3), np.uint8))
    with pytest.raises(DimensionMismatch):
        RaterStack("v", (a, b))
    stack = RaterStack("v", (a, a, a))
    assert stack.decisions().shape == (3, 8)


def test_assert_compatible_examples():
    a = VolumeMeta((4, 4, 4))
    assert_compatible(a, VolumeMeta((4, 4, 4)))
    with pytest.raises(DimensionMismatch) as exc:
        assert_compatible(a, VolumeMeta((4, 4, 5)))
    assert exc.value.axis == 2 and "axis 3" in str(exc.value)
    assert_compatible(VolumeMeta((4, 4, 4), (1.0, 1.0, 1.0)),
                      VolumeMeta((4, 4, 4), (1.0, 1.0, 1.0000001)))
    with pytest.raises(SpacingMismatch) as exc:
        assert_compatible(a, VolumeMeta((4, 4, 4), (1.0, 1.1, 1.0)))
    assert exc.value.axis == 1


def test_equality_includes_meta_and_dtype():
    a = Volume.from_array(np.ones((2, 2, 2), np.float32))
    assert a == Volume.from_array(np.ones((2, 2, 2), np.float32))
    assert a != Volume.from_array(np.ones((2, 2, 2), np.float64))
    assert a != Volume.from_array(np.ones((2, 2, 2), np.float32), spacing=(2, 1, 1))
