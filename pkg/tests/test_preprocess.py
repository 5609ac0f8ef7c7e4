import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vtseg.preprocess import (PreprocessConfig, binarize, clamp_rescale, crop_fraction,
                              diffuse_gad, preprocess_ct, preprocess_label, preprocess_mri,
                              resample)
from vtseg.volume import LabelMap, Volume


def vol(a, **kw):
    return Volume.from_array(np.asarray(a, dtype=np.float64), **kw)


@pytest.mark.parametrize("x,expected", [(-1500, 0.0), (0, 127.5), (1000, 255.0)])
def test_clamp_rescale_examples(x, expected):
    assert clamp_rescale(vol(np.full((1, 1, 1), x)), -1000, 1000).data[0, 0, 0] == expected


def test_clamp_rescale_rejects_empty_range():
    with pytest.raises(ValueError):
        clamp_rescale(vol(np.zeros((1, 1, 1))), 5, 5)


@given(hnp.arrays(np.float64, (3, 4, 2), elements=st.floats(-3000, 3000)))
def test_clamp_rescale_monotone_and_idempotent(a):
    out = clamp_rescale(vol(a), -1000, 1000).data
    assert out.min() >= 0 and out.max() <= 255
    order = np.argsort(a, axis=None, kind="stable")
    assert np.all(np.diff(out.ravel()[order]) >= 0)
    np.testing.assert_allclose(clamp_rescale(vol(out), 0, 255).data, out, rtol=0, atol=1e-12)


def test_gad_constant_volume_unchanged():
    v = vol(np.full((5, 4, 3), 42.0))
    np.testing.assert_array_equal(diffuse_gad(v, iterations=10).data, v.data)


def test_gad_single_step_hand_fixture():
    # one explicit update by hand: both neighbour differences are 100,
    # conductance exp(-(100/10)^2) = exp(-100), flux magnitude 100*exp(-100)
    flux = 100.0 * math.exp(-100.0)
    expected = np.array([0.05 * flux, 100.0 - 2 * 0.05 * flux, 0.05 * flux]).reshape(3, 1, 1)
    got = diffuse_gad(vol(np.array([0.0, 100.0, 0.0]).reshape(3, 1, 1)), 1, 0.05, 10.0)
    np.testing.assert_allclose(got.data, expected, rtol=1e-14, atol=0)


def test_gad_small_gradient_fixture():
    # at g = K the conductance is exp(-1)
    got = diffuse_gad(vol(np.array([0.0, 10.0, 0.0]).reshape(3, 1, 1)), 1, 0.05, 10.0).data.ravel()
    f = 0.05 * 10.0 * math.exp(-1.0)
    np.testing.assert_allclose(got, [f, 10.0 - 2 * f, f], rtol=1e-14)


def test_gad_rejects_unstable_step():
    with pytest.raises(ValueError):
        diffuse_gad(vol(np.zeros((2, 2, 2))), 1, 0.17)


@given(hnp.arrays(np.float64, st.tuples(*[st.integers(1, 6)] * 3), elements=st.floats(0, 255)),
       st.integers(1, 6), st.floats(0.01, 1 / 6), st.floats(0.5, 50))
def test_gad_conserves_mass_and_max_principle(a, iters, dt, k):
    out = diffuse_gad(vol(a), iters, dt, k).data
    total = a.sum()
    assert abs(out.sum() - total) <= 1e-6 * max(abs(total), 1.0)
    assert out.min() >= a.min() - 1e-9 and out.max() <= a.max() + 1e-9


def test_crop_identity_and_example():
    v = vol(np.arange(400.0).reshape(10, 10, 4), origin=(1.0, 2.0, 3.0), spacing=(0.5, 0.5, 2.0))
    same = crop_fraction(v, 1.0)
    assert same == v
    c = crop_fraction(v, 0.7, "centered")
    assert c.meta.dims == (7, 7, 4)
    np.testing.assert_array_equal(c.data, v.data[1:8, 1:8, :])
    assert c.meta.origin == (1.5, 2.5, 3.0)
    a = crop_fraction(v, 0.7, "anterior-superior")
    np.testing.assert_array_equal(a.data, v.data[:7, :7, :])


@pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
def test_crop_rejects_fraction(fraction):
    with pytest.raises(ValueError):
        crop_fraction(vol(np.zeros((4, 4, 4))), fraction)


@given(st.tuples(st.integers(1, 12), st.integers(1, 12), st.integers(1, 4)),
       st.floats(0.05, 1.0), st.sampled_from(["centered", "anterior-superior"]), st.data())
def test_crop_keeps_world_coordinates(dims, fraction, anchor, data):
    v = vol(np.arange(np.prod(dims), dtype=float).reshape(dims), spacing=(0.7, 1.3, 2.0),
            origin=(-4.0, 1.0, 9.0))
    c = crop_fraction(v, fraction, anchor)
    for axis in (0, 1):
        assert c.meta.dims[axis] == max(1, math.ceil(round(fraction * dims[axis], 9)))
    assert c.meta.dims[2] == dims[2]
    idx = tuple(data.draw(st.integers(0, n - 1)) for n in c.meta.dims)
    # the voxel value encodes its original flat index, so we can find where it came from
    src = np.unravel_index(int(c.data[idx]), dims)
    np.testing.assert_allclose(c.meta.world(idx), v.meta.world(src), atol=1e-12)


def test_resample_identity_is_exact(rng):
    v = vol(rng.normal(size=(5, 6, 7)))
    assert resample(v, (5, 6, 7)) == v


@given(st.tuples(*[st.integers(1, 9)] * 3), st.floats(-100, 100))
def test_resample_constant(dims, c):
    out = resample(vol(np.full((4, 5, 3), c)), dims)
    assert out.meta.dims == dims
    np.testing.assert_allclose(out.data, c, rtol=1e-14, atol=1e-12)


def test_resample_linear_ramp_downsample():
    ramp = np.broadcast_to(np.arange(8.0)[:, None, None], (8, 2, 2))
    out = resample(vol(ramp), (4, 2, 2))
    # new centers sit at source coordinates (j + 0.5) * 2 - 0.5
    expected = (np.arange(4) + 0.5) * 2 - 0.5
    np.testing.assert_allclose(out.data[:, 0, 0], expected, rtol=0, atol=1e-12)
    assert out.meta.spacing == (2.0, 1.0, 1.0)
    assert out.meta.origin == (0.5, 0.0, 0.0)


def test_resample_preserves_extent():
    v = vol(np.zeros((10, 8, 6)), spacing=(0.5, 1.0, 3.0))
    out = resample(v, (4, 16, 7))
    for a in range(3):
        assert math.isclose(out.meta.dims[a] * out.meta.spacing[a],
                            v.meta.dims[a] * v.meta.spacing[a])


def test_resample_label_rules(rng):
    lab = LabelMap.from_array(rng.integers(0, 2, (6, 6, 6)).astype(np.uint8))
    with pytest.raises(ValueError):
        resample(lab, (3, 3, 3), "trilinear")
    out = resample(lab, (11, 4, 9))
    assert isinstance(out, LabelMap) and set(np.unique(out.data)) <= {0, 1}


def test_binarize_examples():
    assert binarize(vol(np.zeros((2, 2, 2))), 0.5).count == 0
    a = np.zeros((3, 3, 3))
    a[1, :, 2] = 255
    np.testing.assert_array_equal(binarize(vol(a), 127).data, (a == 255).astype(np.uint8))
    assert binarize(vol(np.full((1, 1, 1), 0.5)), 0.5).count == 0


def test_mri_chain_full_size_geometry(rng):
    v = vol(rng.uniform(0, 400, size=(320, 290, 36)).astype(np.float32))
    out = preprocess_mri(v, PreprocessConfig.mri())
    assert out.meta.dims == (256, 256, 32)
    assert out.data.min() >= 0 and out.data.max() <= 255


def test_ct_chain_range(rng):
    v = vol(rng.uniform(-3000, 3000, size=(20, 20, 8)))
    out = preprocess_ct(v, PreprocessConfig.ct(target_dims=(16, 16, 8)))
    assert out.meta.dims == (16, 16, 8)
    assert out.data.min() >= 0 and out.data.max() <= 255


def test_mri_chain_twice_equals_extra_diffusion(rng):
    v = vol(rng.uniform(0, 255, size=(12, 10, 6)))
    cfg = PreprocessConfig.mri(crop_fraction=1.0, target_dims=(12, 10, 6))
    twice = preprocess_mri(preprocess_mri(v, cfg), cfg)
    longer = preprocess_mri(v, PreprocessConfig.mri(crop_fraction=1.0, target_dims=(12, 10, 6),
                                                    gad_iterations=2 * cfg.gad_iterations))
    np.testing.assert_allclose(twice.data, longer.data, rtol=0, atol=1e-9)


def test_gad_order_option_changes_chain(rng):
    v = vol(rng.uniform(-50, 300, size=(8, 8, 4)))
    a = preprocess_mri(v, PreprocessConfig.mri(target_dims=(8, 8, 4)))
    b = preprocess_mri(v, PreprocessConfig.mri(target_dims=(8, 8, 4), gad_order="after-clamp"))
    assert a.meta == b.meta and not np.array_equal(a.data, b.data)


def test_label_follows_image_geometry(rng):
    cfg = PreprocessConfig.mri(target_dims=(16, 16, 4))
    v = vol(rng.uniform(0, 255, size=(30, 24, 5)), spacing=(0.5, 0.5, 3.0))
    lab = LabelMap.from_array(rng.integers(0, 2, (30, 24, 5)).astype(np.uint8),
                              spacing=(0.5, 0.5, 3.0))
    assert preprocess_label(lab, cfg).meta == preprocess_mri(v, cfg).meta
    soft = vol(lab.data * 200.0, spacing=(0.5, 0.5, 3.0))
    assert preprocess_label(soft, cfg) == preprocess_label(lab, cfg)


@pytest.mark.parametrize("kw", [dict(clamp_lo=5, clamp_hi=5), dict(crop_fraction=0),
                                dict(gad_time_step=0), dict(target_dims=(0, 1, 1)),
                                dict(crop_anchor="posterior")])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        PreprocessConfig(**kw)
