import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from vtseg.synth import (Ellipsoid, LungPhantomSpec, PhantomSpec, make_airway_phantom,
                         make_lunglike_phantom, random_airway_spec, random_lung_spec)
from vtseg.volume import assert_compatible


def _point_segment_distance(p, a, b):
    ab = [y - x for x, y in zip(a, b)]
    ap = [y - x for x, y in zip(a, p)]
    denom = sum(c * c for c in ab)
    t = 0.0 if denom == 0 else min(1.0, max(0.0, sum(u * v for u, v in zip(ap, ab)) / denom))
    return math.dist(p, [x + t * c for x, c in zip(a, ab)]), t


def test_straight_tube_matches_enumeration():
    spec = PhantomSpec((12, 20, 12), ((5.0, 2.0, 6.0), (5.0, 17.0, 6.0)), (2.0, 2.0),
                       noise_sigma=0.0)
    _, lab = make_airway_phantom(spec)
    count = 0
    for p in product(range(12), range(20), range(12)):
        d, _ = _point_segment_distance(p, (5, 2, 6), (5, 17, 6))
        count += d <= 2.0
    # cross-section of a radius-2 disc on the lattice has 13 voxels; 16 slices plus caps
    assert lab.count == count
    assert lab.data[5, 10, 6] == 1 and lab.data[5, 10, 9] == 0


def test_curved_tube_matches_bruteforce():
    spec = random_airway_spec((14, 16, 12), seed=3, noise_sigma=0.0)
    _, lab = make_airway_phantom(spec)
    pts, radii = spec.control_points, spec.radii
    expected = np.zeros(spec.dims, np.uint8)
    for p in product(*(range(n) for n in spec.dims)):
        for a, b, ra, rb in zip(pts[:-1], pts[1:], radii[:-1], radii[1:]):
            d, t = _point_segment_distance(p, a, b)
            if d <= ra + t * (rb - ra) + 1e-12:
                expected[p] = 1
                break
    assert np.sum(expected != lab.data) == 0


def test_noise_free_volume_has_two_values():
    v, lab = make_airway_phantom(random_airway_spec((16, 16, 16), seed=1, noise_sigma=0.0))
    assert set(np.unique(v.data)) == {20.0, 180.0}
    np.testing.assert_array_equal(v.data == 20.0, lab.mask)


@given(st.integers(0, 10_000))
def test_airway_deterministic_and_label_independent_of_noise(seed):
    spec = random_airway_spec((12, 12, 12), seed)
    a = make_airway_phantom(spec)
    b = make_airway_phantom(spec)
    assert a[0] == b[0] and a[1] == b[1]
    quiet = random_airway_spec((12, 12, 12), seed, noise_sigma=0.0)
    assert make_airway_phantom(quiet)[1] == a[1]
    assert a[1].count > 0
    assert_compatible(a[0].meta, a[1].meta)
    assert a[0].data.min() >= 0 and a[0].data.max() <= 255


def test_airway_spec_validation():
    with pytest.raises(ValueError):
        PhantomSpec((8, 8, 8), ((1, 1, 1),), (1.0,))
    with pytest.raises(ValueError):
        PhantomSpec((8, 8, 8), ((1, 1, 1), (1, 1, 9)), (1.0, 1.0))
    with pytest.raises(ValueError):
        PhantomSpec((8, 8, 8), ((1, 1, 1), (2, 2, 2)), (1.0, 0.0))
    with pytest.raises(ValueError):
        PhantomSpec((8, 8, 8), ((1, 1, 1), (2, 2, 2)), (1.0, 1.0), tissue_intensity=300)


def test_lung_label_is_ellipsoid_indicator():
    spec = LungPhantomSpec((20, 18, 24), (Ellipsoid((9.5, 8.0, 6.0), (5.0, 4.0, 3.5)),
                                          Ellipsoid((9.0, 9.0, 17.0), (4.0, 6.0, 4.5))),
                           noise_sigma=0.0)
    _, lab = make_lunglike_phantom(spec)
    for p in product(*(range(n) for n in spec.dims)):
        inside = any(sum(((x - c) / a) ** 2 for x, c, a in zip(p, e.center, e.semi_axes)) <= 1
                     for e in spec.lungs)
        assert lab.data[p] == inside


@given(st.integers(0, 10_000))
def test_random_lungs_are_two_components(seed):
    spec = random_lung_spec((24, 24, 24), seed)
    v, lab = make_lunglike_phantom(spec)
    _, n = ndimage.label(lab.mask)  # default structure is 6-connectivity
    assert n == 2
    assert make_lunglike_phantom(spec)[0] == v


def test_lung_spec_validation():
    with pytest.raises(ValueError):
        LungPhantomSpec((10, 10, 10), (Ellipsoid((2.0, 5.0, 5.0), (3.0, 2.0, 2.0)),))
