import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from depthlayers.core import (DegenerateInputWarning, DepthMap, align_scale_shift, composite,
                              inverse, merge_layers, normalize_depth, require_binary)

finite = st.floats(0.0, 10.0, allow_nan=False, allow_infinity=False)


def shapes(min_side=1, max_side=12):
    return st.tuples(st.integers(min_side, max_side), st.integers(min_side, max_side))


def test_composite_identity_cases(rng):
    a, b = rng.uniform(0, 10, (2, 6, 7))
    assert np.array_equal(composite(a, b, np.ones((6, 7))), a)
    assert np.array_equal(composite(a, b, np.zeros((6, 7))), b)


def test_composite_checkerboard():
    m = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = composite(np.full((2, 2), 5.0), np.full((2, 2), 2.0), m)
    assert np.array_equal(out, [[5.0, 2.0], [2.0, 5.0]])


def test_composite_broadcasts_over_channels(rng):
    a, b = rng.random((2, 4, 4, 3))
    m = (rng.random((4, 4)) > 0.5).astype(float)
    out = composite(a, b, m)
    assert np.array_equal(out[m == 1], a[m == 1])
    assert np.array_equal(out[m == 0], b[m == 0])


def test_merge_soft_midpoint():
    out = merge_layers(np.full((3, 3), 4.0), np.full((3, 3), 2.0), np.full((3, 3), 0.5))
    assert np.allclose(out, 3.0)


@given(shapes(), st.integers(0, 2**32 - 1))
def test_merge_equal_layers_is_identity(shape, seed):
    r = np.random.default_rng(seed)
    d = r.uniform(0, 10, shape)
    m = r.random(shape)
    assert np.allclose(merge_layers(d, d, m), d, rtol=0, atol=1e-12)


@given(shapes(), st.integers(0, 2**32 - 1))
def test_composite_and_merge_agree(shape, seed):
    r = np.random.default_rng(seed)
    a, b = r.uniform(0, 10, (2,) + shape)
    m = (r.random(shape) > 0.5).astype(float)
    assert np.array_equal(composite(a, b, m), merge_layers(a, b, m))


def test_inverse_and_binary_checks():
    m = np.array([[0.0, 1.0]])
    assert np.array_equal(inverse(m), [[1.0, 0.0]])
    with pytest.raises(ValueError):
        require_binary(np.array([[0.2]]))
    with pytest.raises(ValueError):
        composite(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)))


def test_normalize_endpoints():
    out = normalize_depth(np.array([[2.0, 4.0]]))
    assert np.array_equal(out, [[0.0, 10.0]])


def test_normalize_spanning_range_unchanged(rng):
    d = rng.uniform(0, 10, (5, 5))
    d[0, 0], d[0, 1] = 0.0, 10.0
    assert np.allclose(normalize_depth(d), d, atol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(2, 10), st.integers(2, 10)), elements=finite))
def test_normalize_preserves_order(d):
    if np.ptp(d) == 0:
        return
    out = normalize_depth(d)
    assert out.min() == 0.0 and out.max() == 10.0
    flat_in, flat_out = d.ravel(), out.ravel()
    i, j = np.triu_indices(flat_in.size, 1)
    # strict order may collapse only through rounding, never invert
    assert np.all((flat_in[i] < flat_in[j]) <= (flat_out[i] <= flat_out[j]))
    assert np.all((flat_in[i] == flat_in[j]) <= (flat_out[i] == flat_out[j]))


def test_normalize_constant_warns():
    with pytest.warns(DegenerateInputWarning):
        out = normalize_depth(np.full((3, 3), 7.0))
    assert np.all(out == 5.0)


def test_normalize_ignores_invalid():
    d = np.array([[1.0, 3.0, 100.0]])
    out = normalize_depth(d, valid=np.array([[True, True, False]]))
    assert out[0, 0] == 0.0 and out[0, 1] == 10.0


def test_align_identity_and_affine():
    x = np.array([1.0, 2.0, 3.0])
    res = align_scale_shift(x, x)
    assert res.scale == pytest.approx(1.0) and res.shift == pytest.approx(0.0, abs=1e-12)
    res = align_scale_shift(x, np.array([3.0, 5.0, 7.0]))
    assert res.scale == pytest.approx(2.0) and res.shift == pytest.approx(1.0)


def test_align_matches_normal_equations():
    for seed in range(100):
        r = np.random.default_rng(seed)
        pred, gt = r.uniform(0, 10, (2, 6, 6))
        res = align_scale_shift(pred, gt)
        s, t = oracles.least_squares(pred, gt)
        assert abs(res.scale - s) < 1e-9 and abs(res.shift - t) < 1e-9


def test_align_residual_is_minimal(rng):
    pred, gt = rng.uniform(0, 10, (2, 8, 8))
    res = align_scale_shift(pred, gt)
    best = np.sum((res.scale * pred + res.shift - gt) ** 2)
    for ds, dt in rng.normal(0, 0.1, (1000, 2)):
        assert best <= np.sum(((res.scale + ds) * pred + res.shift + dt - gt) ** 2)


def test_align_degenerate_prediction():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateInputWarning)
        res = align_scale_shift(np.full((2, 2), 3.0), np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert res.degenerate and res.scale == 0.0 and res.shift == pytest.approx(2.5)


def test_depthmap_validity():
    d = DepthMap(np.array([[1.0, np.nan]]))
    assert d.height == 1 and d.width == 2
    assert np.array_equal(d.valid_mask(), [[True, False]])
