import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from debristrack.preprocess import (
    DEGENERATE_LEVEL,
    ZScaleBounds,
    ZScaleParams,
    zscale,
    zscale_apply,
    zscale_bounds,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_bounds_zero_variance():
    b = zscale_bounds(np.zeros(4))
    assert (b.z1, b.z2) == (0.0, 0.0)


def test_bounds_five_pixels():
    vals = [1, 2, 3, 4, 5]
    median = sorted(vals)[2]
    std = math.sqrt(sum((v - 3) ** 2 for v in vals) / 5)
    assert std == pytest.approx(math.sqrt(2))
    b = zscale_bounds(np.array(vals, dtype=float).reshape(1, 5), ZScaleParams(2.5))
    assert abs(b.z1 - (median - 2.5 * std)) < 1e-9
    assert abs(b.z2 - (median + 2.5 * std)) < 1e-9


def test_single_pixel():
    b = zscale_bounds(np.array([[10.0]]), ZScaleParams(7))
    assert b.z1 == b.z2 == 10.0


def test_empty_input():
    with pytest.raises(ValueError, match="empty input"):
        zscale_bounds(np.zeros((0, 3)))


def test_apply_endpoints_and_clamp():
    b = ZScaleBounds(10.0, 20.0)
    out = zscale_apply(np.array([10.0, 20.0, 15.0, 0.0, 99.0]), b)
    assert out.tolist() == [0.0, 255.0, 127.5, 0.0, 255.0]


def test_degenerate_is_uniform_127():
    out = zscale(np.full((3, 3), 5.0))
    assert np.all(out == DEGENERATE_LEVEL)


def test_params_validation():
    with pytest.raises(ValueError):
        ZScaleParams(0)
    with pytest.raises(ValueError):
        ZScaleBounds(2, 1)


@given(arrays(float, st.integers(1, 40), elements=finite))
def test_output_range(img):
    out = zscale(img)
    assert np.all((out >= 0) & (out <= 255))


@given(arrays(float, st.integers(2, 40), elements=finite))
def test_monotone(img):
    out = zscale(img)
    order = np.argsort(img, kind="stable")
    assert np.all(np.diff(out[order]) >= 0)


@given(arrays(float, st.integers(2, 30), elements=st.floats(-1e3, 1e3)),
       st.floats(0.1, 100), st.floats(-1e3, 1e3))
def test_affine_preserves_rank(img, a, b):
    out1, out2 = zscale(img), zscale(a * img + b)
    # any pair strictly ordered in one output is not reversed in the other
    i, j = np.triu_indices(len(img), 1)
    d1, d2 = np.sign(out1[i] - out1[j]), np.sign(out2[i] - out2[j])
    assert np.all(d1 * d2 >= 0)
