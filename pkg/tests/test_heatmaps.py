import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posetransfer.errors import KeypointError
from posetransfer.heatmaps import heatmap_argmax, render_heatmaps
from posetransfer.keypoints import KeypointSet


def _kp(xy, grid=32, missing=()):
    pts = np.zeros((18, 3))
    pts[:, :2] = xy
    pts[:, 2] = 1.0
    for j in missing:
        pts[j, 2] = 0.0
    return KeypointSet(pts, (grid, grid))


def test_matches_direct_gaussian_evaluation():
    kp = _kp([10.3, 20.7])
    stack = render_heatmaps(kp, (32, 32), sigma=2.5)
    ys, xs = np.mgrid[0:32, 0:32]
    expected = np.exp(-((xs - 10.3) ** 2 + (ys - 20.7) ** 2) / (2 * 2.5**2))
    np.testing.assert_allclose(stack.maps[:, :, 4], expected, atol=1e-7)


def test_shape_dtype_and_channel_order():
    stack = render_heatmaps(_kp([5, 5]), (32, 32))
    assert stack.maps.shape == (32, 32, 18) and stack.maps.dtype == np.float32
    assert stack.chw().shape == (18, 32, 32)


def test_missing_joints_give_zero_channels():
    stack = render_heatmaps(_kp([5, 5], missing=(2, 9)), (32, 32))
    assert not stack.maps[:, :, 2].any() and not stack.maps[:, :, 9].any()
    assert stack.maps[:, :, 3].max() == pytest.approx(1.0)


def test_x_is_the_column():
    stack = render_heatmaps(_kp([3, 20]), (32, 32))
    assert np.unravel_index(stack.maps[:, :, 0].argmax(), (32, 32)) == (20, 3)


def test_rejects_bad_sigma_and_wrong_grid():
    with pytest.raises(ValueError):
        render_heatmaps(_kp([5, 5]), (32, 32), sigma=0.0)
    with pytest.raises(KeypointError):
        render_heatmaps(_kp([5, 5], grid=64), (32, 32))


@settings(max_examples=80, deadline=None)
@given(x=st.integers(0, 31), y=st.integers(0, 31), sigma=st.floats(0.5, 8.0))
def test_argmax_round_trip_on_integer_points(x, y, sigma):
    kp = _kp([x, y], missing=(17,))
    back = heatmap_argmax(render_heatmaps(kp, (32, 32), sigma))
    assert np.array_equal(back.xy[:17], kp.xy[:17])
    assert not back.present[17]


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0, 31.99), y=st.floats(0, 31.99))
def test_values_are_bounded_and_peak_near_the_joint(x, y):
    maps = render_heatmaps(_kp([x, y]), (32, 32)).maps
    assert maps.min() >= 0 and maps.max() <= 1
    iy, ix = np.unravel_index(maps[:, :, 0].argmax(), (32, 32))
    # nearest pixel center, once the point is pulled inside the center lattice
    nx, ny = min(x, 31.0), min(y, 31.0)
    assert math.hypot(ix - nx, iy - ny) <= math.sqrt(0.5) + 1e-9
