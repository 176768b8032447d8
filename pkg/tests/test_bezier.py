"""Geometry tests: Bernstein evaluation vs de Casteljau, grid construction,
alignment vs a rectangle-crop oracle, polygonization, and raster IoU."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textspot import autodiff as ad
from textspot.autodiff import Tensor
from textspot.bezier import (
    BezierRegion,
    bezier_align,
    bezier_point,
    polygon_iou,
    region_grid,
    region_to_polygon,
)
from textspot.errors import InputError
from textspot.gradcheck import check_gradients
from textspot.rng import Xoshiro256


def de_casteljau(curve, t):
    pts = [np.asarray(p, dtype=np.float64) for p in curve]
    while len(pts) > 1:
        pts = [(1 - t) * a + t * b for a, b in zip(pts, pts[1:])]
    return pts[0]


def rect_region(x0, y0, x1, y1):
    """Axis-aligned rectangle as straight-line curves."""
    top = np.stack([[x0 + (x1 - x0) * t, y0] for t in (0, 1 / 3, 2 / 3, 1)])
    bottom = np.stack([[x0 + (x1 - x0) * t, y1] for t in (0, 1 / 3, 2 / 3, 1)])
    return BezierRegion(top=top, bottom=bottom)


def curved_region(seed=0, scale=10.0):
    stream = Xoshiro256(seed)
    top = stream.uniform_array((4, 2), 0.0, scale)
    top = top[np.argsort(top[:, 0])]
    bottom = top + np.array([0.0, scale / 3]) + stream.uniform_array((4, 2), -0.5, 0.5)
    return BezierRegion(top=top, bottom=bottom)


# ---------------------------------------------------------------------------
# bezier_point


def test_bezier_point_endpoints():
    curve = [(0.0, 0.0), (1.0, 2.0), (3.0, -1.0), (4.0, 4.0)]
    np.testing.assert_array_equal(bezier_point(curve, 0.0), curve[0])
    np.testing.assert_array_equal(bezier_point(curve, 1.0), curve[3])


def test_bezier_point_collinear_midpoint():
    curve = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]
    np.testing.assert_allclose(bezier_point(curve, 0.5), [1.5, 0.0], atol=1e-15)


def test_bezier_point_matches_de_casteljau():
    stream = Xoshiro256(42)
    curve = stream.uniform_array((4, 2), -5.0, 5.0)
    got = bezier_point(curve, 0.37)
    np.testing.assert_allclose(got, de_casteljau(curve, 0.37), atol=1e-12)


def test_bezier_point_rejects_out_of_range_t():
    curve = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]
    with pytest.raises(InputError):
        bezier_point(curve, -0.01)
    with pytest.raises(InputError):
        bezier_point(curve, 1.01)


def test_bezier_point_de_casteljau_thousand_cases():
    stream = Xoshiro256(7)
    worst = 0.0
    for _ in range(1000):
        curve = stream.uniform_array((4, 2), -20.0, 20.0)
        t = stream.next_float()
        diff = np.abs(bezier_point(curve, t) - de_casteljau(curve, t)).max()
        worst = max(worst, diff)
    assert worst < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_bezier_point_de_casteljau_property(seed, t):
    curve = Xoshiro256(seed).uniform_array((4, 2), -20.0, 20.0)
    np.testing.assert_allclose(bezier_point(curve, t), de_casteljau(curve, t), atol=1e-12)


# ---------------------------------------------------------------------------
# region_grid


def test_region_grid_rectangle_lattice():
    region = rect_region(0.0, 0.0, 6.0, 2.0)
    grid = region_grid(region, 2, 4)
    assert grid.points.shape == (2, 4, 2)
    xs = np.array([0.0, 2.0, 4.0, 6.0])
    np.testing.assert_allclose(grid.points[0, :, 0], xs, atol=1e-12)
    np.testing.assert_allclose(grid.points[0, :, 1], 0.5, atol=1e-12)  # s = 0.25 of height 2
    np.testing.assert_allclose(grid.points[1, :, 1], 1.5, atol=1e-12)


def test_region_grid_single_column_at_t0():
    region = curved_region(seed=3)
    grid = region_grid(region, 3, 1)
    assert grid.points.shape == (3, 1, 2)
    top0 = bezier_point(region.top, 0.0)
    bot0 = bezier_point(region.bottom, 0.0)
    for i in range(3):
        s = (i + 0.5) / 3
        np.testing.assert_allclose(grid.points[i, 0], (1 - s) * top0 + s * bot0, atol=1e-12)


def test_region_grid_points_collinear_with_curve_endpoints():
    region = curved_region(seed=9)
    out_h, out_w = 5, 7
    grid = region_grid(region, out_h, out_w)
    for j in range(out_w):
        t = j / (out_w - 1)
        p_top = bezier_point(region.top, t)
        p_bot = bezier_point(region.bottom, t)
        d = p_bot - p_top
        for i in range(out_h):
            q = grid.points[i, j] - p_top
            cross = d[0] * q[1] - d[1] * q[0]
            assert abs(cross) < 1e-12


# ---------------------------------------------------------------------------
# bezier_align


def test_bezier_align_constant_map():
    fm = Tensor(np.full((3, 10, 12), 2.5))
    region = rect_region(2.0, 2.0, 9.0, 7.0)
    out = bezier_align(fm, region, 4, 6, 1.0)
    assert out.shape == (3, 4, 6)
    np.testing.assert_allclose(out.data, 2.5, atol=1e-9)


def test_bezier_align_rectangle_matches_bilinear_crop_oracle():
    stream = Xoshiro256(11)
    fm_np = stream.uniform_array((2, 9, 11), -1.0, 1.0)
    x0, y0, x1, y1 = 1.5, 2.0, 8.0, 6.5
    out_h, out_w = 4, 6
    out = bezier_align(Tensor(fm_np), rect_region(x0, y0, x1, y1), out_h, out_w, 1.0)

    def manual_bilinear(fm, x, y):
        xf, yf = int(np.floor(x)), int(np.floor(y))
        fx, fy = x - xf, y - yf
        def at(yy, xx):
            if 0 <= yy < fm.shape[1] and 0 <= xx < fm.shape[2]:
                return fm[:, yy, xx]
            return np.zeros(fm.shape[0])
        return ((1 - fx) * (1 - fy) * at(yf, xf) + fx * (1 - fy) * at(yf, xf + 1)
                + (1 - fx) * fy * at(yf + 1, xf) + fx * fy * at(yf + 1, xf + 1))

    for j in range(out_w):
        x = x0 + (x1 - x0) * j / (out_w - 1)
        for i in range(out_h):
            y = y0 + (y1 - y0) * (i + 0.5) / out_h
            np.testing.assert_allclose(out.data[:, i, j], manual_bilinear(fm_np, x, y),
                                       atol=1e-9)


def test_bezier_align_gradient_matches_fd():
    region = curved_region(seed=21, scale=6.0)
    err = check_gradients(
        lambda t: bezier_align(t[0], region, 3, 5, 1.0),
        [Xoshiro256(5).uniform_array((2, 8, 10), -2.0, 2.0)])
    assert err < 1e-4


def test_bezier_align_translation_equivariance():
    # dyadic control points and grid fractions keep every coordinate exactly
    # representable, so a lattice shift commutes bitwise
    stream = Xoshiro256(13)
    fm = stream.uniform_array((1, 12, 12), -1.0, 1.0)
    xs = [1.25, 2.25, 4.25, 5.25]
    region = BezierRegion(top=np.array([[x, 1.5] for x in xs]),
                          bottom=np.array([[x, 3.5] for x in xs]))
    out_a = bezier_align(Tensor(fm), region, 2, 5, 1.0)
    shifted_fm = np.zeros_like(fm)
    shifted_fm[:, 3:, 2:] = fm[:, :-3, :-2]
    out_b = bezier_align(Tensor(shifted_fm), region.translated(2.0, 3.0), 2, 5, 1.0)
    np.testing.assert_array_equal(out_a.data, out_b.data)


# ---------------------------------------------------------------------------
# region_to_polygon


def test_polygon_straight_region_is_rectangle():
    poly = region_to_polygon(rect_region(0.0, 0.0, 4.0, 2.0), samples_per_curve=2)
    np.testing.assert_allclose(poly, [[0, 0], [4, 0], [4, 2], [0, 2]], atol=1e-12)


def test_polygon_two_samples_hits_endpoint_control_points():
    region = curved_region(seed=17)
    poly = region_to_polygon(region, samples_per_curve=2)
    np.testing.assert_allclose(poly[0], region.top[0], atol=1e-12)
    np.testing.assert_allclose(poly[1], region.top[3], atol=1e-12)
    np.testing.assert_allclose(poly[2], region.bottom[3], atol=1e-12)
    np.testing.assert_allclose(poly[3], region.bottom[0], atol=1e-12)


def test_polygon_vertices_reproduce_bezier_point():
    region = curved_region(seed=19)
    m = 6
    poly = region_to_polygon(region, samples_per_curve=m)
    assert len(poly) == 2 * m
    for k in range(m):
        t = k / (m - 1)
        np.testing.assert_array_equal(poly[k], bezier_point(region.top, t))
        np.testing.assert_array_equal(poly[2 * m - 1 - k], bezier_point(region.bottom, t))


# ---------------------------------------------------------------------------
# polygon_iou


UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def test_iou_identical_polygons():
    poly = region_to_polygon(curved_region(seed=23))
    assert polygon_iou(poly, poly) == 1.0


def test_iou_disjoint_polygons():
    assert polygon_iou(UNIT_SQUARE, UNIT_SQUARE + 10.0) == 0.0


def test_iou_half_overlapping_unit_squares():
    shifted = UNIT_SQUARE + np.array([0.5, 0.0])
    iou = polygon_iou(UNIT_SQUARE, shifted, raster_scale=8)
    assert iou == pytest.approx(1.0 / 3.0, abs=0.02)


def test_iou_symmetry_exact():
    a = region_to_polygon(curved_region(seed=29))
    b = region_to_polygon(curved_region(seed=31)) + np.array([1.0, 1.5])
    assert polygon_iou(a, b) == polygon_iou(b, a)


def test_iou_degenerate_polygon_zero():
    line = np.array([[0.0, 0.0], [2.0, 0.0], [4.0, 0.0]])
    assert polygon_iou(line, line) == 0.0
    assert polygon_iou(line, UNIT_SQUARE) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 2**31))
def test_iou_symmetric_and_bounded_property(sa, sb):
    a = region_to_polygon(curved_region(seed=sa))
    b = region_to_polygon(curved_region(seed=sb))
    iou_ab = polygon_iou(a, b, raster_scale=4)
    assert iou_ab == polygon_iou(b, a, raster_scale=4)
    assert 0.0 <= iou_ab <= 1.0
