"""Computational geometry: hulls, hull rasterization, oriented extents."""

from __future__ import annotations

import numpy as np
import pytest

from corepath.geometry import (
    component_width,
    convex_hull,
    fill_convex_hull,
    min_area_rect_dims,
)


def rotate(points, deg):
    t = np.radians(deg)
    rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    return np.asarray(points, dtype=np.float64) @ rot.T


class TestConvexHull:
    def test_square_with_interior_points(self):
        pts = np.array(
            [[0, 0], [4, 0], [4, 4], [0, 4], [2, 2], [1, 3], [3, 1]], dtype=float
        )
        hull = convex_hull(pts)
        assert sorted(map(tuple, hull)) == [(0, 0), (0, 4), (4, 0), (4, 4)]

    def test_collinear_points_collapse(self):
        pts = np.array([[0, 0], [1, 1], [2, 2], [3, 3]], dtype=float)
        hull = convex_hull(pts)
        assert {(0, 0), (3, 3)} <= set(map(tuple, hull))
        assert (1.0, 1.0) not in set(map(tuple, hull))

    def test_hull_contains_all_points(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(60, 2)) * 10
        hull = convex_hull(pts)
        # every input point lies inside or on the hull polygon
        for p in pts:
            crosses = []
            for i in range(len(hull)):
                a, b = hull[i], hull[(i + 1) % len(hull)]
                u, v = b - a, p - a
                crosses.append(u[0] * v[1] - u[1] * v[0])
            crosses = np.asarray(crosses)
            assert np.all(crosses >= -1e-9) or np.all(crosses <= 1e-9)


class TestFillConvexHull:
    def test_axis_aligned_rectangle(self):
        pts = np.array([[2, 3], [10, 3], [10, 8], [2, 8]], dtype=float)
        mask = fill_convex_hull(pts, (12, 14))
        want = np.zeros((12, 14), dtype=bool)
        want[3:9, 2:11] = True
        assert np.array_equal(mask, want)

    def test_triangle_area(self):
        pts = np.array([[0, 0], [40, 0], [0, 40]], dtype=float)
        mask = fill_convex_hull(pts, (50, 50))
        # pixel centers with x + y <= 40, the diagonal row included
        assert mask.sum() == 41 * 42 / 2

    def test_degenerate_single_point(self):
        mask = fill_convex_hull(np.array([[5.0, 4.0]]), (8, 8))
        assert mask[4, 5]
        assert mask.sum() == 1


class TestMinAreaRect:
    def test_axis_aligned_pixel_footprint(self):
        # sides are point extents plus one, the covered unit-pixel footprint
        ys, xs = np.mgrid[0:5, 0:11]
        pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)
        assert min_area_rect_dims(pts) == pytest.approx((5.0, 11.0))

    @pytest.mark.parametrize("deg", [15, 37, 62])
    def test_rotation_invariant(self, deg):
        ys, xs = np.mgrid[0:5, 0:11]
        pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)
        dims = min_area_rect_dims(rotate(pts, deg))
        assert dims == pytest.approx((5.0, 11.0), abs=1e-6)

    def test_single_point(self):
        assert min_area_rect_dims(np.array([[3.0, 4.0]])) == (1.0, 1.0)


class TestComponentWidth:
    def test_horizontal_bar(self):
        mask = np.zeros((20, 40), dtype=bool)
        mask[8:13, 5:35] = True  # 5 px thick, 30 px long
        assert component_width(mask) == pytest.approx(5.0, abs=0.01)

    def test_rotated_bar(self):
        ys, xs = np.mgrid[0:60, 0:60]
        s = (xs - 30) * np.cos(0.5) + (ys - 30) * np.sin(0.5)
        d = -(xs - 30) * np.sin(0.5) + (ys - 30) * np.cos(0.5)
        mask = (np.abs(s) <= 20) & (np.abs(d) <= 3)
        # oriented width tracks the short side, not the bounding box
        assert component_width(mask) == pytest.approx(7.0, abs=1.0)

    def test_empty_mask(self):
        assert component_width(np.zeros((5, 5), dtype=bool)) == 0.0
