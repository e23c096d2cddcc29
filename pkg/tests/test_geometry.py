import math

import numpy as np
import pytest

from cyldet import (
    BehindCamera,
    Box2D,
    Box3D,
    box3d_corners,
    iou_2d,
    iou_3d,
    iou_bev,
    normalize_yaw,
    project_box,
)
from conftest import random_car_box
from oracles import mc_iou_3d, mc_iou_bev, project_corners_reference


class TestBoxTypes:
    def test_box2d_requires_ordering(self):
        with pytest.raises(ValueError):
            Box2D(5, 0, 1, 10)
        with pytest.raises(ValueError):
            Box2D(0, 10, 5, 10)

    def test_box3d_requires_positive_dims(self):
        with pytest.raises(ValueError):
            Box3D((0, 0, 10), (1.0, -1.0, 1.0), 0.0)
        with pytest.raises(ValueError):
            Box3D((0, 0, 10), (1.0, 0.0, 1.0), 0.0)

    def test_yaw_normalized_to_half_open_interval(self):
        assert Box3D((0, 0, 1), (1, 1, 1), math.pi).yaw == -math.pi
        assert Box3D((0, 0, 1), (1, 1, 1), 3 * math.pi / 2).yaw == pytest.approx(
            -math.pi / 2
        )
        assert normalize_yaw(-math.pi) == -math.pi


class TestCorners:
    def test_unit_cube_corners(self):
        corners = box3d_corners(Box3D((0, 0, 0.0001), (1, 1, 1), 0.0))
        got = {tuple(np.round(c, 9)) for c in corners - [0, 0, 0.0001]}
        want = {
            (sx, sy, sz)
            for sx in (-0.5, 0.5)
            for sy in (-0.5, 0.5)
            for sz in (-0.5, 0.5)
        }
        assert got == want

    def test_bottom_face_first(self):
        # camera y points down, so the bottom face sits at +H/2
        corners = box3d_corners(Box3D((0, 0, 5), (1, 2, 1), 0.0))
        np.testing.assert_allclose(corners[:4, 1], 1.0)
        np.testing.assert_allclose(corners[4:, 1], -1.0)

    def test_yaw_pi_permutes_corner_set(self):
        box0 = Box3D((1, 2, 3), (1.2, 1.4, 3.0), 0.0)
        box1 = Box3D((1, 2, 3), (1.2, 1.4, 3.0), math.pi)
        set0 = {tuple(np.round(c, 9)) for c in box3d_corners(box0)}
        set1 = {tuple(np.round(c, 9)) for c in box3d_corners(box1)}
        assert set0 == set1

    def test_quarter_turn_swaps_extents(self):
        corners = box3d_corners(Box3D((0, 0, 5), (1, 1, 2), math.pi / 2))
        assert corners[:, 0].max() - corners[:, 0].min() == pytest.approx(2.0)
        assert corners[:, 2].max() - corners[:, 2].min() == pytest.approx(1.0)


class TestProjectBox:
    def test_near_face_dominates(self, simple_p):
        box = Box3D((0, 0, 10), (2, 2, 2), 0.0)
        b = project_box(box, simple_p)
        assert b.xmin == pytest.approx(-100.0 / 9.0)
        assert b.xmax == pytest.approx(100.0 / 9.0)
        assert b.ymin == pytest.approx(-100.0 / 9.0)
        assert b.ymax == pytest.approx(100.0 / 9.0)

    def test_behind_camera(self, simple_p):
        with pytest.raises(BehindCamera):
            project_box(Box3D((0, 0, -10), (1, 1, 1), 0.0), simple_p)
        # partially behind also rejected
        with pytest.raises(BehindCamera):
            project_box(Box3D((0, 0, 0.4), (1, 1, 1), 0.0), simple_p)

    def test_matches_reference_projection(self, calib):
        rng = np.random.default_rng(4)
        for _ in range(50):
            box = random_car_box(rng)
            b = project_box(box, calib.p2)
            xmin, ymin, xmax, ymax = project_corners_reference(box, calib.p2)
            np.testing.assert_allclose(
                [b.xmin, b.ymin, b.xmax, b.ymax], [xmin, ymin, xmax, ymax],
                rtol=1e-12,
            )

    def test_translation_moves_hull_right(self, simple_p):
        box = Box3D((0, 0, 10), (2, 2, 2), 0.0)
        previous = project_box(box, simple_p)
        for delta in (0.5, 1.0, 2.0):
            moved = project_box(Box3D((delta, 0, 10), (2, 2, 2), 0.0), simple_p)
            assert moved.xmin > previous.xmin
            assert moved.xmax > previous.xmax
            previous = moved


class TestIou2d:
    def test_identical(self):
        box = Box2D(10, 20, 110, 220)
        assert iou_2d(box, box) == 1.0

    def test_disjoint(self):
        assert iou_2d(Box2D(0, 0, 1, 1), Box2D(5, 5, 6, 6)) == 0.0

    def test_half_offset_unit_squares(self):
        value = iou_2d(Box2D(0, 0, 1, 1), Box2D(0.5, 0, 1.5, 1))
        assert value == pytest.approx(1.0 / 3.0, rel=1e-15)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            vals = rng.uniform(0, 100, size=8)
            a = Box2D(vals[0], vals[1], vals[0] + vals[2] + 1, vals[1] + vals[3] + 1)
            b = Box2D(vals[4], vals[5], vals[4] + vals[6] + 1, vals[5] + vals[7] + 1)
            assert iou_2d(a, b) == iou_2d(b, a)
            assert 0.0 <= iou_2d(a, b) <= 1.0


class TestIouBev:
    def test_identical(self):
        box = Box3D((3, 1, 20), (1.6, 1.5, 4.0), 0.7)
        assert iou_bev(box, box) == pytest.approx(1.0, abs=1e-12)

    def test_rotated_45_degrees(self):
        a = Box3D((0, 0, 10), (1, 1, 1), 0.0)
        b = Box3D((0, 0, 10), (1, 1, 1), math.pi / 4)
        # octagon intersection: area 2*(sqrt(2)-1), IoU sqrt(2)/2
        assert iou_bev(a, b) == pytest.approx(math.sqrt(2) / 2, abs=1e-12)

    def test_half_offset_footprints(self):
        a = Box3D((0, 0, 10), (1, 1, 1), 0.0)
        b = Box3D((0.5, 0, 10), (1, 1, 1), 0.0)
        assert iou_bev(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_touching_edges_have_zero_overlap(self):
        # boxes sharing exactly one footprint edge: degenerate intersection
        a = Box3D((0.0, 0, 10), (1, 1, 2), 0.0)
        b = Box3D((1.0, 0, 10), (1, 1, 2), 0.0)
        assert iou_bev(a, b) == 0.0
        assert iou_3d(a, b) == 0.0

    def test_footprint_pi_symmetry(self):
        a = Box3D((1, 0, 10), (1.5, 1.2, 4.0), 0.3)
        b = Box3D((1, 0, 10), (1.5, 1.2, 4.0), 0.3 + math.pi)
        assert iou_bev(a, b) == pytest.approx(1.0, abs=1e-9)

    def test_rigid_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            a = random_car_box(rng)
            b = random_car_box(rng, z_range=(a.center[2] - 2, a.center[2] + 2))
            base = iou_bev(a, b)
            phi = rng.uniform(-math.pi, math.pi)
            c, s = math.cos(phi), math.sin(phi)

            def rotate(box):
                x, y, z = box.center
                return Box3D((c * x + s * z, y, -s * x + c * z),
                             box.dims, box.yaw + phi)

            assert iou_bev(rotate(a), rotate(b)) == pytest.approx(base, abs=1e-9)

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(11)
        for i in range(10):
            a = random_car_box(rng, z_range=(10, 14))
            b = random_car_box(rng, z_range=(10, 14))
            got = iou_bev(a, b)
            want = mc_iou_bev(a, b, n_samples=200_000, seed=i)
            assert got == pytest.approx(want, abs=5e-3)


class TestIou3d:
    def test_identical(self):
        box = Box3D((3, 1, 20), (1.6, 1.5, 4.0), 0.7)
        assert iou_3d(box, box) == pytest.approx(1.0, abs=1e-12)

    def test_full_vertical_offset(self):
        a = Box3D((0, 0, 10), (1, 2, 1), 0.0)
        b = Box3D((0, 2, 10), (1, 2, 1), 0.0)
        assert iou_3d(a, b) == 0.0

    def test_half_offset_unit_cubes(self):
        a = Box3D((0, 0, 10), (1, 1, 1), 0.0)
        b = Box3D((0.5, 0, 10), (1, 1, 1), 0.0)
        assert iou_3d(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = random_car_box(rng, z_range=(10, 16))
            b = random_car_box(rng, z_range=(10, 16))
            ab, ba = iou_3d(a, b), iou_3d(b, a)
            assert ab == ba
            assert 0.0 <= ab <= 1.0

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(13)
        for i in range(10):
            a = random_car_box(rng, z_range=(10, 13))
            b = random_car_box(rng, z_range=(10, 13))
            got = iou_3d(a, b)
            want = mc_iou_3d(a, b, n_samples=200_000, seed=100 + i)
            assert got == pytest.approx(want, abs=5e-3)
