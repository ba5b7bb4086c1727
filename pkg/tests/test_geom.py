"""Tests for the 3D transform algebra."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from proxyform.geom import (apply_linear, compose, point_cloud, rot_z, scale,
                            shear_xy, translate, vec3)


class TestRotZ:
    def test_zero_angle_is_identity(self):
        assert_array_equal(rot_z(0.0), np.eye(3))

    def test_quarter_turn(self):
        assert_allclose(rot_z(np.pi / 2) @ np.array([1.0, 0.0, 0.0]),
                        [0.0, 1.0, 0.0], atol=1e-15)

    def test_inverse_pair(self):
        # derived: multiply the two matrices numerically
        assert_allclose(rot_z(0.7) @ rot_z(-0.7), np.eye(3), atol=1e-12)

    def test_orthonormal_and_det_one(self):
        rng = np.random.default_rng(11)
        for theta in rng.uniform(-50.0, 50.0, size=1000):
            r = rot_z(theta)
            assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
            assert abs(np.linalg.det(r) - 1.0) < 1e-12

    def test_nonfinite_angle_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            rot_z(np.nan)


class TestScaleShear:
    def test_diagonal_action(self):
        assert_allclose(scale(2, 3, 4) @ np.ones(3), [2.0, 3.0, 4.0])

    def test_unit_scale_is_identity(self):
        assert_array_equal(scale(1, 1, 1), np.eye(3))

    def test_det_is_product(self):
        assert_allclose(np.linalg.det(scale(2, 3, 4)), 24.0, rtol=1e-12)

    def test_zero_factor_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            scale(2.0, 0.0, 1.0)

    def test_shear_action(self):
        assert_allclose(shear_xy(1.0) @ np.array([0.0, 1.0, 0.0]), [1.0, 1.0, 0.0])

    def test_zero_shear_is_identity(self):
        assert_array_equal(shear_xy(0.0), np.eye(3))

    def test_shear_preserves_volume(self):
        assert_allclose(np.linalg.det(shear_xy(5.5)), 1.0, rtol=1e-12)
        rng = np.random.default_rng(5)
        for k in rng.uniform(-100, 100, size=50):
            assert abs(np.linalg.det(shear_xy(k)) - 1.0) < 1e-12


class TestApply:
    def test_empty_cloud(self):
        out = apply_linear(np.empty((0, 3)), rot_z(1.0))
        assert out.shape == (0, 3)

    def test_identity_is_bitwise(self):
        rng = np.random.default_rng(2)
        cloud = rng.normal(size=(20, 3))
        assert_array_equal(apply_linear(cloud, np.eye(3)), cloud)

    def test_half_turn(self):
        cloud = np.array([[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0], [0.0, 0.0, 1.0]])
        expected = cloud * np.array([-1.0, -1.0, 1.0])
        assert_allclose(apply_linear(cloud, rot_z(np.pi)), expected, atol=1e-12)

    def test_translate(self):
        assert_allclose(translate(np.array([[1.0, 2.0, 3.0]]), vec3(1, 0, -1)),
                        [[2.0, 2.0, 2.0]])
        cloud = np.zeros((4, 3))
        assert_array_equal(translate(cloud, vec3(0, 0, 0)), cloud)

    def test_translate_round_trip(self):
        rng = np.random.default_rng(3)
        cloud = rng.normal(size=(30, 3))
        t = vec3(0.3, -1.7, 2.9)
        assert_allclose(translate(translate(cloud, t), -t), cloud, atol=1e-12)

    def test_preserves_count_and_order(self):
        rng = np.random.default_rng(4)
        cloud = rng.normal(size=(17, 3))
        m = rot_z(0.3) @ scale(1.5, 2.0, 0.5)
        out = apply_linear(cloud, m)
        assert out.shape == cloud.shape
        # first point maps to first output row
        assert_allclose(out[0], m @ cloud[0], rtol=1e-12)


class TestCompose:
    def test_identity_neutral(self):
        m = shear_xy(2.0)
        assert_array_equal(compose(np.eye(3), m), m)

    def test_rotation_angles_add(self):
        assert_allclose(compose(rot_z(0.3), rot_z(0.4)), rot_z(0.7), atol=1e-12)

    def test_scale_inverse(self):
        assert_allclose(compose(scale(2, 2, 2), scale(0.5, 0.5, 0.5)), np.eye(3))

    def test_apply_distributes_over_compose(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            m1 = rng.normal(size=(3, 3))
            m2 = rng.normal(size=(3, 3))
            cloud = rng.normal(size=(8, 3))
            assert_allclose(apply_linear(cloud, compose(m2, m1)),
                            apply_linear(apply_linear(cloud, m1), m2), atol=1e-12)


def test_point_cloud_rejects_nonfinite():
    with pytest.raises(ValueError, match="finite"):
        point_cloud([[0.0, np.inf, 0.0]])
