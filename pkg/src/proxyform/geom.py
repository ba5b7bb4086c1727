"""Exact 3D transform algebra: rotation, scaling, shear, translation.

All values are 64-bit floats. Points are stored as rows of an (N, 3)
array; a 3x3 matrix acts on the column form of each point, so applying
``m`` to a cloud is ``cloud @ m.T``.
"""

import math

import numpy as np

Matrix3 = np.ndarray  # (3, 3) float64
Vec3 = np.ndarray  # (3,) float64
PointCloud = np.ndarray  # (N, 3) float64, row order is significant


def vec3(x: float, y: float, z: float) -> Vec3:
    """Build a finite 3-vector."""
    v = np.array([x, y, z], dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    return v


def point_cloud(points) -> PointCloud:
    """Validate and copy an (N, 3) array of points."""
    cloud = np.asarray(points, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        cloud = cloud.reshape(-1, 3)
    if not np.all(np.isfinite(cloud)):
        raise ValueError("point cloud entries must be finite")
    return cloud.copy()


def rot_z(theta: float) -> Matrix3:
    """Rotation about the z-axis by ``theta`` radians."""
    if not math.isfinite(theta):
        raise ValueError("rotation angle must be finite")
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def scale(sx: float, sy: float, sz: float) -> Matrix3:
    """Axis-aligned scaling diag(sx, sy, sz); factors must be nonzero."""
    factors = (sx, sy, sz)
    if not all(math.isfinite(f) for f in factors):
        raise ValueError("scale factors must be finite")
    if any(f == 0.0 for f in factors):
        raise ValueError("degenerate transform: zero scale factor loses rank")
    return np.diag(np.array(factors, dtype=np.float64))


def shear_xy(k: float) -> Matrix3:
    """Shear mixing y into x: x' = x + k*y."""
    if not math.isfinite(k):
        raise ValueError("shear factor must be finite")
    m = np.eye(3)
    m[0, 1] = k
    return m


def compose(m2: Matrix3, m1: Matrix3) -> Matrix3:
    """Matrix product m2 @ m1 (apply m1 first, then m2)."""
    return np.asarray(m2, dtype=np.float64) @ np.asarray(m1, dtype=np.float64)


def apply_linear(cloud: PointCloud, m: Matrix3) -> PointCloud:
    """Apply a linear map to each point: p -> m @ p. Order preserved."""
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.size == 0:
        return cloud.reshape(0, 3).copy()
    return cloud @ np.asarray(m, dtype=np.float64).T


def translate(cloud: PointCloud, t: Vec3) -> PointCloud:
    """Shift every point by the constant vector t. Order preserved."""
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.size == 0:
        return cloud.reshape(0, 3).copy()
    return cloud + np.asarray(t, dtype=np.float64)
