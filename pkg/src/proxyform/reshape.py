"""Apply per-cluster transforms to submanifolds and splice them back.

Each kept cluster carries a 3x3 matrix and a translation; its member
points are mapped by p -> p @ M^T + T (row-vector convention). Clusters
can share points, so every point appearing in at least one cluster is
transformed exactly once, by the cluster whose center is nearest to the
point's original position (lower cluster id on ties). Points in no kept
cluster pass through bitwise unchanged.
"""

from dataclasses import dataclass

import numpy as np

from .cluster import ClusterSet
from .geom import PointCloud

_IDENTITY = np.eye(3)


@dataclass
class TransformSet:
    """Per-cluster linear maps and translations."""

    matrices: np.ndarray  # (n, 3, 3)
    translations: np.ndarray  # (n, 3)

    @property
    def n(self) -> int:
        return self.matrices.shape[0]


def identity_transforms(n: int) -> TransformSet:
    return TransformSet(np.broadcast_to(_IDENTITY, (n, 3, 3)).copy(), np.zeros((n, 3)))


def apply_submanifold(points, m_i, t_i) -> np.ndarray:
    """Transform one submanifold: each row p becomes p @ M^T + T.

    Summation runs per row via einsum so a point's result is bitwise
    independent of how the submanifold is batched.
    """
    points = np.asarray(points, dtype=np.float64)
    m_i = np.asarray(m_i, dtype=np.float64)
    t_i = np.asarray(t_i, dtype=np.float64)
    return np.einsum("ij,kj->ik", points, m_i, optimize=False) + t_i


def assign_points(cs: ClusterSet, cloud: PointCloud):
    """Owning cluster per point index: nearest center, lower id on ties.

    Returns (point_indices, cluster_ids) for every point that appears in
    at least one cluster's member list.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    flat_idx = cs.members.ravel()
    flat_cluster = np.repeat(np.arange(cs.n, dtype=np.int64), cs.m)
    diff = cloud[flat_idx] - cs.centers[flat_cluster]
    dist = np.einsum("ij,ij->i", diff, diff)
    # sort by (point, distance, cluster id); the first row per point wins
    order = np.lexsort((flat_cluster, dist, flat_idx))
    pts = flat_idx[order]
    first = np.ones(pts.size, dtype=bool)
    first[1:] = pts[1:] != pts[:-1]
    return pts[first], flat_cluster[order][first]


def apply_all(cs: ClusterSet, ts: TransformSet, cloud: PointCloud) -> PointCloud:
    """Transform every clustered point by its owning cluster's transform."""
    if ts.n != cs.n:
        raise ValueError(f"transform count {ts.n} does not match cluster count {cs.n}")
    cloud = np.asarray(cloud, dtype=np.float64)
    out = cloud.copy()
    point_idx, owner = assign_points(cs, cloud)
    mats = np.asarray(ts.matrices, dtype=np.float64)
    trans = np.asarray(ts.translations, dtype=np.float64)
    # skip exact-identity transforms so untouched submanifolds stay bitwise equal
    active = ~((mats == _IDENTITY).all(axis=(1, 2)) & (trans == 0.0).all(axis=1))
    for c in np.unique(owner[active[owner]]):
        idx = point_idx[owner == c]
        out[idx] = apply_submanifold(cloud[idx], mats[c], trans[c])
    return out
