"""Deformable offset network: per-cluster features -> bounded 3D offsets.

Each cluster contributes an m x 6 feature block (relative coordinates of
its member points against the cluster center, concatenated with their
global coordinates). A pointwise linear + ReLU lifts these to a hidden
width, average pooling collapses the m points, and a final zero-bias
linear emits a raw 3D offset per cluster, clamped to an L2 ball of
radius s. The final layer starts at zero weights so deformed centers
coincide with the grid prior at initialization.
"""

from dataclasses import dataclass

import numpy as np

from .cluster import ClusterSet
from .geom import PointCloud

OffsetField = np.ndarray  # (n, 3), per-row norm <= s


@dataclass
class OffsetNetParams:
    """Two pointwise linears; the output layer has no bias by construction."""

    w1: np.ndarray  # (6, c_off)
    b1: np.ndarray  # (c_off,)
    w2: np.ndarray  # (c_off, 3), zero-initialized

    @property
    def c_off(self) -> int:
        return self.w1.shape[1]

    def astype(self, dtype) -> "OffsetNetParams":
        return OffsetNetParams(self.w1.astype(dtype), self.b1.astype(dtype),
                               self.w2.astype(dtype))


@dataclass
class OffsetNetGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray


def offsetnet_init(seed: int, c_off: int = 64) -> OffsetNetParams:
    """Seeded parameters with an exactly-zero final layer.

    The zero output layer (weights and the absent bias) guarantees zero
    offsets at initialization, so the clustering starts identical to the
    undeformed grid prior.
    """
    if c_off <= 0:
        raise ValueError(f"hidden width must be positive, got {c_off}")
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, 0.1, size=(6, c_off))
    return OffsetNetParams(w1=w1, b1=np.zeros(c_off), w2=np.zeros((c_off, 3)))


def offset_features(cs: ClusterSet, cloud: PointCloud) -> np.ndarray:
    """Per-cluster m x 6 rows [p - q_t, p] for every member point p."""
    cs.validate()
    cloud = np.asarray(cloud, dtype=np.float64)
    if cs.source_cloud_len != cloud.shape[0]:
        raise ValueError("corrupted cluster set: built against a different cloud length")
    pts = cloud[cs.members]  # (n, m, 3)
    rel = pts - cs.centers[:, None, :]
    return np.concatenate([rel, pts], axis=2)


def clamp_offsets(raw: np.ndarray, s: float) -> OffsetField:
    """Project each row onto the L2 ball of radius s."""
    if s < 0.0:
        raise ValueError(f"offset bound must be nonnegative, got {s}")
    raw = np.asarray(raw)
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    factor = np.where(norms > s, np.divide(s, norms, out=np.ones_like(norms),
                                           where=norms > 0), 1.0)
    return raw * factor.astype(raw.dtype)


def _forward_parts(params: OffsetNetParams, cs: ClusterSet, cloud: PointCloud):
    feats = offset_features(cs, cloud).astype(params.w1.dtype)
    pre = feats @ params.w1 + params.b1  # (n, m, c_off)
    hidden = np.maximum(pre, 0.0)
    pooled = hidden.mean(axis=1)  # (n, c_off)
    raw = pooled @ params.w2  # (n, 3)
    return feats, pre, pooled, raw


def offsetnet_forward(params: OffsetNetParams, cs: ClusterSet, cloud: PointCloud,
                      bound: float) -> OffsetField:
    """Per-cluster offsets: linear -> ReLU -> average pool -> linear -> clamp."""
    _, _, _, raw = _forward_parts(params, cs, cloud)
    return clamp_offsets(raw, bound)


def offsetnet_backward(params: OffsetNetParams, cs: ClusterSet, cloud: PointCloud,
                       bound: float, g: np.ndarray) -> OffsetNetGrads:
    """Parameter gradients given the output cotangent g of shape (n, 3)."""
    feats, pre, pooled, raw = _forward_parts(params, cs, cloud)

    # clamp pullback: identity inside the ball, on the sphere-projected
    # branch J = (s/r) (I - x x^T / r^2) with r = ||x||
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    clamped = norms[:, 0] > bound
    g_raw = np.array(g, dtype=raw.dtype)
    if np.any(clamped):
        x = raw[clamped]
        r = norms[clamped]
        gc = g_raw[clamped]
        proj = gc - x * (np.sum(x * gc, axis=1, keepdims=True) / (r * r))
        g_raw[clamped] = (bound / r) * proj

    dw2 = pooled.T @ g_raw
    d_pooled = g_raw @ params.w2.T
    d_hidden = np.broadcast_to(d_pooled[:, None, :] / cs.m, pre.shape)
    d_pre = d_hidden * (pre > 0)
    dw1 = np.einsum("nmf,nmc->fc", feats, d_pre)
    db1 = d_pre.sum(axis=(0, 1))
    return OffsetNetGrads(w1=dw1, b1=db1, w2=dw2)


def apply_offsets(centers, field: OffsetField) -> np.ndarray:
    """Shift reference points by their offsets (elementwise addition)."""
    centers = np.asarray(centers, dtype=np.float64)
    offs = np.asarray(field, dtype=np.float64)
    if centers.shape != offs.shape:
        raise ValueError(f"length mismatch: {centers.shape} centers vs {offs.shape} offsets")
    return centers + offs
