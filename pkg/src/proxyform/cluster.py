"""Reference-point generation and point clustering.

Reference points come from a deterministic uniform-grid prior over the
scene cuboid (shrunk by the offset bound so deformed centers stay inside
the cloud). Clusters are fixed-size neighborhoods selected by kNN or
ball query; a drop ratio discards a fraction of clusters before any
transformation. Everything is deterministic given (inputs, seed), with
ties always broken toward the lower point index.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geom import PointCloud, Vec3

_CHUNK = 64  # centers per work unit; fixed so results are identical for any worker count


@dataclass
class GridSpec:
    """Uniform grid over [bounds_min + s, bounds_max - s].

    Parameters
    ----------
    grid_counts : (int, int, int)
        Cells per axis; the reference count is their product.
    bounds_min, bounds_max : (3,) arrays
        Scene cuboid in scene units, before shrinking.
    offset_bound_s : float
        Shrink margin per side, also the offset clamp radius, scene units.
    """

    grid_counts: tuple
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    offset_bound_s: float = 0.0

    @property
    def n_refs(self) -> int:
        cx, cy, cz = self.grid_counts
        return int(cx) * int(cy) * int(cz)


@dataclass
class ClusterSet:
    """Cluster centers plus fixed-size member index lists.

    ``members[t]`` holds exactly ``m`` indices into the source cloud;
    neighborhoods smaller than ``m`` are padded by cyclic repetition.
    """

    centers: np.ndarray  # (n, 3) float64
    members: np.ndarray  # (n, m) int64
    m: int
    source_cloud_len: int

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    def validate(self) -> None:
        if self.centers.shape[0] != self.members.shape[0]:
            raise ValueError("corrupted cluster set: centers/members length mismatch")
        if self.members.shape[1] != self.m:
            raise ValueError("corrupted cluster set: member lists are not length m")
        if self.members.size and (self.members.min() < 0
                                  or self.members.max() >= self.source_cloud_len):
            raise ValueError("corrupted cluster set: member index out of range")


@dataclass
class DropConfig:
    """Cluster drop policy: keep max(1, floor((1-beta)*n)) clusters."""

    beta: float = 0.6
    method: str = "random"  # "random" or "fps"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"drop ratio must be in [0, 1), got {self.beta}")
        if self.method not in ("random", "fps"):
            raise ValueError(f"unknown drop method {self.method!r}")


def grid_prior(spec: GridSpec) -> np.ndarray:
    """Cell-center reference points of the shrunken uniform grid.

    Returns an (n, 3) array ordered lexicographically by cell index
    (i, j, k), i.e. the flattened index is t = (i * y_s + j) * z_s + k.
    """
    counts = np.asarray(spec.grid_counts, dtype=np.int64)
    if np.any(counts <= 0):
        raise ValueError(f"grid counts must be positive, got {spec.grid_counts}")
    s = float(spec.offset_bound_s)
    if s < 0.0:
        raise ValueError("offset bound must be nonnegative")
    lo = np.asarray(spec.bounds_min, dtype=np.float64) + s
    hi = np.asarray(spec.bounds_max, dtype=np.float64) - s
    if np.any(lo >= hi):
        raise ValueError(
            f"invalid bounds: cuboid is empty after shrinking by s={s} "
            f"(lo={lo.tolist()}, hi={hi.tolist()})")
    axes = [lo[a] + (np.arange(counts[a]) + 0.5) * (hi[a] - lo[a]) / counts[a]
            for a in range(3)]
    xs, ys, zs = np.meshgrid(*axes, indexing="ij")
    return np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)


def uniform_prior(spec: GridSpec, seed: int) -> np.ndarray:
    """Stochastic baseline: reference points drawn uniformly in the shrunken cuboid."""
    s = float(spec.offset_bound_s)
    lo = np.asarray(spec.bounds_min, dtype=np.float64) + s
    hi = np.asarray(spec.bounds_max, dtype=np.float64) - s
    if np.any(lo >= hi):
        raise ValueError("invalid bounds: cuboid is empty after shrinking")
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=(spec.n_refs, 3))


def _sq_dists(center: np.ndarray, cloud: np.ndarray) -> np.ndarray:
    diff = cloud - center
    return np.einsum("ij,ij->i", diff, diff)


def _nearest(d: np.ndarray, m: int) -> np.ndarray:
    """Indices of the m smallest entries of d, ties toward lower index."""
    n = d.shape[0]
    if m >= n:
        order = np.argsort(d, kind="stable")
        return order[np.arange(m) % n]
    # argpartition may split a tie group at the boundary; gather every
    # index at or below the threshold and stable-sort to restore the
    # lower-index-first rule exactly.
    part = np.argpartition(d, m - 1)[:m]
    thresh = d[part].max()
    cand = np.flatnonzero(d <= thresh)
    order = cand[np.argsort(d[cand], kind="stable")]
    return order[:m]


def knn(center: Vec3, cloud: PointCloud, m: int) -> np.ndarray:
    """Indices of the m nearest points to ``center`` by Euclidean distance.

    If the cloud has fewer than m points the sorted index list repeats
    cyclically until length m. Equidistant points keep index order.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.shape[0] == 0:
        raise ValueError("knn on an empty cloud")
    if m <= 0:
        raise ValueError(f"neighborhood size must be positive, got {m}")
    return _nearest(_sq_dists(np.asarray(center, dtype=np.float64), cloud), m)


def ball_query(center: Vec3, cloud: PointCloud, radius: float, m: int) -> np.ndarray:
    """Up to m indices within ``radius`` of ``center``, nearest first.

    Fewer than m qualifiers are repeated cyclically to length m; zero
    qualifiers fall back to plain kNN.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.shape[0] == 0:
        raise ValueError("ball query on an empty cloud")
    if radius <= 0.0:
        raise ValueError(f"ball radius must be positive, got {radius}")
    d = _sq_dists(np.asarray(center, dtype=np.float64), cloud)
    elig = np.flatnonzero(d <= radius * radius)
    if elig.size == 0:
        return knn(center, cloud, m)
    order = elig[np.argsort(d[elig], kind="stable")]
    base = order[:m]
    return base[np.arange(m) % base.size]


def _query_chunk(centers, cloud, gamma, m, radius):
    out = np.empty((centers.shape[0], m), dtype=np.int64)
    for i, c in enumerate(centers):
        if gamma == "knn":
            out[i] = knn(c, cloud, m)
        else:
            out[i] = ball_query(c, cloud, radius, m)
    return out


def build_clusters(centers, cloud: PointCloud, gamma: str = "knn", m: int = 32,
                   radius: float | None = None, workers: int = 1) -> ClusterSet:
    """Cluster the cloud around each center with the chosen clustering function.

    ``gamma`` is "knn" or "ball"; ``radius`` is required for ball query.
    ``workers`` parallelizes per-center queries over fixed-size chunks;
    results are assembled in center order and do not depend on it.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    cloud = np.asarray(cloud, dtype=np.float64)
    if centers.shape[0] == 0:
        raise ValueError("build_clusters needs at least one center")
    if gamma not in ("knn", "ball"):
        raise ValueError(f"unknown clustering function {gamma!r}")
    if gamma == "ball" and radius is None:
        raise ValueError("ball query requires a radius")
    if cloud.shape[0] == 0:
        raise ValueError("cannot cluster an empty cloud")

    chunks = [centers[i:i + _CHUNK] for i in range(0, centers.shape[0], _CHUNK)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ch: _query_chunk(ch, cloud, gamma, m, radius), chunks))
    else:
        parts = [_query_chunk(ch, cloud, gamma, m, radius) for ch in chunks]
    members = np.vstack(parts)
    return ClusterSet(centers=centers.copy(), members=members, m=m,
                      source_cloud_len=cloud.shape[0])


def recluster(new_centers, cloud: PointCloud, gamma: str = "knn", m: int = 32,
              radius: float | None = None, workers: int = 1) -> ClusterSet:
    """Re-run clustering around deformed centers; same contract as build_clusters."""
    return build_clusters(new_centers, cloud, gamma=gamma, m=m, radius=radius,
                          workers=workers)


def fps_from(points, k: int, first: int) -> np.ndarray:
    """Greedy farthest-point sampling starting from a given first index."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if k > n:
        raise ValueError(f"cannot sample {k} points from {n}")
    if k <= 0:
        raise ValueError(f"sample count must be positive, got {k}")
    selected = np.empty(k, dtype=np.int64)
    selected[0] = first
    d = _sq_dists(pts[first], pts)
    for i in range(1, k):
        nxt = int(np.argmax(d))  # first maximum = lowest index on ties
        selected[i] = nxt
        d = np.minimum(d, _sq_dists(pts[nxt], pts))
    return selected


def fps(points, k: int, seed: int) -> np.ndarray:
    """Farthest-point sampling with a seeded uniform first pick."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    first = int(rng.integers(pts.shape[0]))
    return fps_from(pts, k, first)


def keep_count(n: int, beta: float) -> int:
    """Clusters kept under drop ratio beta: max(1, floor((1-beta)*n))."""
    # tiny nudge guards float rounding when (1-beta)*n is an exact integer
    return max(1, math.floor((1.0 - beta) * n + 1e-9))


def drop_clusters(cs: ClusterSet, cfg: DropConfig) -> ClusterSet:
    """Discard clusters per the drop config, preserving relative order of the kept."""
    n = cs.n
    if n == 0:
        raise ValueError("cannot drop from an empty cluster set")
    keep = keep_count(n, cfg.beta)
    if keep == n:
        return ClusterSet(cs.centers.copy(), cs.members.copy(), cs.m, cs.source_cloud_len)
    if cfg.method == "random":
        rng = np.random.default_rng(cfg.seed)
        kept = np.sort(rng.choice(n, size=keep, replace=False))
    else:
        kept = np.sort(fps(cs.centers, keep, cfg.seed))
    return ClusterSet(cs.centers[kept].copy(), cs.members[kept].copy(), cs.m,
                      cs.source_cloud_len)
