"""Audio-informed spatial refinement of a lifted Gaussian segmentation.

Pipeline: DBSCAN over the segmented centers, drop oversized clusters, locate the
intensity-weighted audio center and keep the cluster whose centroid is nearest.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .binaural import AudioIntensityMap
from .errors import EmptyCluster, InvalidParams, NoClusters, NoQualifyingGaussians
from .gs_scene import GaussianCloud
from .mask_lifting import Segmentation


@dataclass(frozen=True)
class RefinementConfig:
    eps: float = 0.04
    min_points: int = 6
    tau_ref: float = 0.85
    volume_sigma_factor: float = 0.5

    def __post_init__(self):
        if self.eps <= 0 or self.min_points < 1:
            raise InvalidParams("eps must be > 0 and min_points >= 1")
        if not 0.0 <= self.tau_ref <= 1.0:
            raise InvalidParams(f"tau_ref must lie in [0, 1], got {self.tau_ref}")


@dataclass(frozen=True, eq=False)
class Cluster:
    members: np.ndarray
    centroid: np.ndarray
    volume: float


@dataclass(frozen=True, eq=False)
class ClusterSet:
    clusters: list = field(default_factory=list)
    noise: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.clusters)

    def labels(self, n: int) -> np.ndarray:
        """Per-point cluster id, -1 for noise."""
        out = np.full(n, -1, dtype=np.int64)
        for k, c in enumerate(self.clusters):
            out[c.members] = k
        return out


def cluster_volume(centers, eps: float = 0.04) -> float:
    """Axis-aligned bounding-box volume of ``centers``, each extent floored at ``eps``."""
    pts = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyCluster("cannot take the volume of an empty cluster")
    extent = np.maximum(pts.max(axis=0) - pts.min(axis=0), eps)
    return float(np.prod(extent))


def _make_cluster(points, members, eps) -> Cluster:
    members = np.sort(np.asarray(members, dtype=np.int64))
    pts = points[members]
    return Cluster(members, pts.mean(axis=0), cluster_volume(pts, eps))


def dbscan(points, eps: float, min_points: int) -> ClusterSet:
    """DBSCAN with inclusive radius and self-counting core rule.

    A border point reachable from several clusters joins the cluster of its
    lowest-index core neighbour. Clusters are ordered by their lowest member.
    """
    if eps <= 0 or min_points < 1:
        raise InvalidParams(f"need eps > 0 and min_points >= 1, got eps={eps}, "
                            f"min_points={min_points}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return ClusterSet()

    pairs = cKDTree(pts).query_pairs(eps, output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    degree = 1 + np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
    core = degree >= min_points

    both = core[i] & core[j]
    graph = coo_matrix((np.ones(both.sum()), (i[both], j[both])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)

    label = np.full(n, -1, dtype=np.int64)
    label[core] = comp[core]
    # border points: lowest-index core neighbour wins
    best = np.full(n, n, dtype=np.int64)
    for a, b in ((i, j), (j, i)):
        sel = ~core[a] & core[b]
        np.minimum.at(best, a[sel], b[sel])
    border = best < n
    label[border] = comp[best[border]]

    clusters = [_make_cluster(pts, np.flatnonzero(label == c), eps)
                for c in np.unique(label[label >= 0])]
    clusters.sort(key=lambda c: c.members[0])
    return ClusterSet(clusters, np.flatnonzero(label < 0))


def filter_by_volume(cs: ClusterSet, volume_sigma_factor: float = 0.5) -> ClusterSet:
    """Discard clusters larger than mean + factor * std (population) of all volumes.

    If that would discard every cluster, all are kept.
    """
    if not cs.clusters:
        raise NoClusters("volume filter needs at least one cluster")
    volumes = np.array([c.volume for c in cs.clusters])
    threshold = volumes.mean() + volume_sigma_factor * volumes.std()
    kept = [c for c, v in zip(cs.clusters, volumes) if not v > threshold]
    return ClusterSet(kept or list(cs.clusters), cs.noise)


def audio_intensity_center(cloud: GaussianCloud, intensity: AudioIntensityMap,
                           tau_ref: float = 0.85) -> np.ndarray:
    w = intensity.normalized
    sel = w > tau_ref
    if not sel.any():
        raise NoQualifyingGaussians(
            f"no Gaussian has normalised audio intensity above tau_ref={tau_ref}")
    w = w[sel]
    return (w[:, None] * cloud.centers[sel]).sum(axis=0) / w.sum()


def select_cluster(cs: ClusterSet, center) -> Cluster:
    if not cs.clusters:
        raise NoClusters("no cluster to select from")
    center = np.asarray(center, dtype=np.float64)
    return min(cs.clusters,
               key=lambda c: (float(np.linalg.norm(c.centroid - center)), int(c.members[0])))


@dataclass(frozen=True, eq=False)
class RefinementTrace:
    clusters: ClusterSet
    kept: ClusterSet | None = None
    audio_center: np.ndarray | None = None
    selected: Cluster | None = None


def refine_with_trace(cloud: GaussianCloud, seg: Segmentation, intensity: AudioIntensityMap,
                      cfg: RefinementConfig = RefinementConfig()):
    seg.check(cloud)
    idx = seg.selected
    cs = dbscan(cloud.centers[idx], cfg.eps, cfg.min_points)
    if not cs.clusters:
        return Segmentation(idx, unrefined=True), RefinementTrace(cs)
    kept = filter_by_volume(cs, cfg.volume_sigma_factor)
    center = audio_intensity_center(cloud, intensity, cfg.tau_ref)
    best = select_cluster(kept, center)
    return Segmentation(idx[best.members]), RefinementTrace(cs, kept, center, best)


def refine(cloud: GaussianCloud, seg: Segmentation, intensity: AudioIntensityMap,
           cfg: RefinementConfig = RefinementConfig()) -> Segmentation:
    """Keep only the cluster of ``seg`` nearest the audio intensity center.

    Falls back to ``seg`` (flagged ``unrefined``) when DBSCAN finds no cluster.
    """
    return refine_with_trace(cloud, seg, intensity, cfg)[0]
