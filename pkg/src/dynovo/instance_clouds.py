"""Per-instance point cloud cleanup: voxel downsampling, DBSCAN, largest blob.

Point clouds are plain (N, 3) float arrays throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

NOISE = -1


@dataclass(frozen=True)
class VoxelParams:
    voxel_size: float = 0.02

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.05
    min_pts: int = 10

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")


@dataclass(frozen=True)
class ObjectInstance:
    """One segmented object in one frame, after cloud cleanup."""

    track_id: int
    class_name: str
    cloud: np.ndarray
    centroid: np.ndarray
    frame_timestamp: float


def centroid(cloud: np.ndarray) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=float)
    if cloud.size == 0:
        raise ValueError("centroid of empty cloud")
    return cloud.mean(axis=0)


def voxel_downsample(cloud: np.ndarray, params: VoxelParams) -> np.ndarray:
    """One point per occupied voxel: the centroid of that voxel's points.

    The grid is anchored at the origin (cell index = floor(p / voxel_size)).
    Output order follows the first appearance of each voxel in the input.
    """
    cloud = np.asarray(cloud, dtype=float)
    if cloud.size == 0:
        raise ValueError("voxel_downsample of empty cloud")
    cells = np.floor(cloud / params.voxel_size).astype(np.int64)
    _, first, inverse = np.unique(cells, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    groups = rank[inverse]
    sums = np.zeros((order.size, 3))
    counts = np.zeros(order.size)
    np.add.at(sums, groups, cloud)
    np.add.at(counts, groups, 1.0)
    return sums / counts[:, None]


def dbscan(cloud: np.ndarray, params: DbscanParams) -> np.ndarray:
    """Classic density-based clustering; returns per-point labels, -1 for noise.

    A core point has >= min_pts neighbors within eps, itself included.
    Clusters are grown breadth-first in input order, so labels are
    deterministic for a given point ordering.
    """
    cloud = np.asarray(cloud, dtype=float)
    n = cloud.shape[0]
    if n == 0:
        raise ValueError("dbscan of empty cloud")
    tree = cKDTree(cloud)
    neighbors = tree.query_ball_point(cloud, params.eps)
    is_core = np.array([len(nb) >= params.min_pts for nb in neighbors])
    labels = np.full(n, NOISE, dtype=int)
    cluster = 0
    for seed in range(n):
        if labels[seed] != NOISE or not is_core[seed]:
            continue
        labels[seed] = cluster
        queue = list(neighbors[seed])
        head = 0
        while head < len(queue):
            j = queue[head]
            head += 1
            if labels[j] != NOISE:
                continue
            labels[j] = cluster
            if is_core[j]:
                queue.extend(neighbors[j])
        cluster += 1
    return labels


def reject_outliers(instance_cloud: np.ndarray, voxel: VoxelParams,
                    db: DbscanParams) -> np.ndarray:
    """Downsample, cluster, and keep only the largest cluster's points."""
    down = voxel_downsample(instance_cloud, voxel)
    labels = dbscan(down, db)
    valid = labels[labels != NOISE]
    if valid.size == 0:
        raise ValueError("instance fully rejected: every point labeled noise")
    ids, counts = np.unique(valid, return_counts=True)
    best = ids[np.argmax(counts)]
    return down[labels == best]


def save_ply(cloud: np.ndarray, path) -> None:
    """Debug dump as ASCII PLY."""
    cloud = np.asarray(cloud, dtype=float)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {cloud.shape[0]}\n")
        f.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        for p in cloud:
            f.write(f"{p[0]} {p[1]} {p[2]}\n")
