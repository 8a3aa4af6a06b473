"""Deformation detection via symmetric Chamfer distance between frame clouds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .dynamic_voting import ObjectTrack


@dataclass(frozen=True)
class ChamferParams:
    deform_threshold: float = 0.01   # squared meters
    max_points: int = 2000

    def __post_init__(self):
        if self.deform_threshold <= 0:
            raise ValueError("deform_threshold must be positive")
        if self.max_points < 1:
            raise ValueError("max_points must be >= 1")


def chamfer_distance(p1: np.ndarray, p2: np.ndarray) -> float:
    """Symmetric Chamfer distance: sum of both directed mean squared
    nearest-neighbor distances."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if p1.size == 0 or p2.size == 0:
        raise ValueError("chamfer_distance of empty cloud")
    d12, _ = cKDTree(p2).query(p1)
    d21, _ = cKDTree(p1).query(p2)
    return float(np.mean(d12**2) + np.mean(d21**2))


def _subsample(cloud: np.ndarray, max_points: int, rng: np.random.Generator) -> np.ndarray:
    if cloud.shape[0] <= max_points:
        return cloud
    idx = rng.choice(cloud.shape[0], size=max_points, replace=False)
    return cloud[idx]


def classify_deformable(track: ObjectTrack, params: ChamferParams,
                        rng: np.random.Generator | None = None) -> bool:
    """True when the object's shape changed between its two latest clouds.

    Both clouds are translated to put their centroids at the origin before
    comparison, so rigid displacement (the voting stage's concern) does not
    register as deformation. Clouds larger than max_points are uniformly
    subsampled for bounded cost.
    """
    if len(track.history) < 2:
        raise ValueError("missing cloud history: need clouds for the two latest frames")
    _, _, cloud_prev = track.history[-2]
    _, _, cloud_curr = track.history[-1]
    if cloud_prev is None or cloud_curr is None or cloud_prev.size == 0 or cloud_curr.size == 0:
        raise ValueError("missing cloud history: need clouds for the two latest frames")
    if rng is None:
        rng = np.random.default_rng(0)
    a = _subsample(np.asarray(cloud_prev, dtype=float), params.max_points, rng)
    b = _subsample(np.asarray(cloud_curr, dtype=float), params.max_points, rng)
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    return chamfer_distance(a, b) >= params.deform_threshold
