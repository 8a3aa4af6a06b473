"""Cross-frame instance tracking and moving-object identification.

Objects vote for each other: whenever the distance between a pair of
tracked centroids changes by at least the distance threshold between two
consecutive frames, both endpoints of the pair collect one vote. Objects
whose votes reach the vote threshold are flagged dynamic. A genuinely
moving object collects a vote from (almost) every pair it belongs to,
while static objects only collect votes from their pairs with movers,
so a vote threshold of 2 separates them once three or more objects are
visible.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .instance_clouds import ObjectInstance


@dataclass(frozen=True)
class VotingParams:
    dist_threshold: float = 0.03   # meters per frame interval
    vote_threshold: int = 2
    frame_rate: float = 30.0
    min_fps: float = 10.0

    def __post_init__(self):
        if self.dist_threshold <= 0 or self.vote_threshold < 1 or self.frame_rate <= 0:
            raise ValueError("voting parameters must be positive")
        if self.frame_rate < self.min_fps:
            warnings.warn(
                f"frame rate {self.frame_rate:.1f} Hz below {self.min_fps:.1f} Hz: "
                "centroid tracking across frames becomes unreliable", stacklevel=2)


@dataclass
class VoteAccumulator:
    """Vote counts per track id."""

    counts: dict[int, int] = field(default_factory=dict)

    def add(self, track_id: int) -> None:
        self.counts[track_id] = self.counts.get(track_id, 0) + 1

    def over_threshold(self, threshold: int) -> set[int]:
        return {tid for tid, c in self.counts.items() if c >= threshold}


@dataclass
class ObjectTrack:
    """History of one tracked object across frames."""

    track_id: int
    class_name: str
    history: list[tuple[float, np.ndarray, np.ndarray]] = field(default_factory=list)
    last_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def observe(self, timestamp: float, centroid: np.ndarray, cloud: np.ndarray) -> None:
        if self.history:
            t_prev, c_prev, _ = self.history[-1]
            if timestamp <= t_prev:
                raise ValueError("track timestamps must be strictly increasing")
            self.last_velocity = (centroid - c_prev) / (timestamp - t_prev)
        self.history.append((timestamp, np.asarray(centroid, dtype=float), cloud))

    @property
    def last_centroid(self) -> np.ndarray:
        return self.history[-1][1]


def pair_key(a: int, b: int) -> tuple[int, int]:
    if a == b:
        raise ValueError("pair of identical track ids")
    return (a, b) if a < b else (b, a)


def associate_tracks(prev: list[ObjectInstance], curr: list[ObjectInstance],
                     gate: float, next_id: int | None = None) -> list[int]:
    """Assign track ids to current instances by greedy same-class nearest centroid.

    Pairs are taken in order of increasing centroid distance; each previous
    id is used at most once; anything unmatched gets a fresh id.
    """
    if gate <= 0:
        raise ValueError("gate must be positive")
    if next_id is None:
        next_id = max((p.track_id for p in prev), default=-1) + 1
    candidates = []
    for i, p in enumerate(prev):
        for j, c in enumerate(curr):
            if p.class_name != c.class_name:
                continue
            d = float(np.linalg.norm(p.centroid - c.centroid))
            if d <= gate:
                candidates.append((d, i, j))
    candidates.sort()
    assigned: list[int | None] = [None] * len(curr)
    used_prev: set[int] = set()
    for d, i, j in candidates:
        if i in used_prev or assigned[j] is not None:
            continue
        assigned[j] = prev[i].track_id
        used_prev.add(i)
    out = []
    for a in assigned:
        if a is None:
            out.append(next_id)
            next_id += 1
        else:
            out.append(a)
    return out


def pairwise_center_dist(objects: list[ObjectInstance]) -> dict[tuple[int, int], float]:
    """Euclidean distances between centroids for every unordered id pair."""
    return {
        pair_key(a.track_id, b.track_id): float(np.linalg.norm(a.centroid - b.centroid))
        for a, b in itertools.combinations(objects, 2)
    }


def vote_dynamic_objects(prev: list[ObjectInstance], curr: list[ObjectInstance],
                         params: VotingParams) -> tuple[set[int], VoteAccumulator]:
    """Flag moving objects from pairwise centroid-distance changes.

    For every id pair present in both frames, a distance change of at
    least dist_threshold casts one vote for each endpoint. Returns the
    ids whose votes reach vote_threshold, plus the full accumulator.
    With fewer than two shared pairs the result is empty by construction;
    callers should fall back to `displacement_exceeds` in that regime.
    """
    dist_prev = pairwise_center_dist(prev)
    dist_curr = pairwise_center_dist(curr)
    shared_ids = ({o.track_id for o in prev} & {o.track_id for o in curr})
    acc = VoteAccumulator({tid: 0 for tid in sorted(shared_ids)})
    for key, d_c in dist_curr.items():
        d_p = dist_prev.get(key)
        if d_p is None:
            continue
        if abs(d_c - d_p) >= params.dist_threshold:
            acc.add(key[0])
            acc.add(key[1])
    return acc.over_threshold(params.vote_threshold), acc


def displacement_exceeds(prev: list[ObjectInstance], curr: list[ObjectInstance],
                         params: VotingParams) -> set[int]:
    """Per-object displacement test, the fallback when voting is indeterminate.

    An object is dynamic if its own centroid moved by at least
    dist_threshold between the two frames.
    """
    prev_by_id = {o.track_id: o for o in prev}
    out = set()
    for c in curr:
        p = prev_by_id.get(c.track_id)
        if p is None:
            continue
        if np.linalg.norm(c.centroid - p.centroid) >= params.dist_threshold:
            out.add(c.track_id)
    return out


def predict_missing(track: ObjectTrack, dt: float) -> np.ndarray:
    """Constant-velocity extrapolation of a track's centroid over dt seconds."""
    if len(track.history) < 2:
        raise ValueError("insufficient history: need at least 2 observations")
    return track.last_centroid + track.last_velocity * dt
