"""TUM-style RGB-D sequence loading and trajectory file round-tripping.

Expected directory layout:
    rgb.txt, depth.txt      index files, lines "timestamp filename"
    rgb/*.png, depth/*.png  color images, 16-bit depth at depth_scale units/m
    groundtruth.txt         optional, lines "timestamp tx ty tz qx qy qz qw"
    masks/<timestamp>.png   optional 16-bit instance label images
    masks/<timestamp>.txt   matching sidecars, lines "id class score"

Depth value 0 encodes a missing measurement, never zero meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .depth_geometry import CameraIntrinsics, DepthFrame
from .geometry import Se3Pose


@dataclass(frozen=True)
class MaskEntry:
    instance_id: int
    class_name: str
    score: float


@dataclass
class InstanceMaskSet:
    """Per-frame instance labels: 0 = background, k = instance k."""

    label_map: np.ndarray
    entries: list[MaskEntry]

    def validate(self) -> None:
        ids = {e.instance_id for e in self.entries}
        if len(ids) != len(self.entries):
            raise ValueError("duplicate instance ids in mask entries")
        present = set(np.unique(self.label_map)) - {0}
        missing = present - ids
        if missing:
            raise ValueError(f"label map ids without entries: {sorted(missing)}")


@dataclass
class FrameBundle:
    timestamp: float
    color: np.ndarray
    depth: DepthFrame
    masks: InstanceMaskSet | None = None
    gt_pose: Se3Pose | None = None


@dataclass
class Trajectory:
    poses: list[tuple[float, Se3Pose]] = field(default_factory=list)

    def __post_init__(self):
        ts = [t for t, _ in self.poses]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trajectory timestamps must be strictly increasing")
        for t, p in self.poses:
            if p.rotation_defect() > 1e-9:
                raise ValueError(f"non-orthonormal rotation at t={t}")

    def timestamps(self) -> np.ndarray:
        return np.array([t for t, _ in self.poses])

    def positions(self) -> np.ndarray:
        return np.array([p.translation for _, p in self.poses]).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.poses)


def associate_timestamps(a: list[float], b: list[float],
                         max_diff: float = 0.02) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp matching between two sorted lists.

    Candidate pairs within max_diff are taken smallest-difference first;
    each index is used at most once. Swapping the argument lists yields the
    mirrored pair set.
    """
    if max_diff <= 0:
        raise ValueError("max_diff must be positive")
    a_arr, b_arr = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    candidates = []
    for i, ta in enumerate(a_arr):
        lo = np.searchsorted(b_arr, ta - max_diff, side="left")
        hi = np.searchsorted(b_arr, ta + max_diff, side="right")
        for j in range(int(lo), int(hi)):
            tb = b_arr[j]
            diff = abs(ta - tb)
            if diff <= max_diff:
                candidates.append((diff, min(ta, tb), max(ta, tb), i, j))
    candidates.sort()
    used_a: set[int] = set()
    used_b: set[int] = set()
    pairs = []
    for _, _, _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        pairs.append((i, j))
        used_a.add(i)
        used_b.add(j)
    pairs.sort()
    return pairs


def _read_index(path: Path) -> list[tuple[float, str, str]]:
    """Parse a TUM index file into (timestamp, filename, timestamp token)."""
    if not path.exists():
        raise FileNotFoundError(f"missing index file: {path}")
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'timestamp filename'")
        out.append((float(parts[0]), parts[1], parts[0]))
    out.sort(key=lambda r: r[0])
    return out


def _read_color(path: Path, timestamp: float) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise IOError(f"unreadable color image for frame t={timestamp}: {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def _read_depth(path: Path, timestamp: float, depth_scale: float) -> DepthFrame:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"unreadable depth image for frame t={timestamp}: {path}")
    if raw.ndim != 2:
        raise ValueError(f"depth image not single-channel for frame t={timestamp}: {path}")
    return DepthFrame.from_raw(raw, depth_scale)


def _read_mask_set(png_path: Path, txt_path: Path) -> InstanceMaskSet:
    label_map = cv2.imread(str(png_path), cv2.IMREAD_UNCHANGED)
    if label_map is None:
        raise IOError(f"unreadable mask image: {png_path}")
    entries = []
    if txt_path.exists():
        for lineno, line in enumerate(txt_path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{txt_path}:{lineno}: expected 'id class score'")
            entries.append(MaskEntry(int(parts[0]), parts[1], float(parts[2])))
    masks = InstanceMaskSet(label_map.astype(np.uint16), entries)
    masks.validate()
    return masks


def load_sequence(path, intrinsics: CameraIntrinsics,
                  max_diff: float = 0.02) -> list[FrameBundle]:
    """Load an RGB-D sequence with optional masks and ground truth.

    Color and depth are associated by timestamp; frames without a depth
    partner within max_diff are dropped. Raw depth is converted to meters
    via intrinsics.depth_scale.
    """
    root = Path(path)
    rgb_index = _read_index(root / "rgb.txt")
    depth_index = _read_index(root / "depth.txt")
    pairs = associate_timestamps([r[0] for r in rgb_index],
                                 [d[0] for d in depth_index], max_diff)

    gt: Trajectory | None = None
    gt_path = root / "groundtruth.txt"
    if gt_path.exists():
        gt = read_trajectory(gt_path)

    bundles = []
    for i, j in pairs:
        t, rgb_file, token = rgb_index[i]
        color = _read_color(root / rgb_file, t)
        depth = _read_depth(root / depth_index[j][1], t, intrinsics.depth_scale)
        if color.shape[:2] != depth.values.shape:
            raise ValueError(f"color/depth dimensions differ for frame t={t}")

        masks = None
        mask_png = root / "masks" / f"{token}.png"
        if mask_png.exists():
            masks = _read_mask_set(mask_png, root / "masks" / f"{token}.txt")

        gt_pose = None
        if gt is not None and len(gt):
            gt_ts = gt.timestamps()
            k = int(np.argmin(np.abs(gt_ts - t)))
            if abs(gt_ts[k] - t) <= max_diff:
                gt_pose = gt.poses[k][1]

        bundles.append(FrameBundle(t, color, depth, masks, gt_pose))
    bundles.sort(key=lambda b: b.timestamp)
    return bundles


def read_trajectory(path) -> Trajectory:
    """Parse 'timestamp tx ty tz qx qy qz qw' lines; '#' comments skipped.

    Quaternions are normalized; a norm off unit by more than 1e-3 is an error.
    """
    path = Path(path)
    poses = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        t, tx, ty, tz, qx, qy, qz, qw = vals
        q = np.array([qx, qy, qz, qw])
        if abs(np.linalg.norm(q) - 1.0) > 1e-3:
            raise ValueError(f"{path}:{lineno}: quaternion norm {np.linalg.norm(q):.6f} "
                             "deviates from 1 by more than 1e-3")
        poses.append((t, Se3Pose.from_quat([tx, ty, tz], q)))
    poses.sort(key=lambda p: p[0])
    return Trajectory(poses)


def write_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w") as f:
        f.write("# timestamp tx ty tz qx qy qz qw\n")
        for t, pose in traj.poses:
            tr, q = pose.as_quat()
            f.write(f"{t:.6f} " + " ".join(f"{x:.9f}" for x in (*tr, *q)) + "\n")
