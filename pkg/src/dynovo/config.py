"""Flat key = value run configuration covering every pipeline parameter.

Every tunable lives here with its default and one-line description; the
reference page (scripts/gen_config_reference.py) is generated from the
field metadata so documentation cannot drift from the code.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .depth_geometry import CameraIntrinsics, GaussianKernelParams
from .dynamic_voting import VotingParams
from .frontend import CornerBriefDetector, RansacParams
from .instance_clouds import DbscanParams, VoxelParams
from .intra_motion import ChamferParams


def _f(default, doc: str):
    return field(default=default, metadata={"doc": doc})


@dataclass
class RunConfig:
    # camera
    fx: float = _f(256.0, "focal length x, pixels")
    fy: float = _f(256.0, "focal length y, pixels")
    cx: float = _f(159.5, "principal point x, pixels")
    cy: float = _f(119.5, "principal point y, pixels")
    depth_scale: float = _f(5000.0, "raw depth units per meter")
    max_diff: float = _f(0.02, "timestamp association tolerance, seconds")

    # depth denoising
    kernel_k: int = _f(2, "denoising half-window radius, pixels")
    kernel_sigma: float = _f(1.0, "denoising kernel sigma, pixels")

    # instance cloud cleanup
    voxel_size: float = _f(0.02, "voxel edge for downsampling, meters")
    dbscan_eps: float = _f(0.05, "clustering neighborhood radius, meters")
    dbscan_min_pts: int = _f(10, "core-point neighbor count (self included)")

    # moving-object voting
    dist_threshold: float = _f(0.03, "pairwise-distance change that casts a vote, m/frame")
    vote_threshold: int = _f(2, "votes needed to flag an object dynamic")
    frame_rate: float = _f(30.0, "nominal sequence frame rate, Hz")
    min_fps: float = _f(10.0, "warn when frame rate falls below this")
    track_gate: float = _f(0.5, "max centroid distance for track association, meters")
    track_max_missing: int = _f(5, "frames a track survives unobserved (extrapolated)")
    dynamic_hold_frames: int = _f(0, "keep masking a voted-dynamic track this many extra frames")
    dynamic_classes: str = _f("person", "comma-separated classes excluded up front")

    # deformation check
    deform_threshold: float = _f(0.01, "Chamfer score flagging deformation, square meters")
    chamfer_max_points: int = _f(2000, "per-cloud subsample cap for the Chamfer check")

    # feature detection / matching
    fast_threshold: float = _f(20.0, "corner segment-test contrast threshold, gray levels")
    max_keypoints: int = _f(1000, "strongest corners kept per frame")
    mask_dilate_px: int = _f(5, "dilation of dynamic masks before feature exclusion")
    match_ratio: float = _f(0.75, "Lowe-style ratio for descriptor matching")

    # epipolar filtering
    epipolar_iterations: int = _f(300, "RANSAC iterations for the essential matrix")
    epipolar_threshold_px: float = _f(1.5, "Sampson-distance inlier gate, pixels")

    # 3D-3D registration
    ransac_iterations: int = _f(500, "RANSAC iterations for rigid registration")
    ransac_inlier_threshold: float = _f(0.02, "3D residual inlier gate, meters")
    min_inliers: int = _f(12, "fewest inliers accepted as a pose estimate")
    seed: int = _f(0, "seed for all random sampling in a run")

    # pose graph
    loop_radius: float = _f(0.35, "revisit distance triggering a closure candidate, meters")
    loop_min_gap: int = _f(40, "minimum index separation for closure candidates")
    closure_cooldown: int = _f(15, "frames to wait after inserting a closure")
    odometry_weight: float = _f(1.0, "information weight of odometry edges")
    closure_weight: float = _f(10.0, "information weight of closure edges")
    pgo_max_iterations: int = _f(30, "Levenberg-Marquardt iteration cap")
    pgo_damping: float = _f(1e-4, "initial Levenberg-Marquardt damping")

    # evaluation
    eval_delta: int = _f(1, "frame delta for relative pose error")

    # ablation switches
    enable_voting: bool = _f(True, "vote out moving objects")
    enable_intra_motion: bool = _f(True, "mask deformable objects")
    enable_outlier_rejection: bool = _f(True, "clean instance clouds before centroids")
    enable_pgo: bool = _f(True, "loop closures + trajectory optimization")

    # ---- derived parameter bundles ----

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.depth_scale)

    def kernel(self) -> GaussianKernelParams:
        return GaussianKernelParams(self.kernel_k, self.kernel_sigma)

    def voxel(self) -> VoxelParams:
        return VoxelParams(self.voxel_size)

    def dbscan(self) -> DbscanParams:
        return DbscanParams(self.dbscan_eps, self.dbscan_min_pts)

    def voting(self) -> VotingParams:
        return VotingParams(self.dist_threshold, self.vote_threshold,
                            self.frame_rate, self.min_fps)

    def chamfer(self) -> ChamferParams:
        return ChamferParams(self.deform_threshold, self.chamfer_max_points)

    def detector(self) -> CornerBriefDetector:
        return CornerBriefDetector(self.fast_threshold, self.max_keypoints,
                                   self.mask_dilate_px)

    def registration(self) -> RansacParams:
        return RansacParams(self.ransac_iterations, self.ransac_inlier_threshold,
                            self.min_inliers, self.seed)

    def epipolar(self) -> RansacParams:
        return RansacParams(self.epipolar_iterations, self.epipolar_threshold_px,
                            3, self.seed + 1)

    def prior_dynamic_classes(self) -> set[str]:
        return {c.strip() for c in self.dynamic_classes.split(",") if c.strip()}

    @staticmethod
    def from_file(path) -> "RunConfig":
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        overrides = {}
        for lineno, line in enumerate(p.read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{p}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            overrides[key] = value
        return RunConfig.from_overrides(overrides)

    @staticmethod
    def from_overrides(overrides: dict[str, str]) -> "RunConfig":
        by_name = {f.name: f for f in fields(RunConfig)}
        kwargs = {}
        for key, value in overrides.items():
            if key not in by_name:
                raise ValueError(f"unknown config key: {key}")
            kwargs[key] = _parse(value, by_name[key].type)
        return RunConfig(**kwargs)


def _parse(value: str, type_name):
    name = type_name if isinstance(type_name, str) else type_name.__name__
    if name == "bool":
        low = str(value).strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if name == "int":
        return int(value)
    if name == "float":
        return float(value)
    return str(value)


def config_reference() -> str:
    """Markdown table of every key, its default and its description."""
    lines = ["| key | default | description |", "| --- | --- | --- |"]
    for f_ in fields(RunConfig):
        default = f_.default if f_.default is not dataclasses.MISSING else ""
        lines.append(f"| `{f_.name}` | `{default}` | {f_.metadata.get('doc', '')} |")
    return "\n".join(lines) + "\n"
