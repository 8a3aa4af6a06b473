"""Synthetic dynamic RGB-D sequences with exact ground truth.

Renders a closed textured room (five infinite planes z-buffered from
inside) containing sphere/box objects that are static, translate at a
constant velocity, or deform with a seeded sinusoidal surface ripple.
Static primitives are ray-cast analytically at pixel centers, so depth is
exact along each ray; deformable surfaces are splatted from a dense
parametric grid. Color is rendered supersampled (2x) and box-filtered so
corner features are stable; depth and instance labels stay crisp at
native resolution.

Output is exactly the on-disk layout `dataset_io.load_sequence` reads,
plus `manifest.txt` with per-frame true object centers and motion flags.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .dataset_io import InstanceMaskSet, MaskEntry
from .depth_geometry import CameraIntrinsics, DepthFrame
from .geometry import Se3Pose, so3_exp

_NEAR = 0.05


@dataclass(frozen=True)
class CameraPath:
    """Parametric camera pose curve.

    kinds:
      static                         fixed at the origin
      line vx vy vz yaw_rate_deg     constant velocity + constant yaw rate
      sway ax ay az period yaw_deg   sinusoidal translation (amplitudes in
                                     meters) and yaw, repeating every period
                                     seconds; returns near the start pose
    """

    kind: str = "static"
    params: tuple[float, ...] = ()

    def pose_at(self, t: float) -> Se3Pose:
        if self.kind == "static":
            return Se3Pose.identity()
        if self.kind == "line":
            vx, vy, vz, yaw_rate = (tuple(self.params) + (0.0,) * 4)[:4]
            rot = so3_exp(np.array([0.0, math.radians(yaw_rate) * t, 0.0]))
            return Se3Pose(rot, np.array([vx, vy, vz]) * t)
        if self.kind == "sway":
            ax, ay, az, period, yaw_amp = (tuple(self.params) + (0.0,) * 5)[:5]
            if period <= 0:
                raise ValueError("sway period must be positive")
            w = 2.0 * math.pi / period
            pos = np.array([ax * math.sin(w * t),
                            ay * math.sin(2.0 * w * t),
                            az * (1.0 - math.cos(w * t)) * 0.5])
            yaw = math.radians(yaw_amp) * math.sin(w * t)
            return Se3Pose(so3_exp(np.array([0.0, yaw, 0.0])), pos)
        raise ValueError(f"unknown camera path kind: {self.kind}")


@dataclass(frozen=True)
class ObjectSpec:
    class_name: str
    shape: str                 # "sphere" | "box"
    size: float                # diameter / edge length, meters
    center: tuple[float, float, float]
    motion: str = "static"     # "static" | "linear" | "deform"
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    deform_amplitude: float = 0.0
    spin: float = 0.0          # deform-mode yaw rate, rad/s; shape-preserving

    def __post_init__(self):
        if self.shape not in ("sphere", "box"):
            raise ValueError(f"unknown shape: {self.shape}")
        if self.motion not in ("static", "linear", "deform"):
            raise ValueError(f"unknown motion: {self.motion}")
        if self.size <= 0:
            raise ValueError("object size must be positive")

    def center_at(self, t: float) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        if self.motion == "linear":
            c = c + np.asarray(self.velocity, dtype=float) * t
        return c

    @property
    def is_dynamic(self) -> bool:
        return self.motion == "linear" and any(v != 0 for v in self.velocity)

    @property
    def is_deformable(self) -> bool:
        return self.motion == "deform" and self.deform_amplitude > 0


@dataclass(frozen=True)
class SceneSpec:
    duration: int
    frame_rate: float = 30.0
    width: int = 320
    height: int = 240
    room: tuple[float, float, float] = (4.0, 2.4, 1.7)   # z_far, half_w, half_h
    camera_path: CameraPath = field(default_factory=CameraPath)
    objects: tuple[ObjectSpec, ...] = ()
    depth_noise: float = 0.0
    depth_scale: float = 5000.0
    seed: int = 0
    fx: float | None = None

    def __post_init__(self):
        if self.duration < 2:
            raise ValueError("duration must be at least 2 frames")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        if self.depth_noise < 0:
            raise ValueError("depth_noise must be non-negative")

    def intrinsics(self) -> CameraIntrinsics:
        fx = self.fx if self.fx is not None else 0.8 * self.width
        return CameraIntrinsics(fx=fx, fy=fx, cx=self.width / 2.0 - 0.5,
                                cy=self.height / 2.0 - 0.5,
                                depth_scale=self.depth_scale)


# deterministic integer-lattice hash, vectorized
def _hash_u64(*channels: np.ndarray) -> np.ndarray:
    mults = (0x9E3779B97F4A7C15, 0xC2B2AE3D27D4EB4F, 0x165667B19E3779F9, 0xD6E8FEB86659FD93)
    h = np.zeros(np.broadcast(*channels).shape, dtype=np.uint64)
    for c, m in zip(channels, mults):
        h = h + c.astype(np.int64).view(np.uint64) * np.uint64(m)
    h ^= h >> np.uint64(33)
    h = h * np.uint64(0xFF51AFD7ED558CCD)
    h ^= h >> np.uint64(33)
    return h


def _hash01(*channels: np.ndarray) -> np.ndarray:
    return (_hash_u64(*channels) >> np.uint64(40)).astype(float) / float(1 << 24)


def _surface_gray(p2: np.ndarray, q2: np.ndarray, salt: int) -> np.ndarray:
    """Blocky two-scale texture with a jittered dark-dot lattice.

    p2/q2 are two in-surface coordinates; block corners give L-junction
    corners and the dots give blob corners for the segment-test detector.
    """
    s = np.full_like(p2, float(salt))
    coarse = np.floor(p2 / 0.17), np.floor(q2 / 0.17)
    fine = np.floor(p2 / 0.06), np.floor(q2 / 0.06)
    gray = 70.0 + 130.0 * _hash01(coarse[0], coarse[1], s)
    gray += 45.0 * (_hash01(fine[0], fine[1], s + 77) - 0.5)

    cell = 0.21
    ci, cj = np.floor(p2 / cell), np.floor(q2 / cell)
    jx = (0.18 + 0.64 * _hash01(ci, cj, s + 11)) * cell
    jy = (0.18 + 0.64 * _hash01(ci, cj, s + 23)) * cell
    dx = p2 - (ci * cell + jx)
    dy = q2 - (cj * cell + jy)
    inside = dx * dx + dy * dy < 0.028 ** 2
    dot_bright = _hash01(ci, cj, s + 31) > 0.5
    gray = np.where(inside & dot_bright, 235.0, gray)
    gray = np.where(inside & ~dot_bright, 25.0, gray)
    return np.clip(gray, 0.0, 255.0)


def _object_gray(local: np.ndarray, salt: int) -> np.ndarray:
    """Blocky 3D texture anchored to object-local coordinates."""
    s = np.full(local.shape[:-1], float(salt))
    c = np.floor(local / 0.055)
    gray = 55.0 + 160.0 * _hash01(c[..., 0], c[..., 1], c[..., 2], s)
    f = np.floor(local / 0.021)
    gray += 35.0 * (_hash01(f[..., 0], f[..., 1], f[..., 2], s + 5) - 0.5)
    return np.clip(gray, 0.0, 255.0)


def _room_planes(room: tuple[float, float, float]):
    z_far, half_w, half_h = room
    # (normal, offset n.x = k, in-plane axes, salt)
    return [
        (np.array([0.0, 0.0, 1.0]), z_far, np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), 1),
        (np.array([0.0, 1.0, 0.0]), half_h, np.array([1.0, 0, 0]), np.array([0, 0, 1.0]), 2),
        (np.array([0.0, -1.0, 0.0]), half_h, np.array([1.0, 0, 0]), np.array([0, 0, 1.0]), 3),
        (np.array([1.0, 0.0, 0.0]), half_w, np.array([0, 1.0, 0]), np.array([0, 0, 1.0]), 4),
        (np.array([-1.0, 0.0, 0.0]), half_w, np.array([0, 1.0, 0]), np.array([0, 0, 1.0]), 5),
    ]


def _ray_grid(width: int, height: int, intr: CameraIntrinsics, scale: int = 1) -> np.ndarray:
    """Camera-frame ray directions (H*s, W*s, 3) with z = 1."""
    if scale == 1:
        us = np.arange(width, dtype=float)
        vs = np.arange(height, dtype=float)
    else:
        # supersample positions covering each pixel footprint uniformly
        us = (np.arange(width * scale, dtype=float) + 0.5) / scale - 0.5
        vs = (np.arange(height * scale, dtype=float) + 0.5) / scale - 0.5
    uu, vv = np.meshgrid(us, vs)
    x = (uu - intr.cx) / intr.fx
    y = (vv - intr.cy) / intr.fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def _intersect_plane(origin, dirs, plane):
    n, k = plane[0], plane[1]
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (k - origin @ n) / denom
    return np.where(np.isfinite(t) & (t > _NEAR), t, np.inf)


def _intersect_sphere(origin, dirs, center, radius):
    oc = origin - center
    b = dirs @ oc
    c = oc @ oc - radius * radius
    a = np.einsum("...i,...i->...", dirs, dirs)
    disc = b * b - a * c
    t = np.full(dirs.shape[:2], np.inf)
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t0 = (-b - sq) / a
    t = np.where(hit & (t0 > _NEAR), t0, np.inf)
    return t


def _intersect_box(origin, dirs, center, half):
    lo = center - half
    hi = center + half
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t1 = (lo - origin) * inv
    t2 = (hi - origin) * inv
    tmin = np.minimum(t1, t2).max(axis=-1)
    tmax = np.maximum(t1, t2).min(axis=-1)
    hit = (tmax >= tmin) & (tmin > _NEAR)
    return np.where(hit, tmin, np.inf)


def _deform_points(obj: ObjectSpec, t: float, grid: int = 240) -> tuple[np.ndarray, np.ndarray]:
    """Dense rippled-sphere surface samples (world points, material coords).

    The radial ripple is high-frequency over the surface so it averages out
    over any visible cap: the cloud centroid stays put while the surface
    itself moves by ~amplitude * 0.3 per frame at 30 Hz.
    """
    r0 = obj.size / 2.0
    theta = np.linspace(0.06, math.pi - 0.06, grid)
    phi = np.linspace(-math.pi, math.pi, 2 * grid, endpoint=False)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    unit = np.stack([np.sin(tt) * np.cos(pp),
                     np.cos(tt),
                     np.sin(tt) * np.sin(pp)], axis=-1).reshape(-1, 3)
    phase = 2.0 * math.pi * 1.4 * t
    ripple = (np.sin(7.0 * tt + phase) * np.cos(5.0 * pp)).reshape(-1)
    radius = r0 + obj.deform_amplitude * ripple
    material = unit * r0
    surface = unit * radius[:, None]
    if obj.spin != 0.0:
        # slow whole-body rotation: the cloud shape and centroid barely move,
        # but surface texture (and therefore features) drifts coherently
        surface = surface @ so3_exp(np.array([0.0, obj.spin * t, 0.0])).T
    world = obj.center_at(t) + surface
    return world, material


def _splat(world, material, pose_wc: Se3Pose, intr, shape, salt, want_gray):
    """Z-buffer scatter of surface points; returns depth and gray layers."""
    h, w = shape
    depth = np.full((h, w), np.inf)
    gray = np.zeros((h, w)) if want_gray else None
    cam = pose_wc.inverse().transform(world)
    ok = cam[:, 2] > _NEAR
    cam, mat = cam[ok], material[ok]
    u = np.rint(intr.fx * cam[:, 0] / cam[:, 2] + intr.cx).astype(int)
    v = np.rint(intr.fy * cam[:, 1] / cam[:, 2] + intr.cy).astype(int)
    ok = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    cam, mat, u, v = cam[ok], mat[ok], u[ok], v[ok]
    if u.size == 0:
        return depth, gray
    order = np.argsort(-cam[:, 2], kind="stable")
    depth[v[order], u[order]] = cam[order, 2]
    if want_gray:
        g = _object_gray(mat, salt)
        gray[v[order], u[order]] = g[order]
    return depth, gray


def _render_pass(spec: SceneSpec, pose: Se3Pose, t: float, dirs_cam: np.ndarray,
                 intr, want_gray: bool):
    """One z-buffered pass over all surfaces at the resolution of dirs_cam.

    Textures are only evaluated at the pixels each surface actually wins,
    which keeps the procedural hashing off the critical path.
    """
    origin, rot = pose.translation, pose.rotation
    dirs = dirs_cam @ rot.T
    shape = dirs.shape[:2]

    depth_layers: list[np.ndarray] = []
    meta: list[tuple] = []
    for plane in _room_planes(spec.room):
        depth_layers.append(_intersect_plane(origin, dirs, plane))
        meta.append(("plane", 0, plane))
    for idx, obj in enumerate(spec.objects, start=1):
        c = obj.center_at(t)
        if obj.is_deformable:
            world, material = _deform_points(obj, t)
            d, g = _splat(world, material, pose, intr, shape, idx, want_gray)
            meta.append(("splat", idx, g))
        else:
            if obj.shape == "sphere":
                d = _intersect_sphere(origin, dirs, c, obj.size / 2.0)
            else:
                d = _intersect_box(origin, dirs, c, np.full(3, obj.size / 2.0))
            meta.append(("object", idx, (c,)))
        depth_layers.append(d)

    stack = np.stack(depth_layers)
    win = np.argmin(stack, axis=0)
    depth = np.take_along_axis(stack, win[None], axis=0)[0]
    finite = np.isfinite(depth)
    labels = np.array([m[1] for m in meta], dtype=np.uint16)
    label_map = labels[win]
    label_map[~finite] = 0

    gray = None
    if want_gray:
        gray = np.zeros(shape)
        for li, (kind, idx, payload) in enumerate(meta):
            sel = (win == li) & finite
            if not np.any(sel):
                continue
            if kind == "splat":
                gray[sel] = payload[sel]
                continue
            pts = origin + depth[sel, None] * dirs[sel]
            if kind == "plane":
                _, _, ax_u, ax_v, salt = payload
                gray[sel] = _surface_gray(pts @ ax_u, pts @ ax_v, salt)
            else:
                gray[sel] = _object_gray(pts - payload[0], idx)
    return depth, label_map, gray


def render_frame(spec: SceneSpec, pose: Se3Pose, frame_index: int
                 ) -> tuple[DepthFrame, InstanceMaskSet, np.ndarray]:
    """Render one frame from the given world-from-camera pose.

    Returns metric depth (noise applied, unquantized), the instance mask
    set (labels are 1-based object indices, stable across frames) and an
    RGB uint8 color image. Depth and labels come from exact pixel-center
    rays; color is rendered 2x supersampled and box-filtered.
    """
    if frame_index >= spec.duration:
        raise ValueError("frame index beyond spec duration")
    t = frame_index / spec.frame_rate
    intr = spec.intrinsics()

    dirs_native = _ray_grid(spec.width, spec.height, intr, scale=1)
    depth, label_map, _ = _render_pass(spec, pose, t, dirs_native, intr, want_gray=False)

    ss = 2
    intr_ss = CameraIntrinsics(intr.fx * ss, intr.fy * ss,
                               (intr.cx + 0.5) * ss - 0.5, (intr.cy + 0.5) * ss - 0.5,
                               intr.depth_scale)
    dirs_ss = _ray_grid(spec.width, spec.height, intr, scale=ss)
    _, _, gray_ss = _render_pass(spec, pose, t, dirs_ss, intr_ss, want_gray=True)
    gray = gray_ss.reshape(spec.height, ss, spec.width, ss).mean(axis=(1, 3))
    color = np.repeat(np.clip(gray, 0, 255).astype(np.uint8)[..., None], 3, axis=2)

    if spec.depth_noise > 0:
        rng = np.random.default_rng([spec.seed, frame_index])
        noise = rng.normal(0.0, spec.depth_noise, size=depth.shape)
        depth = np.where(np.isfinite(depth), depth + noise, depth)
        depth = np.maximum(depth, 1e-3)
    depth = np.where(np.isfinite(depth), depth, np.nan)

    entries = [MaskEntry(i, o.class_name, 1.0) for i, o in enumerate(spec.objects, start=1)
               if np.any(label_map == i)]
    keep = {e.instance_id for e in entries}
    label_clean = np.where(np.isin(label_map, list(keep)), label_map, 0).astype(np.uint16)
    masks = InstanceMaskSet(label_clean, entries)
    return DepthFrame(depth), masks, color


def generate(spec: SceneSpec, out_dir) -> Path:
    """Write the full TUM-format sequence plus ground truth and manifest.

    Deterministic for a given spec (including seed); returns the manifest
    path.
    """
    out = Path(out_dir)
    try:
        (out / "rgb").mkdir(parents=True, exist_ok=True)
        (out / "depth").mkdir(exist_ok=True)
        (out / "masks").mkdir(exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc

    intr = spec.intrinsics()
    rgb_lines = ["# timestamp filename"]
    depth_lines = ["# timestamp filename"]
    gt_lines = ["# timestamp tx ty tz qx qy qz qw"]
    manifest_lines = ["# frame_index object_id cx cy cz dynamic_flag deformable_flag"]

    for k in range(spec.duration):
        t = k / spec.frame_rate
        token = f"{t:.6f}"
        pose = spec.camera_path.pose_at(t)
        depth, masks, color = render_frame(spec, pose, k)

        raw = np.where(np.isfinite(depth.values),
                       np.rint(depth.values * spec.depth_scale), 0.0)
        raw = np.clip(raw, 0, 65535).astype(np.uint16)

        cv2.imwrite(str(out / "rgb" / f"{token}.png"),
                    cv2.cvtColor(color, cv2.COLOR_RGB2BGR))
        cv2.imwrite(str(out / "depth" / f"{token}.png"), raw)
        cv2.imwrite(str(out / "masks" / f"{token}.png"), masks.label_map)
        with open(out / "masks" / f"{token}.txt", "w") as f:
            for e in masks.entries:
                f.write(f"{e.instance_id} {e.class_name} {e.score:.3f}\n")

        rgb_lines.append(f"{token} rgb/{token}.png")
        depth_lines.append(f"{token} depth/{token}.png")
        tr, q = pose.as_quat()
        gt_lines.append(f"{token} " + " ".join(f"{x:.9f}" for x in (*tr, *q)))
        for idx, obj in enumerate(spec.objects, start=1):
            c = obj.center_at(t)
            manifest_lines.append(
                f"{k} {idx} {c[0]:.9f} {c[1]:.9f} {c[2]:.9f} "
                f"{int(obj.is_dynamic)} {int(obj.is_deformable)}")

    (out / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (out / "depth.txt").write_text("\n".join(depth_lines) + "\n")
    (out / "groundtruth.txt").write_text("\n".join(gt_lines) + "\n")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(manifest_lines) + "\n")
    with open(out / "intrinsics.txt", "w") as f:
        f.write(f"fx = {intr.fx}\nfy = {intr.fy}\ncx = {intr.cx}\ncy = {intr.cy}\n"
                f"depth_scale = {intr.depth_scale}\n")
    return manifest


def parse_scene_spec(path) -> SceneSpec:
    """Parse a flat key = value scene description.

    Repeated `object` keys append objects:
        object = <class> <shape> <size> <cx> <cy> <cz> static
        object = <class> <shape> <size> <cx> <cy> <cz> linear <vx> <vy> <vz>
        object = <class> <shape> <size> <cx> <cy> <cz> deform <amplitude> [spin_rad_s]
    Camera: `camera = static | line vx vy vz [yaw_deg_s] | sway ax ay az period [yaw_deg]`.
    """
    scalars: dict[str, str] = {}
    objects: list[ObjectSpec] = []
    camera = CameraPath()
    room = None
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"scene spec not found: {p}")
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{p}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "object":
            parts = value.split()
            if len(parts) < 7:
                raise ValueError(f"{p}:{lineno}: malformed object line")
            cls, shape, size = parts[0], parts[1], float(parts[2])
            center = (float(parts[3]), float(parts[4]), float(parts[5]))
            motion = parts[6]
            vel = (0.0, 0.0, 0.0)
            amp = 0.0
            spin = 0.0
            if motion == "linear":
                vel = (float(parts[7]), float(parts[8]), float(parts[9]))
            elif motion == "deform":
                amp = float(parts[7])
                if len(parts) > 8:
                    spin = float(parts[8])
            elif motion != "static":
                raise ValueError(f"{p}:{lineno}: unknown motion '{motion}'")
            objects.append(ObjectSpec(cls, shape, size, center, motion, vel, amp, spin))
        elif key == "camera":
            parts = value.split()
            camera = CameraPath(parts[0], tuple(float(x) for x in parts[1:]))
        elif key == "room":
            parts = [float(x) for x in value.split()]
            room = (parts[0], parts[1], parts[2])
        else:
            scalars[key] = value

    known = {"duration": int, "frame_rate": float, "width": int, "height": int,
             "depth_noise": float, "depth_scale": float, "seed": int, "fx": float}
    kwargs = {}
    for key, value in scalars.items():
        if key not in known:
            raise ValueError(f"unknown scene spec key: {key}")
        kwargs[key] = known[key](value)
    if "duration" not in kwargs:
        raise ValueError("scene spec must set duration")
    if room is not None:
        kwargs["room"] = room
    return SceneSpec(camera_path=camera, objects=tuple(objects), **kwargs)
