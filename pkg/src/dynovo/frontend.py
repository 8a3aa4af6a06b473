"""Feature detection, matching and frame-to-frame pose estimation.

The built-in detector is a segment-test corner detector (16-pixel Bresenham
circle, 9 contiguous brighter/darker pixels) paired with a 256-bit binary
descriptor of pairwise intensity comparisons on a smoothed patch. It is
deliberately simple; any detector implementing `FeatureDetector` can be
plugged in instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import ndimage

from .depth_geometry import CameraIntrinsics, DepthFrame, GaussianKernelParams, backproject, denoise_depth_at
from .geometry import Se3Pose, best_fit_transform

# (dv, du) offsets of the radius-3 circle, clockwise from 12 o'clock
_CIRCLE = np.array([
    (-3, 0), (-3, 1), (-2, 2), (-1, 3), (0, 3), (1, 3), (2, 2), (3, 1),
    (3, 0), (3, -1), (2, -2), (1, -3), (0, -3), (-1, -3), (-2, -2), (-3, -1),
])
_ARC = 9

_PATCH_HALF = 12
_N_BITS = 256
_pair_rng = np.random.default_rng(1905)
_PAIRS_A = _pair_rng.integers(-_PATCH_HALF, _PATCH_HALF + 1, size=(_N_BITS, 2))
_PAIRS_B = _pair_rng.integers(-_PATCH_HALF, _PATCH_HALF + 1, size=(_N_BITS, 2))

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


@dataclass(frozen=True)
class Keypoint:
    u: float
    v: float
    response: float
    descriptor: np.ndarray   # (32,) uint8, 256 comparison bits


@dataclass(frozen=True)
class Correspondence3d:
    p_prev: np.ndarray
    p_curr: np.ndarray


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 500
    inlier_threshold: float = 0.02
    min_inliers: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.inlier_threshold <= 0 or self.min_inliers < 3:
            raise ValueError("invalid RANSAC parameters")


class FeatureDetector(Protocol):
    def detect(self, image: np.ndarray,
               exclusion_mask: np.ndarray | None = None) -> list[Keypoint]: ...


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """RGB (or already-gray) uint8 image to float grayscale."""
    img = np.asarray(image)
    if img.ndim == 3:
        return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114
    return img.astype(float)


@dataclass(frozen=True)
class CornerBriefDetector:
    """Default detector: circle segment test + binary patch descriptor."""

    threshold: float = 20.0
    max_keypoints: int = 1000
    mask_dilate_px: int = 5
    descriptor_sigma: float = 2.0

    def detect(self, image: np.ndarray,
               exclusion_mask: np.ndarray | None = None) -> list[Keypoint]:
        gray = to_grayscale(image)
        h, w = gray.shape
        border = _PATCH_HALF + 4
        if h <= 2 * border or w <= 2 * border:
            return []

        corner, response = _segment_test(gray, self.threshold)

        keep = corner & (response == ndimage.maximum_filter(response, size=3))
        keep[:border, :] = keep[-border:, :] = False
        keep[:, :border] = keep[:, -border:] = False
        if exclusion_mask is not None:
            excl = np.asarray(exclusion_mask).astype(bool)
            if excl.shape != gray.shape:
                raise ValueError("exclusion mask dimensions differ from image")
            if self.mask_dilate_px > 0:
                excl = ndimage.binary_dilation(excl, iterations=self.mask_dilate_px)
            keep &= ~excl

        vs, us = np.nonzero(keep)
        if vs.size == 0:
            return []
        resp = response[vs, us]
        order = np.argsort(-resp, kind="stable")[:self.max_keypoints]
        vs, us, resp = vs[order], us[order], resp[order]

        smooth = ndimage.gaussian_filter(gray, self.descriptor_sigma)
        a = smooth[vs[:, None] + _PAIRS_A[:, 0], us[:, None] + _PAIRS_A[:, 1]]
        b = smooth[vs[:, None] + _PAIRS_B[:, 0], us[:, None] + _PAIRS_B[:, 1]]
        descs = np.packbits(a < b, axis=1)

        return [Keypoint(float(u), float(v), float(r), d)
                for u, v, r, d in zip(us, vs, resp, descs)]


def _segment_test(gray: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Corner mask and response (sum of absolute circle differences)."""
    h, w = gray.shape
    r = 3
    center = gray[r:h - r, r:w - r]
    bright = np.empty((16,) + center.shape, dtype=bool)
    dark = np.empty_like(bright)
    response_in = np.zeros_like(center)
    for idx, (dv, du) in enumerate(_CIRCLE):
        shifted = gray[r + dv:h - r + dv, r + du:w - r + du]
        diff = shifted - center
        bright[idx] = diff > threshold
        dark[idx] = diff < -threshold
        response_in += np.abs(diff)

    corner_in = _has_contiguous_run(bright) | _has_contiguous_run(dark)
    corner = np.zeros((h, w), dtype=bool)
    corner[r:h - r, r:w - r] = corner_in
    response = np.zeros((h, w))
    response[r:h - r, r:w - r] = np.where(corner_in, response_in, 0.0)
    return corner, response


def _has_contiguous_run(bits: np.ndarray) -> np.ndarray:
    """True where >= _ARC of the 16 circular bits are set contiguously."""
    tiled = np.concatenate([bits, bits[:_ARC - 1]], axis=0).astype(np.int8)
    csum = np.cumsum(tiled, axis=0)
    csum = np.concatenate([np.zeros((1,) + bits.shape[1:], dtype=csum.dtype), csum], axis=0)
    runs = csum[_ARC:] - csum[:-_ARC]   # (16, h, w) window sums
    return np.any(runs == _ARC, axis=0)


def detect_keypoints(image: np.ndarray, exclusion_mask: np.ndarray | None = None,
                     detector: FeatureDetector | None = None) -> list[Keypoint]:
    if detector is None:
        detector = CornerBriefDetector()
    return detector.detect(image, exclusion_mask)


def hamming_matrix(desc_a: np.ndarray, desc_b: np.ndarray) -> np.ndarray:
    """Pairwise Hamming distances between (Na, 32) and (Nb, 32) descriptors."""
    xor = desc_a[:, None, :] ^ desc_b[None, :, :]
    return _POPCOUNT[xor].sum(axis=2, dtype=np.int32)


def match_descriptors(a: list[Keypoint], b: list[Keypoint],
                      ratio: float = 0.75) -> list[tuple[int, int]]:
    """Mutual nearest neighbors under Hamming distance with a ratio test.

    A candidate survives when its best distance is strictly below
    ratio * (second-best distance) in the a->b direction and the pairing is
    mutual; each index appears in at most one pair.
    """
    if not (0 < ratio <= 1):
        raise ValueError("ratio must be in (0, 1]")
    if not a or not b:
        return []
    da = np.stack([kp.descriptor for kp in a])
    db = np.stack([kp.descriptor for kp in b])
    dist = hamming_matrix(da, db)

    best_b = np.argmin(dist, axis=1)
    best_a = np.argmin(dist, axis=0)
    matches = []
    for ia, ib in enumerate(best_b):
        if best_a[ib] != ia:
            continue
        d1 = dist[ia, ib]
        if dist.shape[1] >= 2:
            row = dist[ia].copy()
            row[ib] = np.iinfo(row.dtype).max
            d2 = row.min()
            if not d1 < ratio * d2:
                continue
        matches.append((ia, int(ib)))
    return matches


def _normalize(pts: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    x = (pts[:, 0] - intr.cx) / intr.fx
    y = (pts[:, 1] - intr.cy) / intr.fy
    return np.stack([x, y, np.ones_like(x)], axis=1)


def _essential_from_eight(x1h: np.ndarray, x2h: np.ndarray) -> np.ndarray:
    """Batched linear 8-point estimate, projected onto the essential manifold.

    x1h, x2h: (..., m, 3) homogeneous normalized coordinates, m >= 8.
    """
    a = x2h[..., :, :, None] * x1h[..., :, None, :]   # (..., m, 3, 3)
    a = a.reshape(a.shape[:-3] + (a.shape[-3], 9))
    _, _, vt = np.linalg.svd(a)
    e = vt[..., -1, :].reshape(vt.shape[:-2] + (3, 3))
    u, _, vt2 = np.linalg.svd(e)
    s = np.zeros(e.shape[:-2] + (3,))
    s[..., 0] = s[..., 1] = 1.0
    return u @ (s[..., :, None] * vt2)


def _sampson_px(f: np.ndarray, p1h: np.ndarray, p2h: np.ndarray) -> np.ndarray:
    """Sampson distance in pixels for fundamental matrices f (..., 3, 3)."""
    l1 = np.einsum("...ij,nj->...ni", f, p1h)
    l2 = np.einsum("...ji,nj->...ni", f, p2h)
    num = np.einsum("ni,...ni->...n", p2h, l1) ** 2
    den = l1[..., 0] ** 2 + l1[..., 1] ** 2 + l2[..., 0] ** 2 + l2[..., 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = num / den
    return np.sqrt(np.where(den > 0, d2, np.inf))


def epipolar_filter(pts_prev: np.ndarray, pts_curr: np.ndarray,
                    intr: CameraIntrinsics, params: RansacParams) -> np.ndarray:
    """Reject matches violating the two-view epipolar constraint.

    RANSAC over 8-point essential-matrix hypotheses; inliers are matches
    whose Sampson distance (in pixels, via F = K^-T E K^-1) stays within
    params.inlier_threshold. Returns indices of inlier matches.
    """
    p1 = np.asarray(pts_prev, dtype=float)
    p2 = np.asarray(pts_curr, dtype=float)
    n = p1.shape[0]
    if n < 8:
        raise ValueError(f"insufficient matches for epipolar filtering: {n} < 8")
    x1h = _normalize(p1, intr)
    x2h = _normalize(p2, intr)
    p1h = np.concatenate([p1, np.ones((n, 1))], axis=1)
    p2h = np.concatenate([p2, np.ones((n, 1))], axis=1)
    k = np.array([[intr.fx, 0, intr.cx], [0, intr.fy, intr.cy], [0, 0, 1.0]])
    kinv = np.linalg.inv(k)

    rng = np.random.default_rng(params.seed)
    samples = rng.random((params.iterations, n)).argsort(axis=1)[:, :8]
    e = _essential_from_eight(x1h[samples], x2h[samples])
    f = kinv.T @ e @ kinv
    d = _sampson_px(f, p1h, p2h)
    inlier = d <= params.inlier_threshold
    counts = inlier.sum(axis=1)
    best = int(np.argmax(counts))
    best_mask = inlier[best]

    if best_mask.sum() >= 8:
        e_ref = _essential_from_eight(x1h[best_mask], x2h[best_mask])
        f_ref = kinv.T @ e_ref @ kinv
        refined = _sampson_px(f_ref, p1h, p2h) <= params.inlier_threshold
        if refined.sum() >= best_mask.sum():
            best_mask = refined
    return np.nonzero(best_mask)[0]


def lift_matches_to_3d(pts_prev: np.ndarray, pts_curr: np.ndarray,
                       depth_prev: DepthFrame, depth_curr: DepthFrame,
                       intr: CameraIntrinsics, denoise: GaussianKernelParams
                       ) -> tuple[list[Correspondence3d], np.ndarray]:
    """Back-project both endpoints of each match using denoised depth.

    Matches with missing depth on either side are dropped. Returns the 3D
    correspondences plus the indices of the matches that were kept.
    """
    p1 = np.asarray(pts_prev, dtype=float)
    p2 = np.asarray(pts_curr, dtype=float)
    corrs, kept = [], []
    for i in range(p1.shape[0]):
        u1, v1 = int(round(p1[i, 0])), int(round(p1[i, 1]))
        u2, v2 = int(round(p2[i, 0])), int(round(p2[i, 1]))
        z1 = denoise_depth_at(depth_prev, u1, v1, denoise)
        z2 = denoise_depth_at(depth_curr, u2, v2, denoise)
        if not (np.isfinite(z1) and np.isfinite(z2)):
            continue
        corrs.append(Correspondence3d(backproject(u1, v1, z1, intr),
                                      backproject(u2, v2, z2, intr)))
        kept.append(i)
    return corrs, np.array(kept, dtype=int)


def _batched_kabsch(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid transforms mapping point triples a onto b, batched over axis 0."""
    ca = a.mean(axis=1, keepdims=True)
    cb = b.mean(axis=1, keepdims=True)
    h = np.einsum("hij,hik->hjk", a - ca, b - cb)
    u, _, vt = np.linalg.svd(h)
    v = vt.transpose(0, 2, 1)
    d = np.sign(np.linalg.det(v @ u.transpose(0, 2, 1)))
    v_adj = v.copy()
    v_adj[:, :, 2] *= d[:, None]
    r = v_adj @ u.transpose(0, 2, 1)
    t = cb[:, 0, :] - np.einsum("hij,hj->hi", r, ca[:, 0, :])
    return r, t


def estimate_pose_ransac(corrs: list[Correspondence3d],
                         params: RansacParams) -> tuple[Se3Pose, np.ndarray]:
    """RANSAC 3D-3D registration: the returned pose maps p_prev onto p_curr.

    Minimal 3-point hypotheses solved in closed form (SVD, reflection
    corrected), best hypothesis refit on its inliers until the inlier set
    stabilizes. Deterministic for a fixed seed; ties between hypotheses go
    to the earlier iteration.
    """
    if len(corrs) < 3:
        raise ValueError(f"need at least 3 correspondences, got {len(corrs)}")
    prev = np.stack([c.p_prev for c in corrs])
    curr = np.stack([c.p_curr for c in corrs])
    n = prev.shape[0]

    rng = np.random.default_rng(params.seed)
    samples = rng.random((params.iterations, n)).argsort(axis=1)[:, :3]
    r, t = _batched_kabsch(prev[samples], curr[samples])
    resid = np.einsum("hij,nj->hni", r, prev) + t[:, None, :] - curr[None]
    inlier = np.linalg.norm(resid, axis=2) <= params.inlier_threshold
    counts = inlier.sum(axis=1)
    best = int(np.argmax(counts))
    mask = inlier[best]

    for _ in range(3):
        if mask.sum() < 3:
            break
        pose = best_fit_transform(prev[mask], curr[mask])
        res = np.linalg.norm(pose.transform(prev) - curr, axis=1)
        new_mask = res <= params.inlier_threshold
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask

    if mask.sum() < max(3, params.min_inliers):
        raise ValueError(
            f"degenerate registration: {int(mask.sum())} inliers < {params.min_inliers}")
    pose = best_fit_transform(prev[mask], curr[mask])
    return pose, np.nonzero(mask)[0]
