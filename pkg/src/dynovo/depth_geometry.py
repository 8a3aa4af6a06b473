"""Depth denoising and pinhole back-projection of masked pixels into 3D."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; depth_scale is raw depth units per meter."""

    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float = 5000.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")


@dataclass(frozen=True)
class GaussianKernelParams:
    """Half-window radius k (window is (2k+1)^2) and kernel sigma in pixels."""

    k: int = 2
    sigma: float = 1.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


class DepthFrame:
    """Dense metric depth with NaN marking missing measurements."""

    def __init__(self, values: np.ndarray):
        v = np.asarray(values, dtype=float)
        if v.ndim != 2:
            raise ValueError("depth must be a 2D array")
        with np.errstate(invalid="ignore"):
            if np.any(v[np.isfinite(v)] <= 0):
                raise ValueError("present depth values must be positive")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def present_mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    @staticmethod
    def from_raw(raw: np.ndarray, depth_scale: float) -> "DepthFrame":
        """Convert integer depth to meters; raw == 0 means missing."""
        raw = np.asarray(raw)
        vals = raw.astype(float) / float(depth_scale)
        vals[raw == 0] = np.nan
        return DepthFrame(vals)


def _gaussian_kernel(params: GaussianKernelParams) -> np.ndarray:
    k = params.k
    ax = np.arange(-k, k + 1, dtype=float)
    di, dj = np.meshgrid(ax, ax, indexing="ij")
    w = np.exp(-(di * di + dj * dj) / (2.0 * params.sigma**2))
    return w


def denoise_depth(depth: DepthFrame, params: GaussianKernelParams) -> DepthFrame:
    """Gaussian-weighted re-estimate of every pixel's depth.

    Weights are renormalized over the present pixels of each window, so
    depth holes do not drag estimates toward zero; a pixel whose whole
    window is missing stays missing.
    """
    kernel = _gaussian_kernel(params)
    present = depth.present_mask()
    filled = np.where(present, depth.values, 0.0)
    num = ndimage.convolve(filled, kernel, mode="constant", cval=0.0)
    den = ndimage.convolve(present.astype(float), kernel, mode="constant", cval=0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    out[den <= 0.0] = np.nan
    return DepthFrame(out)


def denoise_depth_at(depth: DepthFrame, u: int, v: int,
                     params: GaussianKernelParams) -> float:
    """Denoised depth at pixel (u=column, v=row); NaN if the window is empty."""
    if not (0 <= u < depth.width and 0 <= v < depth.height):
        raise ValueError(f"pixel ({u}, {v}) outside {depth.width}x{depth.height} image")
    k = params.k
    i0, i1 = max(0, v - k), min(depth.height, v + k + 1)
    j0, j1 = max(0, u - k), min(depth.width, u + k + 1)
    window = depth.values[i0:i1, j0:j1]
    kernel = _gaussian_kernel(params)[i0 - (v - k):i1 - (v - k), j0 - (u - k):j1 - (u - k)]
    present = np.isfinite(window)
    wsum = kernel[present].sum()
    if wsum <= 0.0:
        return float("nan")
    return float((kernel[present] * window[present]).sum() / wsum)


def backproject(u, v, z, intr: CameraIntrinsics) -> np.ndarray:
    """Lift pixel (u, v) at depth z to a 3D point in the camera frame."""
    z = np.asarray(z, dtype=float)
    if np.any(~np.isfinite(z)) or np.any(z <= 0):
        raise ValueError("depth must be finite and positive")
    x = (np.asarray(u, dtype=float) - intr.cx) / intr.fx * z
    y = (np.asarray(v, dtype=float) - intr.cy) / intr.fy * z
    return np.stack([x, y, z], axis=-1)


def project(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points to (u, v) pixels."""
    p = np.asarray(points, dtype=float)
    u = intr.fx * p[..., 0] / p[..., 2] + intr.cx
    v = intr.fy * p[..., 1] / p[..., 2] + intr.cy
    return np.stack([u, v], axis=-1)


def mask_to_cloud(depth: DepthFrame, label_map: np.ndarray, instance_id: int,
                  intr: CameraIntrinsics, params: GaussianKernelParams,
                  denoised: DepthFrame | None = None) -> np.ndarray:
    """Back-project the denoised depths under one instance mask into an (N, 3) cloud.

    Pixels whose denoised depth is missing are skipped. Passing a frame-level
    `denoised` depth avoids recomputing it per instance.
    """
    label_map = np.asarray(label_map)
    ij = np.argwhere(label_map == instance_id)
    if ij.size == 0:
        raise ValueError(f"instance id {instance_id} not present in label map")
    if denoised is None:
        denoised = denoise_depth(depth, params)
    z = denoised.values[ij[:, 0], ij[:, 1]]
    keep = np.isfinite(z)
    if not np.any(keep):
        return np.empty((0, 3))
    ij = ij[keep]
    return backproject(ij[:, 1], ij[:, 0], z[keep], intr)
