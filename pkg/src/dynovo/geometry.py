"""Rigid-body transforms: SE(3) poses, quaternions, exp/log maps and Jacobians.

Conventions:
  - a pose maps points from its own frame into the parent frame: p' = R p + t
  - quaternions are (qx, qy, qz, qw), scalar last
  - se(3) tangent vectors are 6-vectors [rho, phi] with the translational
    part first and the rotational part (axis-angle) last
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS_ANGLE = 1e-8


@dataclass(frozen=True)
class Se3Pose:
    """Rigid transform with a 3x3 rotation matrix and a translation vector."""

    rotation: np.ndarray
    translation: np.ndarray

    @staticmethod
    def identity() -> "Se3Pose":
        return Se3Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quat(translation, quat) -> "Se3Pose":
        """Build from translation (3,) and quaternion (qx, qy, qz, qw).

        The quaternion is normalized; a near-zero norm raises ValueError.
        """
        q = np.asarray(quat, dtype=float)
        n = np.linalg.norm(q)
        if n < 1e-12:
            raise ValueError("zero-norm quaternion")
        return Se3Pose(quat_to_matrix(q / n), np.asarray(translation, dtype=float).copy())

    def as_quat(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (translation, quaternion (qx, qy, qz, qw))."""
        return self.translation.copy(), matrix_to_quat(self.rotation)

    def compose(self, other: "Se3Pose") -> "Se3Pose":
        """self then other: (self * other) p = self(other(p))."""
        return Se3Pose(self.rotation @ other.rotation,
                       self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Se3Pose") -> "Se3Pose":
        return self.compose(other)

    def inverse(self) -> "Se3Pose":
        rt = self.rotation.T
        return Se3Pose(rt, -rt @ self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to a (3,) point or an (N, 3) array of points."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def rotation_defect(self) -> float:
        """Max-abs deviation of R^T R from identity plus |det - 1|."""
        r = self.rotation
        return float(np.abs(r.T @ r - np.eye(3)).max() + abs(np.linalg.det(r) - 1.0))


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to quaternion (qx, qy, qz, qw), w >= 0 (Shepperd)."""
    t = np.trace(r)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    if q[3] < 0:
        q = -q
    return q / np.linalg.norm(q)


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula with a Taylor fallback for small angles."""
    theta = np.linalg.norm(phi)
    k = hat(phi)
    if theta < _EPS_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (angle in [0, pi])."""
    q = matrix_to_quat(r)
    v, w = q[:3], q[3]
    n = np.linalg.norm(v)
    if n < _EPS_ANGLE:
        # theta ~ 2n/w with axis v/n; the series keeps v -> phi smooth at 0
        return v * (2.0 / w) * (1.0 - (n / w) ** 2 / 3.0)
    theta = 2.0 * np.arctan2(n, w)
    return v / n * theta


def rotation_angle_deg(r: np.ndarray) -> float:
    """Rotation angle of a matrix in degrees."""
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(phi)
    k = hat(phi)
    if theta < _EPS_ANGLE:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    a = (1.0 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * k + b * (k @ k)


def so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(phi)
    k = hat(phi)
    if theta < 1e-4:
        c = 1.0 / 12.0 + theta**2 / 720.0
    else:
        # stable through theta = pi, where tan(theta/2) -> inf
        c = (1.0 - (theta / 2.0) / np.tan(theta / 2.0)) / theta**2
    return np.eye(3) - 0.5 * k + c * (k @ k)


def se3_exp(xi: np.ndarray) -> Se3Pose:
    """Exponential map of [rho, phi] onto SE(3)."""
    rho, phi = xi[:3], xi[3:]
    return Se3Pose(so3_exp(phi), so3_left_jacobian(phi) @ rho)


def se3_log(pose: Se3Pose) -> np.ndarray:
    """Logarithm map: 6-vector [rho, phi] with se3_exp(se3_log(T)) == T."""
    phi = so3_log(pose.rotation)
    rho = so3_left_jacobian_inv(phi) @ pose.translation
    return np.concatenate([rho, phi])


def se3_adjoint(pose: Se3Pose) -> np.ndarray:
    """Adjoint matrix: T Exp(xi) T^-1 == Exp(Ad(T) xi)."""
    ad = np.zeros((6, 6))
    ad[:3, :3] = pose.rotation
    ad[3:, 3:] = pose.rotation
    ad[:3, 3:] = hat(pose.translation) @ pose.rotation
    return ad


def _se3_q_matrix(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    # upper-right block of the SE(3) left Jacobian (Barfoot's Q)
    theta = np.linalg.norm(phi)
    p = hat(rho)
    f = hat(phi)
    if theta < 1e-4:
        s1 = 1.0 / 6.0 - theta**2 / 120.0
        s2 = 1.0 / 24.0 - theta**2 / 720.0
        s3 = 1.0 / 120.0 - theta**2 / 2520.0
    else:
        s1 = (theta - np.sin(theta)) / theta**3
        s2 = (theta**2 + 2.0 * np.cos(theta) - 2.0) / (2.0 * theta**4)
        s3 = (2.0 * theta - 3.0 * np.sin(theta) + theta * np.cos(theta)) / (2.0 * theta**5)
    fp, pf = f @ p, p @ f
    fpf = f @ p @ f
    return (0.5 * p
            + s1 * (fp + pf + fpf)
            + s2 * (f @ fp + pf @ f - 3.0 * fpf)
            + s3 * (fpf @ f + f @ fpf))


def se3_left_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    rho, phi = xi[:3], xi[3:]
    jinv = so3_left_jacobian_inv(phi)
    q = _se3_q_matrix(rho, phi)
    out = np.zeros((6, 6))
    out[:3, :3] = jinv
    out[3:, 3:] = jinv
    out[:3, 3:] = -jinv @ q @ jinv
    return out


def se3_right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    return se3_left_jacobian_inv(-np.asarray(xi, dtype=float))


def best_fit_transform(src: np.ndarray, dst: np.ndarray,
                       weights: np.ndarray | None = None) -> Se3Pose:
    """Least-squares rigid transform mapping src points onto dst points.

    SVD solution of the orthogonal Procrustes problem, reflection-corrected
    so the returned rotation has det +1. Needs >= 3 points.
    """
    a = np.asarray(src, dtype=float)
    b = np.asarray(dst, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 3:
        raise ValueError("point sets must both be (N, 3)")
    if a.shape[0] < 3:
        raise ValueError("rigid alignment needs at least 3 point pairs")
    if weights is None:
        ca, cb = a.mean(axis=0), b.mean(axis=0)
        h = (a - ca).T @ (b - cb)
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        ca, cb = w @ a, w @ b
        h = (a - ca).T @ ((b - cb) * w[:, None])
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Se3Pose(r, cb - r @ ca)
