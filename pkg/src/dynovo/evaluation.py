"""Trajectory metrics: absolute trajectory error and relative pose error.

ATE rigidly aligns the estimated positions onto ground truth (closed form,
no scale — RGB-D trajectories are metric) and reports RMSE/SD of the
remaining position errors. RPE compares relative motions over a fixed
frame delta and reports translational drift in meters and rotational
drift in degrees. SD is the population standard deviation of the error
magnitudes, so sd**2 + mean**2 == rmse**2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset_io import Trajectory, associate_timestamps
from .geometry import Se3Pose, best_fit_transform, rotation_angle_deg


@dataclass(frozen=True)
class MetricReport:
    ate_rmse: float
    ate_sd: float
    rpe_trans_rmse: float
    rpe_trans_sd: float
    rpe_rot_rmse: float
    rpe_rot_sd: float
    matched_pairs: int


def _rmse_sd(errors: np.ndarray) -> tuple[float, float]:
    rmse = float(np.sqrt(np.mean(errors**2)))
    sd = float(np.sqrt(np.mean((errors - errors.mean())**2)))
    return rmse, sd


def match_poses(est: Trajectory, gt: Trajectory, max_diff: float = 0.02
                ) -> list[tuple[float, Se3Pose, Se3Pose]]:
    """Timestamp-associated (t_est, est pose, gt pose) triples."""
    pairs = associate_timestamps(list(est.timestamps()), list(gt.timestamps()), max_diff)
    return [(est.poses[i][0], est.poses[i][1], gt.poses[j][1]) for i, j in pairs]


def align_trajectories(est: Trajectory, gt: Trajectory, max_diff: float = 0.02
                       ) -> tuple[Se3Pose, list[tuple[float, Se3Pose, Se3Pose]]]:
    """Least-squares rigid alignment of estimated positions onto ground truth."""
    matched = match_poses(est, gt, max_diff)
    if len(matched) < 3:
        raise ValueError(f"need at least 3 matched pose pairs, got {len(matched)}")
    est_pos = np.array([m[1].translation for m in matched])
    gt_pos = np.array([m[2].translation for m in matched])
    return best_fit_transform(est_pos, gt_pos), matched


def ate(est: Trajectory, gt: Trajectory, max_diff: float = 0.02
        ) -> tuple[float, float]:
    """Absolute trajectory error (rmse, sd) in meters after rigid alignment."""
    alignment, matched = align_trajectories(est, gt, max_diff)
    est_pos = np.array([m[1].translation for m in matched])
    gt_pos = np.array([m[2].translation for m in matched])
    errors = np.linalg.norm(alignment.transform(est_pos) - gt_pos, axis=1)
    return _rmse_sd(errors)


def ate_per_pose(est: Trajectory, gt: Trajectory, max_diff: float = 0.02
                 ) -> list[tuple[float, np.ndarray, np.ndarray, float]]:
    """Per-pose (t, gt position, aligned est position, error) rows for plotting."""
    alignment, matched = align_trajectories(est, gt, max_diff)
    rows = []
    for t, e, g in matched:
        aligned = alignment.transform(e.translation)
        rows.append((t, g.translation, aligned, float(np.linalg.norm(aligned - g.translation))))
    return rows


def _relative_errors(matched: list[tuple[float, Se3Pose, Se3Pose]],
                     index_pairs: list[tuple[int, int]]
                     ) -> tuple[np.ndarray, np.ndarray]:
    trans, rot = [], []
    for i, j in index_pairs:
        _, e_i, g_i = matched[i]
        _, e_j, g_j = matched[j]
        rel_est = e_i.inverse() @ e_j
        rel_gt = g_i.inverse() @ g_j
        err = rel_gt.inverse() @ rel_est
        trans.append(np.linalg.norm(err.translation))
        rot.append(rotation_angle_deg(err.rotation))
    return np.array(trans), np.array(rot)


def rpe(est: Trajectory, gt: Trajectory, delta: int = 1, max_diff: float = 0.02
        ) -> tuple[float, float, float, float]:
    """Relative pose error over a fixed frame delta.

    Returns (trans rmse [m], trans sd [m], rot rmse [deg], rot sd [deg])
    computed from all n - delta relative motions of the matched sequence.
    """
    if delta < 1:
        raise ValueError("delta must be >= 1")
    matched = match_poses(est, gt, max_diff)
    if len(matched) < delta + 1:
        raise ValueError(f"need at least delta+1={delta + 1} matched pairs, "
                         f"got {len(matched)}")
    index_pairs = [(i, i + delta) for i in range(len(matched) - delta)]
    trans, rot = _relative_errors(matched, index_pairs)
    return (*_rmse_sd(trans), *_rmse_sd(rot))


def rpe_per_second(est: Trajectory, gt: Trajectory, seconds: float = 1.0,
                   max_diff: float = 0.02) -> tuple[float, float, float, float]:
    """RPE over a fixed time delta: each pose pairs with the closest pose
    to t + seconds (within max_diff of it)."""
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    matched = match_poses(est, gt, max_diff)
    ts = np.array([m[0] for m in matched])
    index_pairs = []
    for i, t in enumerate(ts):
        j = int(np.searchsorted(ts, t + seconds))
        best, best_err = None, max_diff
        for cand in (j - 1, j):
            if i < cand < len(ts):
                err = abs(ts[cand] - (t + seconds))
                if err <= best_err:
                    best, best_err = cand, err
        if best is not None:
            index_pairs.append((i, best))
    if not index_pairs:
        raise ValueError("no pose pairs at the requested time delta")
    trans, rot = _relative_errors(matched, index_pairs)
    return (*_rmse_sd(trans), *_rmse_sd(rot))


def build_report(est: Trajectory, gt: Trajectory, delta: int = 1,
                 max_diff: float = 0.02, per_second: bool = False) -> MetricReport:
    ate_rmse, ate_sd = ate(est, gt, max_diff)
    if per_second:
        tr, ts_, rr, rs = rpe_per_second(est, gt, 1.0, max_diff)
    else:
        tr, ts_, rr, rs = rpe(est, gt, delta, max_diff)
    matched = len(match_poses(est, gt, max_diff))
    return MetricReport(ate_rmse, ate_sd, tr, ts_, rr, rs, matched)


def report_csv(report: MetricReport) -> str:
    lines = ["metric,value"]
    for name in ("ate_rmse", "ate_sd", "rpe_trans_rmse", "rpe_trans_sd",
                 "rpe_rot_rmse", "rpe_rot_sd", "matched_pairs"):
        lines.append(f"{name},{getattr(report, name)}")
    return "\n".join(lines) + "\n"


def format_report(report: MetricReport) -> str:
    return (f"matched pose pairs : {report.matched_pairs}\n"
            f"ATE rmse           : {report.ate_rmse:.6f} m\n"
            f"ATE sd             : {report.ate_sd:.6f} m\n"
            f"RPE trans rmse     : {report.rpe_trans_rmse:.6f} m\n"
            f"RPE trans sd       : {report.rpe_trans_sd:.6f} m\n"
            f"RPE rot rmse       : {report.rpe_rot_rmse:.6f} deg\n"
            f"RPE rot sd         : {report.rpe_rot_sd:.6f} deg\n")
