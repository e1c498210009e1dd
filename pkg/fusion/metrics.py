"""Trajectory accuracy metrics: rigid alignment, ATE, per-axis MAE and completeness."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from fusion.errors import InputError
from fusion.models import TimedPose


ASSOCIATION_WINDOW = 0.05
COMPLETENESS_STEP = 0.1
COMPLETENESS_WINDOW = 3.0

RESULT_COLUMNS = [
    'sequence', 'approach', 'length_m',
    'mae_x', 'mae_y', 'mae_z',
    'mae_rot_z', 'mae_rot_y', 'mae_rot_x',
    'rmse_trans', 'completeness',
]


@dataclass
class TrajectoryEval:
    mae_translation: np.ndarray
    mae_rotation_deg: Optional[np.ndarray]
    rmse_translation: float
    completeness: float
    pairs: int = 0


def associate(est: Sequence[TimedPose], gt: Sequence[TimedPose], max_dt=ASSOCIATION_WINDOW) -> List[Tuple[int, int]]:
    """Nearest ground-truth stamp for every estimate within `max_dt`."""
    if not est or not gt:
        return []
    gt_stamps = np.array([p.stamp for p in gt])
    pairs = []
    for i, pose in enumerate(est):
        j = int(np.searchsorted(gt_stamps, pose.stamp))
        candidates = [k for k in (j - 1, j) if 0 <= k < len(gt_stamps)]
        best = min(candidates, key=lambda k: abs(gt_stamps[k] - pose.stamp))
        if abs(gt_stamps[best] - pose.stamp) <= max_dt:
            pairs.append((i, best))
    return pairs


def _associated_positions(est, gt, max_dt):
    pairs = associate(est, gt, max_dt)
    est_p = np.array([est[i].position for i, _ in pairs]).reshape(-1, 3)
    gt_p = np.array([gt[j].position for _, j in pairs]).reshape(-1, 3)
    return pairs, est_p, gt_p


def rigid_transform(est_p, gt_p):
    """Least-squares rotation/translation with gt ~ R est + t (no scale)."""
    mu_e = est_p.mean(axis=0)
    mu_g = gt_p.mean(axis=0)
    cov = (gt_p - mu_g).T @ (est_p - mu_e)
    U, _, Vt = np.linalg.svd(cov)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ D @ Vt
    return R, mu_g - R @ mu_e


def align_rigid(est: Sequence[TimedPose], gt: Sequence[TimedPose], max_dt=ASSOCIATION_WINDOW) -> List[TimedPose]:
    pairs, est_p, gt_p = _associated_positions(est, gt, max_dt)
    if len(pairs) < 3:
        raise InputError(f"rigid alignment needs at least 3 associated poses, got {len(pairs)}")
    R, t = rigid_transform(est_p, gt_p)
    return [TimedPose(p.stamp, R @ p.position + t, None if p.rotation is None else R @ p.rotation)
            for p in est]


def compute_ate(aligned_est, gt, max_dt=ASSOCIATION_WINDOW) -> float:
    pairs, est_p, gt_p = _associated_positions(aligned_est, gt, max_dt)
    if not pairs:
        return float('nan')
    return float(np.sqrt(np.mean(np.sum((est_p - gt_p) ** 2, axis=1))))


def compute_mae(aligned_est, gt, max_dt=ASSOCIATION_WINDOW) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Per-axis translation MAE (m) and Z/Y/X rotation MAE (deg)."""
    pairs, est_p, gt_p = _associated_positions(aligned_est, gt, max_dt)
    if not pairs:
        return np.full(3, np.nan), None
    translation = np.mean(np.abs(est_p - gt_p), axis=0)
    with_rotation = [(aligned_est[i].rotation, gt[j].rotation) for i, j in pairs
                     if aligned_est[i].rotation is not None and gt[j].rotation is not None]
    if not with_rotation:
        return translation, None
    errors = Rotation.from_matrix(np.array([r_gt.T @ r_est for r_est, r_gt in with_rotation]))
    rotation = np.mean(np.abs(errors.as_euler('ZYX', degrees=True)), axis=0)
    return translation, rotation


def compute_completeness(est_stamps, span, step=COMPLETENESS_STEP, window=COMPLETENESS_WINDOW) -> float:
    start, end = float(span[0]), float(span[1])
    if not end > start:
        raise InputError("completeness span must be positive")
    stamps = np.sort(np.asarray(list(est_stamps), dtype=float))
    grid = start + step * np.arange(int(math.floor((end - start) / step + 1e-9)) + 1)
    if stamps.size == 0:
        return 0.0
    idx = np.clip(np.searchsorted(stamps, grid), 0, stamps.size - 1)
    nearest = np.minimum(np.abs(stamps[idx] - grid), np.abs(stamps[np.maximum(idx - 1, 0)] - grid))
    return float(np.mean(nearest <= window + 1e-9))


def trajectory_length(poses: Sequence[TimedPose]) -> float:
    if len(poses) < 2:
        return 0.0
    positions = np.array([p.position for p in poses])
    return float(np.sum(np.linalg.norm(np.diff(positions, axis=0), axis=1)))


def evaluate_trajectory(est, gt, align=True, span=None, max_dt=ASSOCIATION_WINDOW) -> TrajectoryEval:
    aligned = align_rigid(est, gt, max_dt) if align else list(est)
    translation, rotation = compute_mae(aligned, gt, max_dt)
    if span is None:
        span = (gt[0].stamp, gt[-1].stamp)
    return TrajectoryEval(
        mae_translation=translation,
        mae_rotation_deg=rotation,
        rmse_translation=compute_ate(aligned, gt, max_dt),
        completeness=compute_completeness([p.stamp for p in est], span),
        pairs=len(associate(aligned, gt, max_dt)),
    )


def result_row(sequence, approach, evaluation: TrajectoryEval, length_m) -> Dict[str, object]:
    rotation = evaluation.mae_rotation_deg
    row = {
        'sequence': sequence,
        'approach': approach,
        'length_m': round(float(length_m), 3),
        'mae_x': float(evaluation.mae_translation[0]),
        'mae_y': float(evaluation.mae_translation[1]),
        'mae_z': float(evaluation.mae_translation[2]),
        'mae_rot_z': '' if rotation is None else float(rotation[0]),
        'mae_rot_y': '' if rotation is None else float(rotation[1]),
        'mae_rot_x': '' if rotation is None else float(rotation[2]),
        'rmse_trans': evaluation.rmse_translation,
        'completeness': evaluation.completeness,
    }
    return row
