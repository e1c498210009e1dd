"""GNSS/local-trajectory alignment used to hand off from warm-up to fused mode."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from fusion.errors import DegenerateInputError, InputError
from fusion.lie import yaw_matrix


logger = logging.getLogger(__name__)

MIN_ALIGNMENT_PAIRS = 20
MIN_HORIZONTAL_EXTENT = 30.0


@dataclass(frozen=True)
class AlignmentEstimate:
    scale: float
    yaw: float
    translation: np.ndarray
    rms: float

    def to_dict(self):
        return {
            'scale': self.scale,
            'yaw': self.yaw,
            'translation': self.translation.tolist(),
            'rms': self.rms,
        }


def select_reference(spp_fixes: Sequence[np.ndarray]) -> Optional[np.ndarray]:
    """The third fix since start, or None while fewer than three exist."""
    if len(spp_fixes) < 3:
        return None
    return np.asarray(spp_fixes[2], dtype=float)


def interpolate_positions(stamps, positions, query_stamps) -> Tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear positions at the queries inside the trajectory span.

    Returns (positions, mask) where mask marks the queries that were inside
    the span; out-of-span queries are excluded from the positions array.
    """
    stamps = np.asarray(stamps, dtype=float)
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    query = np.asarray(query_stamps, dtype=float)
    if stamps.size == 0:
        return np.zeros((0, 3)), np.zeros(query.shape, dtype=bool)
    mask = (query >= stamps[0]) & (query <= stamps[-1])
    inside = query[mask]
    out = np.column_stack([np.interp(inside, stamps, positions[:, axis]) for axis in range(3)])
    return out.reshape(-1, 3), mask


def alignment_cost(enu_pts, local_pts, scale, yaw, translation) -> float:
    enu = np.asarray(enu_pts, dtype=float)
    local = np.asarray(local_pts, dtype=float)
    predicted = scale * local @ yaw_matrix(yaw).T + np.asarray(translation, dtype=float)
    return float(np.sum((enu - predicted) ** 2))


def align_5dof(enu_pts, local_pts) -> AlignmentEstimate:
    """Closed-form scale, yaw and translation taking local points onto ENU points."""
    enu = np.asarray(enu_pts, dtype=float).reshape(-1, 3)
    local = np.asarray(local_pts, dtype=float).reshape(-1, 3)
    if enu.shape != local.shape:
        raise InputError("point sets differ in size")
    if len(enu) < 3:
        raise InputError(f"need at least 3 correspondences, got {len(enu)}")

    q_mean = enu.mean(axis=0)
    p_mean = local.mean(axis=0)
    q_bar = enu - q_mean
    p_bar = local - p_mean
    spread = float(np.sum(p_bar ** 2))
    if spread == 0.0:
        raise DegenerateInputError("local points are all coincident")

    yaw = math.atan2(np.sum(p_bar[:, 0] * q_bar[:, 1] - p_bar[:, 1] * q_bar[:, 0]),
                     np.sum(p_bar[:, 0] * q_bar[:, 0] + p_bar[:, 1] * q_bar[:, 1]))
    R = yaw_matrix(yaw)
    scale = float(np.sum(q_bar * (p_bar @ R.T)) / spread)
    if scale <= 0.0:
        raise DegenerateInputError(f"alignment produced non-positive scale {scale:.3g}")
    translation = q_mean - scale * R @ p_mean
    rms = math.sqrt(alignment_cost(enu, local, scale, yaw, translation) / len(enu))
    return AlignmentEstimate(scale, yaw, translation, rms)


def ready_for_alignment(local_pts, min_pairs=MIN_ALIGNMENT_PAIRS, min_extent=MIN_HORIZONTAL_EXTENT) -> bool:
    """Enough pairs and enough horizontal motion to observe yaw."""
    local = np.asarray(local_pts, dtype=float).reshape(-1, 3)
    if len(local) < min_pairs:
        return False
    horizontal = local[:, :2]
    extent = float(np.max(np.linalg.norm(horizontal - horizontal[0], axis=1)))
    return extent >= min_extent


def translation_for_scale(enu_pts, local_pts, yaw, scale=1.0) -> np.ndarray:
    """Least-squares translation for a fixed yaw and scale."""
    enu = np.asarray(enu_pts, dtype=float).reshape(-1, 3)
    local = np.asarray(local_pts, dtype=float).reshape(-1, 3)
    return enu.mean(axis=0) - scale * yaw_matrix(yaw) @ local.mean(axis=0)
