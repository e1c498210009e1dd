"""Tests for trajectory accuracy metrics."""
import math
import unittest

import numpy as np
from scipy.spatial.transform import Rotation

from fusion.errors import InputError
from fusion.lie import yaw_matrix
from fusion.metrics import (
    RESULT_COLUMNS,
    align_rigid,
    associate,
    compute_ate,
    compute_completeness,
    compute_mae,
    evaluate_trajectory,
    result_row,
    rigid_transform,
    trajectory_length,
)
from fusion.models import TimedPose


def _trajectory(n=50, rate=10.0):
    t = np.arange(n) / rate
    positions = np.column_stack([3.0 * t, 5.0 * np.sin(0.4 * t), 0.2 * t ** 2])
    return [TimedPose(float(s), p, yaw_matrix(0.1 * s)) for s, p in zip(t, positions)]


def _transformed(poses, R, t):
    return [TimedPose(p.stamp, R @ p.position + t, R @ p.rotation) for p in poses]


class AlignmentTests(unittest.TestCase):

    def test_identity_alignment(self):
        gt = _trajectory()
        aligned = align_rigid(gt, gt)
        for a, g in zip(aligned, gt):
            np.testing.assert_allclose(a.position, g.position, atol=1e-9)

    def test_recovers_rigid_transform(self):
        gt = _trajectory()
        R = Rotation.from_euler('zyx', [40.0, 5.0, -3.0], degrees=True).as_matrix()
        est = _transformed(gt, R, np.array([10.0, -2.0, 7.0]))
        aligned = align_rigid(est, gt)
        self.assertLess(compute_ate(aligned, gt), 1e-9)
        translation, rotation = compute_mae(aligned, gt)
        np.testing.assert_allclose(rotation, np.zeros(3), atol=1e-7)

    def test_closed_form_beats_random_transforms(self):
        rng = np.random.default_rng(0)
        gt = _trajectory()
        est = [TimedPose(p.stamp, p.position + rng.normal(0.0, 0.3, 3)) for p in gt]
        est_p = np.array([p.position for p in est])
        gt_p = np.array([p.position for p in gt])
        R, t = rigid_transform(est_p, gt_p)
        best = np.sum((est_p @ R.T + t - gt_p) ** 2)
        for _ in range(2000):
            R_try = Rotation.from_rotvec(rng.normal(0.0, 0.02, 3)).as_matrix() @ R
            t_try = t + rng.normal(0.0, 0.1, 3)
            self.assertGreaterEqual(np.sum((est_p @ R_try.T + t_try - gt_p) ** 2), best - 1e-9)

    def test_too_few_pairs(self):
        gt = _trajectory()
        with self.assertRaises(InputError):
            align_rigid(gt[:2], gt)

    def test_association_window(self):
        gt = _trajectory()
        est = [TimedPose(0.03, np.zeros(3)), TimedPose(0.26, np.zeros(3)), TimedPose(9.0, np.zeros(3))]
        self.assertEqual(associate(est, gt), [(0, 0), (1, 3)])
        self.assertEqual(associate(est, gt, max_dt=0.01), [])


class ErrorMetricTests(unittest.TestCase):

    def test_two_pose_ate(self):
        gt = [TimedPose(0.0, np.zeros(3)), TimedPose(1.0, np.zeros(3))]
        est = [TimedPose(0.0, np.array([1.0, 0.0, 0.0])), TimedPose(1.0, np.array([0.0, 7.0, 0.0]))]
        self.assertAlmostEqual(compute_ate(est, gt), 5.0)

    def test_constant_offset_without_alignment(self):
        gt = _trajectory()
        est = [TimedPose(p.stamp, p.position + np.array([1.0, 2.0, 3.0]), p.rotation) for p in gt]
        self.assertAlmostEqual(compute_ate(est, gt), math.sqrt(14.0))
        translation, rotation = compute_mae(est, gt)
        np.testing.assert_allclose(translation, [1.0, 2.0, 3.0], atol=1e-12)
        np.testing.assert_allclose(rotation, np.zeros(3), atol=1e-9)

    def test_constant_yaw_offset(self):
        gt = _trajectory()
        est = [TimedPose(p.stamp, p.position, p.rotation @ yaw_matrix(math.radians(5.0))) for p in gt]
        _, rotation = compute_mae(est, gt)
        np.testing.assert_allclose(rotation, [5.0, 0.0, 0.0], atol=1e-9)

    def test_missing_rotation(self):
        gt = _trajectory()
        est = [TimedPose(p.stamp, p.position) for p in gt]
        translation, rotation = compute_mae(est, gt)
        self.assertIsNone(rotation)

    def test_alignment_never_increases_ate(self):
        rng = np.random.default_rng(4)
        gt = _trajectory()
        est = _transformed([TimedPose(p.stamp, p.position + rng.normal(0.0, 0.5, 3)) for p in gt],
                           yaw_matrix(0.2), np.array([1.0, 1.0, 0.0]))
        self.assertLessEqual(compute_ate(align_rigid(est, gt), gt), compute_ate(est, gt))


class CompletenessTests(unittest.TestCase):

    def test_full_coverage(self):
        self.assertEqual(compute_completeness(np.arange(0.0, 100.0, 1.0), (0.0, 100.0)), 1.0)

    def test_empty(self):
        self.assertEqual(compute_completeness([], (0.0, 100.0)), 0.0)

    def test_partial_coverage(self):
        stamps = np.arange(0.0, 47.0 + 1e-9, 0.1)
        self.assertAlmostEqual(compute_completeness(stamps, (0.0, 100.0)), 0.5, delta=0.002)

    def test_monotone_in_estimates(self):
        base = compute_completeness([10.0, 40.0], (0.0, 100.0))
        more = compute_completeness([10.0, 40.0, 70.0], (0.0, 100.0))
        self.assertGreater(more, base)

    def test_invalid_span(self):
        with self.assertRaises(InputError):
            compute_completeness([1.0], (5.0, 5.0))


class ReportingTests(unittest.TestCase):

    def test_evaluate_and_row(self):
        gt = _trajectory()
        est = _transformed(gt, yaw_matrix(1.0), np.array([4.0, 0.0, 0.0]))
        evaluation = evaluate_trajectory(est, gt)
        self.assertLess(evaluation.rmse_translation, 1e-9)
        self.assertEqual(evaluation.completeness, 1.0)
        self.assertEqual(evaluation.pairs, len(gt))
        row = result_row('seq', 'fused', evaluation, trajectory_length(gt))
        self.assertEqual(list(row), RESULT_COLUMNS)
        self.assertGreater(row['length_m'], 14.0)

    def test_length(self):
        poses = [TimedPose(0.0, np.zeros(3)), TimedPose(1.0, np.array([3.0, 4.0, 0.0])),
                 TimedPose(2.0, np.array([3.0, 4.0, 12.0]))]
        self.assertEqual(trajectory_length(poses), 17.0)
        self.assertEqual(trajectory_length(poses[:1]), 0.0)


if __name__ == '__main__':
    unittest.main()
