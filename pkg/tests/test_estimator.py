"""Tests for the sliding-window estimator state machine."""
import math
import unittest
from dataclasses import replace

import numpy as np

from fusion.errors import ConfigError, InputError
from fusion.estimator import (
    MODE_VIO,
    Estimator,
    EstimatorConfig,
    HistoryRecord,
    WindowFrame,
    export_global_trajectory,
    run_estimator,
)
from fusion.frames import enu_to_ecef, make_enu_anchor
from fusion.initialization import align_5dof
from fusion.lie import rot_to_quat, yaw_matrix
from fusion.metrics import align_rigid, associate, compute_ate, evaluate_trajectory
from fusion.models import TimedPose
from fusion.simulator import simulate
from fusion.state import ALIGNMENT_KEY, EXTRINSICS_KEY, NavState, WorldAlignment
from step2_estimate import spp_trajectory
from tests.fixtures import long_canyon_scenario, long_scenario, short_scenario


def _state_with_yaw(yaw_deg, speed=0.0):
    return NavState(np.zeros(3), np.array([speed, 0.0, 0.0]),
                    rot_to_quat(yaw_matrix(math.radians(yaw_deg))))


class EstimatorConfigTests(unittest.TestCase):

    def test_defaults(self):
        config = EstimatorConfig.from_dict({})
        self.assertEqual(config.window_size, 10)
        self.assertEqual(config.gate_thresholds.fallback_window, 5.0)
        np.testing.assert_allclose(config.alignment_prior_weight[1:], [0.04, 0.04, 0.04])

    def test_nested_solver_options(self):
        config = EstimatorConfig.from_dict({'mode': 'loose', 'solver': {'max_iterations': 4}})
        self.assertEqual(config.mode, 'loose')
        self.assertEqual(config.solver.max_iterations, 4)

    def test_invalid_values(self):
        cases = [
            ({'window_size': 3}, 'estimator.window_size'),
            ({'mode': 'batch'}, 'estimator.mode'),
            ({'gating_method': 'chi2'}, 'estimator.gating_method'),
            ({'doppler_weight': 0.0}, 'estimator.doppler_weight'),
            ({'prior_removal_epochs': -1}, 'estimator.prior_removal_epochs'),
        ]
        for data, key in cases:
            with self.subTest(key=key):
                with self.assertRaises(ConfigError) as ctx:
                    EstimatorConfig.from_dict(data)
                self.assertEqual(ctx.exception.key, key)


class StateMachineTests(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.dataset = simulate(short_scenario(noise_free=True)).dataset

    def setUp(self):
        self.estimator = Estimator(EstimatorConfig(), self.dataset.sensors, self.dataset.bootstrap)
        self.window = self.estimator.window

    def _set_frames(self, *states):
        self.window.frames = [WindowFrame(i, float(i), s, {}, True) for i, s in enumerate(states)]

    def test_prior_removed_after_threshold(self):
        window = self.window
        window.alignment_prior = WorldAlignment.identity()
        window.marginalized_epochs = 30
        self.estimator.update_prior_lifecycle()
        self.assertIsNotNone(window.alignment_prior)
        window.marginalized_epochs = 31
        self.estimator.update_prior_lifecycle()
        self.assertIsNone(window.alignment_prior)
        self.assertTrue(window.alignment_prior_removed)

    def test_prior_removal_is_permanent(self):
        window = self.window
        window.alignment_prior_removed = True
        window.alignment_prior = WorldAlignment.identity()
        window.marginalized_epochs = 100
        self.estimator.update_prior_lifecycle()
        self.assertIsNotNone(window.alignment_prior)

    def test_turn_flag_is_monotone(self):
        window = self.window
        window.start_yaw = 0.0
        self._set_frames(_state_with_yaw(0.0), _state_with_yaw(10.0))
        self.estimator.update_turn_state()
        self.assertFalse(window.turned)
        self.assertIn(EXTRINSICS_KEY, window.constant_keys())

        self._set_frames(_state_with_yaw(0.0), _state_with_yaw(-20.0))
        self.estimator.update_turn_state()
        self.assertTrue(window.turned)
        self.assertNotIn(EXTRINSICS_KEY, window.constant_keys())

        self._set_frames(_state_with_yaw(0.0), _state_with_yaw(0.0))
        self.estimator.update_turn_state()
        self.assertTrue(window.turned)

    def test_low_speed_deactivates_gnss(self):
        self._set_frames(_state_with_yaw(0.0, 0.2), _state_with_yaw(0.0, 5.0))
        self.assertFalse(self.estimator._gnss_active())
        self._set_frames(_state_with_yaw(0.0, 1.0), _state_with_yaw(0.0, 0.0))
        self.assertTrue(self.estimator._gnss_active())

    def test_first_frame_is_fixed_until_marginalization(self):
        self._set_frames(_state_with_yaw(0.0), _state_with_yaw(0.0))
        self.assertIn(('x', 0), self.window.constant_keys())

    def test_gating_problem_needs_alignment(self):
        with self.assertRaises(InputError):
            self.estimator.gating_problem(self.dataset.gnss[0])

    def test_alignment_uses_antenna_position(self):
        pose = TimedPose(0.0, np.array([1.0, 2.0, 0.0]), yaw_matrix(math.pi / 2))
        lever = self.dataset.sensors.lever_arm.translation_g_in_b
        np.testing.assert_allclose(self.estimator._alignment_point(pose),
                                   pose.position + yaw_matrix(math.pi / 2) @ lever)
        body_only = Estimator(EstimatorConfig(alignment_lever_arm=False), self.dataset.sensors,
                              self.dataset.bootstrap)
        np.testing.assert_allclose(body_only._alignment_point(pose), pose.position)

    def test_warmup_after_initialization_rejected(self):
        self.window.initialized = True
        with self.assertRaises(InputError):
            self.estimator.run_vio_warmup([])


class GlobalExportTests(unittest.TestCase):

    def setUp(self):
        self.records = [
            HistoryRecord(1.0, NavState(np.array([1.0, 0.0, 0.0]), np.zeros(3), rot_to_quat(np.eye(3)), stamp=1.0)),
            HistoryRecord(0.0, NavState(np.zeros(3), np.zeros(3), rot_to_quat(np.eye(3)))),
        ]

    def test_identity_alignment(self):
        poses = export_global_trajectory(self.records, None)
        self.assertEqual([p.stamp for p in poses], [0.0, 1.0])
        np.testing.assert_allclose(poses[1].enu, [1.0, 0.0, 0.0])
        self.assertIsNone(poses[1].ecef)

    def test_yaw_and_translation(self):
        alignment = WorldAlignment(math.pi / 2, np.array([0.0, 0.0, 2.0]))
        poses = export_global_trajectory(self.records, None, alignment)
        np.testing.assert_allclose(poses[1].enu, [0.0, 1.0, 2.0], atol=1e-12)
        np.testing.assert_allclose(poses[1].rotation_enu, yaw_matrix(math.pi / 2), atol=1e-12)

    def test_record_alignment_wins(self):
        records = [replace(self.records[0], alignment=WorldAlignment(0.0, np.array([5.0, 0.0, 0.0])))]
        poses = export_global_trajectory(records, None, WorldAlignment.identity())
        np.testing.assert_allclose(poses[0].enu, [6.0, 0.0, 0.0])

    def test_ecef_from_anchor(self):
        anchor = make_enu_anchor(np.array([4.0e6, 3.0e6, 3.5e6]))
        poses = export_global_trajectory(self.records, anchor)
        np.testing.assert_allclose(poses[0].ecef, anchor.origin_ecef, atol=1e-6)
        np.testing.assert_allclose(poses[1].ecef, enu_to_ecef(anchor, np.array([1.0, 0.0, 0.0])), atol=1e-6)
        self.assertIsNotNone(poses[1].geodetic)


class FusedRunTests(unittest.TestCase):
    """End-to-end run over a short noise-free drive."""

    @classmethod
    def setUpClass(cls):
        cls.dataset = simulate(short_scenario(noise_free=True)).dataset
        cls.config = EstimatorConfig(min_alignment_pairs=10)
        cls.estimator = Estimator(cls.config, cls.dataset.sensors, cls.dataset.bootstrap)
        window = cls.estimator.window
        cls.steps = []
        for frame in cls.dataset.frame_inputs():
            report = cls.estimator.process_frame(frame)
            cls.steps.append({
                'stamp': frame.stamp,
                'size': len(window.frames),
                'turned': window.turned,
                'extrinsics': window.extrinsics,
                'report': report,
                'entry_stamps': sorted(e.epoch.stamp for e in window.entries.values()),
                'alignment_info': (window.marginal_prior.information_block([ALIGNMENT_KEY])
                                   if window.marginal_prior is not None
                                   and ALIGNMENT_KEY in window.marginal_prior.keys else None),
            })
        cls.result = cls.estimator.finish()

    def test_initializes(self):
        self.assertTrue(self.result.initialized)
        self.assertIsNotNone(self.result.handoff_alignment)
        first = next(s['stamp'] for s in self.steps if s['report'].initialized)
        self.assertLess(first, 16.0)

    def test_anchor_at_third_fix(self):
        np.testing.assert_allclose(self.result.anchor.origin_ecef, self.estimator.spp_fixes[2][1])

    def test_window_never_exceeds_size(self):
        self.assertTrue(all(s['size'] <= self.config.window_size for s in self.steps))
        self.assertEqual(max(s['size'] for s in self.steps), self.config.window_size)

    def test_turn_flag_and_extrinsics(self):
        turned = [s['turned'] for s in self.steps]
        self.assertTrue(turned[-1])
        first = turned.index(True)
        self.assertTrue(all(turned[first:]))
        reference = self.dataset.sensors.extrinsics
        for step in self.steps[:first]:
            np.testing.assert_array_equal(step['extrinsics'].translation_c_in_b, reference.translation_c_in_b)

    def test_gnss_inactive_while_stopped(self):
        stopped = [s['report'] for s in self.steps if 17.5 <= s['stamp'] <= 19.0]
        self.assertTrue(any(not r.gnss_active for r in stopped))
        for report in stopped:
            if not report.gnss_active and report.solve is not None:
                self.assertNotIn('pseudorange', report.solve.factor_counts)
                self.assertNotIn('doppler', report.solve.factor_counts)

    def test_yaw_observable_after_stop(self):
        stopped = {t for s in self.steps if not s['report'].gnss_active
                   for t in s['entry_stamps'] if 15.5 <= t <= 19.5}
        self.assertTrue(stopped)
        after = next(s for s in self.steps if s['stamp'] > 19.5 and not stopped.intersection(s['entry_stamps']))
        info = after['alignment_info']
        self.assertIsNotNone(info)
        self.assertGreater(info[0, 0], 0.0)
        self.assertGreater(np.linalg.eigvalsh(info).min(), 0.0)

    def test_gnss_factors_join_after_initialization(self):
        moving = [s['report'] for s in self.steps if s['stamp'] > 25.0]
        self.assertTrue(any(r.solve.factor_counts.get('pseudorange', 0) > 0 for r in moving))

    def test_diagnostics_per_frame(self):
        self.assertEqual(len(self.result.diagnostics), len(self.dataset.frames))
        phases = {d['phase'] for d in self.result.diagnostics}
        self.assertEqual(phases, {'warmup', 'fused'})

    def test_trajectory_accuracy(self):
        poses = [p.as_timed_pose() for p in self.result.trajectory()]
        self.assertEqual(len(poses), len(self.dataset.frames))
        evaluation = evaluate_trajectory(poses, self.dataset.ground_truth)
        self.assertLessEqual(evaluation.rmse_translation, 1e-2)
        self.assertEqual(evaluation.completeness, 1.0)

    def test_warmup_records_share_the_fused_frame(self):
        poses = [p.as_timed_pose() for p in self.result.trajectory() if p.stamp < 14.0]
        evaluation = evaluate_trajectory(poses, self.dataset.ground_truth)
        self.assertLessEqual(evaluation.rmse_translation, 1e-2)


class WarmupShapeTests(unittest.TestCase):
    """Visual-inertial warm-up alone, compared with truth up to a similarity."""

    @classmethod
    def setUpClass(cls):
        cls.dataset = simulate(short_scenario(noise_free=True)).dataset
        estimator = Estimator(EstimatorConfig(), cls.dataset.sensors, cls.dataset.bootstrap)
        frames = [f for f in cls.dataset.frame_inputs() if f.stamp < 14.0]
        cls.local = estimator.run_vio_warmup(frames)

    def test_shape_matches_truth(self):
        pairs = associate(self.local, self.dataset.ground_truth)
        self.assertEqual(len(pairs), len(self.local))
        local = np.array([self.local[i].position for i, _ in pairs])
        truth = np.array([self.dataset.ground_truth[j].position for _, j in pairs])
        estimate = align_5dof(truth, local)
        self.assertLessEqual(estimate.rms, 1e-2)
        self.assertAlmostEqual(estimate.scale, 1.0, delta=1e-3)


class LongDriveTests(unittest.TestCase):
    """Two-minute noise-free drive through a turn and a stop."""

    @classmethod
    def setUpClass(cls):
        cls.dataset = simulate(long_scenario(noise_free=True)).dataset
        cls.result = run_estimator(cls.dataset, EstimatorConfig(), progress=False)

    def test_initializes_and_turns(self):
        self.assertTrue(self.result.initialized)
        stopped = [d for d in self.result.diagnostics if 42.0 <= d['stamp'] <= 54.0]
        self.assertTrue(any(not d['gnss_active'] for d in stopped))

    def test_trajectory_accuracy(self):
        poses = [p.as_timed_pose() for p in self.result.trajectory()]
        evaluation = evaluate_trajectory(poses, self.dataset.ground_truth)
        self.assertLessEqual(evaluation.rmse_translation, 1e-2)
        self.assertEqual(evaluation.completeness, 1.0)


class VioModeTests(unittest.TestCase):

    def test_vio_never_leaves_warmup(self):
        dataset = simulate(short_scenario(noise_free=True)).dataset
        estimator = Estimator(EstimatorConfig(mode=MODE_VIO), dataset.sensors, dataset.bootstrap)
        for frame in list(dataset.frame_inputs())[:60]:
            report = estimator.process_frame(frame)
            self.assertFalse(report.initialized)
            self.assertEqual(report.gate_reports, [])
        result = estimator.finish()
        self.assertIsNone(result.anchor)
        self.assertEqual({d['phase'] for d in result.diagnostics}, {'warmup'})


class FusionBenefitTests(unittest.TestCase):
    """Noisy two-minute drives with a canyon; fused against SPP-only and VIO-only."""

    SEEDS = range(31, 41)

    @classmethod
    def setUpClass(cls):
        cls.trials = []
        for seed in cls.SEEDS:
            dataset = simulate(long_canyon_scenario(seed=seed)).dataset
            gt = dataset.ground_truth
            ate = {}
            for name, config in (('fused', EstimatorConfig()), ('vio', EstimatorConfig(mode=MODE_VIO))):
                result = run_estimator(dataset, config, progress=False)
                poses = [p.as_timed_pose() for p in result.trajectory()]
                ate[name] = compute_ate(align_rigid(poses, gt), gt)
            spp_poses, _ = spp_trajectory(dataset.gnss)
            ate['spp'] = compute_ate(align_rigid(spp_poses, gt), gt)
            cls.trials.append(ate)

    def test_fused_beats_single_sensor_runs(self):
        wins = sum(t['fused'] <= 0.7 * t['spp'] and t['fused'] <= 0.7 * t['vio'] for t in self.trials)
        self.assertGreaterEqual(wins, 9, self.trials)


if __name__ == '__main__':
    unittest.main()
