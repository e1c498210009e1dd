"""Tests for the synthetic scenario generator."""
import math
import unittest

import numpy as np

from fusion.errors import ConfigError
from fusion.frames import enu_to_ecef
from fusion.gnss_model import spp_solve
from fusion.imu_preintegration import GravityVec, integrate, propagate
from fusion.lie import quat_conj, quat_log, quat_mul
from fusion.simulator import R_BODY_FROM_CAMERA, ScenarioConfig, gnss_stamps, simulate
from tests.fixtures import canyon_scenario, short_scenario


class NoiseFreeSimulationTests(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.result = simulate(short_scenario(noise_free=True))
        cls.dataset = cls.result.dataset
        cls.truth = cls.result.truth

    def test_stream_sizes(self):
        self.assertEqual(len(self.dataset.imu), 40 * 200 + 1)
        self.assertEqual(len(self.dataset.frames), 40 * 5 + 1)
        self.assertEqual(len(self.dataset.gnss), 40)
        self.assertAlmostEqual(self.dataset.gnss[0].stamp, 0.37)
        self.assertEqual(len(self.dataset.ground_truth), len(self.dataset.frames))

    def test_stationary_imu_reads_gravity(self):
        sample = min(self.dataset.imu, key=lambda s: abs(s.stamp - 17.5))
        np.testing.assert_allclose(sample.accel, [0.0, 0.0, 9.81], atol=1e-9)
        np.testing.assert_allclose(sample.gyro, np.zeros(3), atol=1e-9)

    def test_imu_integrates_to_truth(self):
        imu = [s for s in self.dataset.imu if 5.0 - 1e-9 <= s.stamp <= 6.0 + 1e-9]
        start = self.truth.local_state(5.0)
        pi = integrate(imu, start.bias_accel, start.bias_gyro)
        predicted = propagate(start, pi, GravityVec())
        end = self.truth.local_state(6.0)
        np.testing.assert_allclose(predicted.p_wl_b, end.p_wl_b, atol=0.01)
        np.testing.assert_allclose(predicted.v_wl_b, end.v_wl_b, atol=0.01)
        self.assertLess(np.linalg.norm(quat_log(quat_mul(quat_conj(end.q_wl_b), predicted.q_wl_b))), 1e-3)

    def test_bootstrap_matches_first_truth_state(self):
        boot = self.dataset.bootstrap
        np.testing.assert_allclose(boot.p_wl_b, np.zeros(3), atol=1e-9)
        np.testing.assert_allclose(boot.v_wl_b, [4.0, 0.0, 0.0], atol=1e-6)

    def test_pseudoranges_locate_antenna(self):
        epoch = self.dataset.gnss[10]
        solution = spp_solve(epoch)
        p_enu, _ = self.truth.antenna(epoch.stamp)
        np.testing.assert_allclose(solution.position_ecef, enu_to_ecef(self.truth.anchor, p_enu), atol=1e-3)
        self.assertEqual(sorted(solution.clock_bias), ['GLONASS', 'GPS'])

    def test_tracks_have_two_observations(self):
        counts = {}
        for frame in self.dataset.frames:
            for track in frame.features:
                counts[track] = counts.get(track, 0) + 1
        self.assertTrue(counts)
        self.assertGreaterEqual(min(counts.values()), 2)
        self.assertGreater(np.median([len(f.features) for f in self.dataset.frames]), 20)

    def test_features_are_exact_projections(self):
        frame = self.dataset.frames[50]
        kin = self.truth.kinematics(frame.stamp)
        R_wc = kin.rotation @ R_BODY_FROM_CAMERA
        t_wc = kin.position + kin.rotation @ np.array([0.1, 0.0, 0.05])
        uv = next(iter(frame.features.values()))
        points = (self.truth.landmarks - t_wc) @ R_wc
        with np.errstate(divide='ignore', invalid='ignore'):
            projected = points[:, :2] / points[:, 2:3]
        self.assertLess(np.nanmin(np.linalg.norm(projected - uv, axis=1)), 1e-12)

    def test_noise_free_sensor_setup_keeps_default_weights(self):
        self.assertGreater(self.dataset.sensors.imu_noise.accel_noise, 0.0)
        self.assertAlmostEqual(self.dataset.sensors.unit_plane_sigma, 0.1 / 460.0)


class SeededSimulationTests(unittest.TestCase):

    def test_same_seed_same_output(self):
        a = simulate(short_scenario(speed_profile=[[0.0, 4.0], [8.0, 4.0]]))
        b = simulate(short_scenario(speed_profile=[[0.0, 4.0], [8.0, 4.0]]))
        np.testing.assert_array_equal([s.accel for s in a.dataset.imu], [s.accel for s in b.dataset.imu])
        self.assertEqual([o.obs.pseudorange for e in a.dataset.gnss for o in e.observations],
                         [o.obs.pseudorange for e in b.dataset.gnss for o in e.observations])

    def test_different_seed_differs(self):
        a = simulate(short_scenario(speed_profile=[[0.0, 4.0], [8.0, 4.0]]))
        b = simulate(short_scenario(speed_profile=[[0.0, 4.0], [8.0, 4.0]], seed=12))
        self.assertNotEqual(a.dataset.gnss[0].observations[0].obs.pseudorange,
                            b.dataset.gnss[0].observations[0].obs.pseudorange)

    def test_reported_clock_drift_is_bias_rate(self):
        result = simulate(short_scenario(speed_profile=[[0.0, 4.0], [8.0, 4.0]], clock_random_walk=1e-6))
        truth = result.truth
        stamps = truth.epoch_stamps
        h = 1e-3
        for k in (1, 3, 5):
            t = 0.5 * (stamps[k] + stamps[k + 1])
            bias_plus, _ = truth.receiver_clock('GPS', t + h)
            bias_minus, _ = truth.receiver_clock('GPS', t - h)
            _, drift = truth.receiver_clock('GPS', t)
            np.testing.assert_allclose(drift, (bias_plus - bias_minus) / (2.0 * h), rtol=1e-6, atol=1e-14)
            self.assertGreater(abs(drift - 2.0e-8), 1e-12)

    def test_injected_outliers_are_recorded(self):
        result = simulate(short_scenario(speed_profile=[[0.0, 4.0], [10.0, 4.0]], outlier_rate=0.3))
        outliers = [r for r in result.gnss_truth if r.outlier_bias]
        self.assertTrue(outliers)
        self.assertTrue(all(20.0 <= r.outlier_bias <= 200.0 for r in outliers))


class CanyonTests(unittest.TestCase):

    def test_mask_removes_low_satellites(self):
        result = simulate(canyon_scenario(noise_free=True))
        inside = [e for e in result.dataset.gnss if 30.0 <= e.stamp <= 34.0]
        outside = [e for e in result.dataset.gnss if e.stamp < 29.0]
        self.assertTrue(inside)
        self.assertLess(max(len(e.observations) for e in inside), min(len(e.observations) for e in outside))
        for record in result.gnss_truth:
            if 30.0 <= record.stamp <= 34.0:
                self.assertGreaterEqual(record.elevation_deg, 70.0)


class ScenarioConfigTests(unittest.TestCase):

    def test_from_dict_converts_nested_values(self):
        config = ScenarioConfig.from_dict({
            'imu_noise': {'accel_noise': 0.01},
            'canyon_segments': [{'start': 1, 'end': 2, 'elevation_mask_deg': 40}],
            'lever_arm': [0, 0, 1],
        })
        self.assertEqual(config.imu_noise.accel_noise, 0.01)
        self.assertEqual(config.canyon_segments[0].elevation_mask_deg, 40.0)
        self.assertEqual(config.lever_arm, (0.0, 0.0, 1.0))

    def test_invalid_profiles(self):
        cases = [
            ({'speed_profile': [[1.0, 2.0], [5.0, 2.0]]}, 'scenario.speed_profile'),
            ({'speed_profile': [[0.0, 2.0], [0.0, 2.0]]}, 'scenario.speed_profile'),
            ({'waypoints': [[0.0, 0.0]]}, 'scenario.waypoints'),
            ({'camera_rate': 0}, 'scenario.camera_rate'),
            ({'canyon_segments': [{'start': 1}]}, 'scenario.canyon_segments[0]'),
        ]
        for data, key in cases:
            with self.subTest(key=key):
                with self.assertRaises(ConfigError) as ctx:
                    ScenarioConfig.from_dict(data)
                self.assertEqual(ctx.exception.key, key)

    def test_speed_profile_longer_than_path(self):
        with self.assertRaises(ConfigError):
            simulate(short_scenario(speed_profile=[[0.0, 20.0], [60.0, 20.0]]))

    def test_effective_disables_noise(self):
        config = short_scenario(noise_free=True, outlier_rate=0.5).effective()
        self.assertEqual(config.pseudorange_sigma, 0.0)
        self.assertEqual(config.outlier_rate, 0.0)
        self.assertEqual(config.accel_bias, (0.0, 0.0, 0.0))

    def test_gnss_stamps_offset(self):
        config = ScenarioConfig()
        np.testing.assert_allclose(gnss_stamps(config, 3.0), [0.37, 1.37, 2.37])
        self.assertEqual(len(gnss_stamps(config, 0.2)), 0)
        self.assertTrue(math.isclose(config.duration, 120.0))


if __name__ == '__main__':
    unittest.main()
