"""Tests for dataset and trajectory file handling."""
import os
import tempfile
import unittest

import numpy as np

from fusion.errors import InputError
from fusion.imu_preintegration import ImuSample
from fusion.lie import yaw_matrix
from fusion.models import TimedPose
from fusion.simulator import simulate
from utils.data_io import (
    IMU_FILE,
    SENSORS_FILE,
    load_dataset,
    read_gnss_outliers,
    read_imu_csv,
    read_results_csv,
    read_tum,
    write_dataset,
    write_imu_csv,
    write_results_csv,
    write_tum,
)
from tests.fixtures import short_scenario


class FileFormatTests(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def _path(self, name):
        return os.path.join(self.dir, name)

    def test_imu_roundtrip(self):
        samples = [ImuSample(np.array([0.1, 0.2, 0.3]), np.array([0.0, 0.0, 9.81]), 0.005 * i) for i in range(5)]
        write_imu_csv(self._path('imu.csv'), samples)
        loaded = read_imu_csv(self._path('imu.csv'))
        self.assertEqual(len(loaded), 5)
        np.testing.assert_allclose(loaded[3].accel, [0.0, 0.0, 9.81])
        self.assertAlmostEqual(loaded[4].stamp, 0.02)

    def test_malformed_line_reports_location(self):
        path = self._path('imu.csv')
        with open(path, 'w', encoding='utf-8') as f:
            f.write('stamp,wx,wy,wz,ax,ay,az\n0,0,0,0,0,0,9.8\n0.005,0,0,0,0,9.8\n')
        with self.assertRaises(InputError) as ctx:
            read_imu_csv(path)
        self.assertIn(':3:', str(ctx.exception))

    def test_non_numeric_field(self):
        path = self._path('imu.csv')
        with open(path, 'w', encoding='utf-8') as f:
            f.write('0,0,0,0,0,0,abc\n')
        with self.assertRaises(InputError) as ctx:
            read_imu_csv(path)
        self.assertIn(':1:', str(ctx.exception))

    def test_tum_with_rotation(self):
        poses = [TimedPose(1.0, np.array([1.0, 2.0, 3.0]), yaw_matrix(0.3)),
                 TimedPose(0.5, np.zeros(3), np.eye(3))]
        write_tum(self._path('a.tum'), poses)
        loaded = read_tum(self._path('a.tum'))
        self.assertEqual([p.stamp for p in loaded], [0.5, 1.0])
        np.testing.assert_allclose(loaded[1].rotation, yaw_matrix(0.3), atol=1e-12)

    def test_tum_without_rotation(self):
        write_tum(self._path('b.tum'), [TimedPose(0.0, np.ones(3)), TimedPose(0.1, np.zeros(3))])
        loaded = read_tum(self._path('b.tum'))
        self.assertTrue(all(p.rotation is None for p in loaded))
        np.testing.assert_allclose(loaded[0].position, np.ones(3))

    def test_results_csv(self):
        rows = [{'sequence': 's', 'approach': 'fused', 'length_m': 12.5, 'rmse_trans': 0.4,
                 'mae_rot_z': None, 'extra': 'ignored'}]
        write_results_csv(self._path('results.csv'), rows)
        loaded = read_results_csv(self._path('results.csv'))
        self.assertEqual(loaded[0]['approach'], 'fused')
        self.assertEqual(loaded[0]['mae_rot_z'], '')
        self.assertNotIn('extra', loaded[0])


class DatasetDirectoryTests(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.result = simulate(short_scenario(outlier_rate=0.2))
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = os.path.join(cls.tmp.name, 'short')
        write_dataset(cls.dir, cls.result.dataset, cls.result.gnss_truth)
        cls.loaded = load_dataset(cls.dir)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_streams_survive(self):
        original, loaded = self.result.dataset, self.loaded
        self.assertEqual(loaded.name, 'short')
        self.assertEqual(len(loaded.imu), len(original.imu))
        self.assertEqual(len(loaded.frames), len(original.frames))
        self.assertEqual(len(loaded.gnss), len(original.gnss))
        self.assertEqual(len(loaded.ground_truth), len(original.ground_truth))
        np.testing.assert_allclose(loaded.imu[100].gyro, original.imu[100].gyro, rtol=1e-12)

    def test_gnss_epochs(self):
        for original, loaded in zip(self.result.dataset.gnss, self.loaded.gnss):
            self.assertEqual(loaded.epoch_index, original.epoch_index)
            self.assertEqual(loaded.sat_ids, original.sat_ids)
            a = [o.obs.pseudorange for o in original.observations]
            b = [o.obs.pseudorange for o in loaded.observations]
            np.testing.assert_allclose(b, a, rtol=1e-13)

    def test_features_and_bootstrap(self):
        frame = self.result.dataset.frames[10]
        loaded = self.loaded.frames[10]
        self.assertEqual(set(loaded.features), set(frame.features))
        np.testing.assert_allclose(self.loaded.bootstrap.p_wl_b, self.result.dataset.bootstrap.p_wl_b)
        sensors, original = self.loaded.sensors, self.result.dataset.sensors
        np.testing.assert_allclose(sensors.extrinsics.rotation_b_from_c, original.extrinsics.rotation_b_from_c, atol=1e-12)
        self.assertEqual(sensors.imu_noise, original.imu_noise)
        self.assertEqual(sensors.pixel_sigma, original.pixel_sigma)

    def test_outlier_log(self):
        outliers = read_gnss_outliers(os.path.join(self.dir, 'gnss_truth.txt'))
        expected = sum(1 for r in self.result.gnss_truth if r.outlier_bias)
        self.assertEqual(sum(len(v) for v in outliers.values()), expected)
        self.assertGreater(expected, 0)

    def test_missing_files_listed(self):
        with tempfile.TemporaryDirectory() as empty:
            with self.assertRaises(InputError) as ctx:
                load_dataset(empty)
        message = str(ctx.exception)
        self.assertIn(IMU_FILE, message)
        self.assertIn(SENSORS_FILE, message)


if __name__ == '__main__':
    unittest.main()
