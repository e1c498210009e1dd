"""Tests for the simulate / run / evaluate steps on a small dataset."""
import os
import tempfile
import unittest

import numpy as np

from fusion.errors import InputError
from fusion.estimator import EstimatorConfig
from fusion.gating import METHOD_GNSS, METHOD_MIXED
from step1_simulate import run_step1
from step2_estimate import run_step2
from step3_evaluate import evaluate_files, run_step3
from step4_gating_report import DEFAULT_OUTLIER_RATE, compare_scenario, gating_scenarios
from tests.fixtures import short_scenario
from utils.data_io import ESTIMATE_FILE, GT_FILE, read_manifest, read_results_csv, read_tum


def _config(root):
    return {
        'paths': {'output_dir': root, 'log_dir': os.path.join(root, 'logs')},
        'scenario': {
            'name': 'pipeline',
            'seed': 5,
            'waypoints': [[0, 0], [80, 0], [110, 15], [125, 60]],
            'speed_profile': [[0, 4], [30, 4]],
            'camera_rate': 5.0,
            'landmark_count': 200,
            'noise_free': True,
        },
        'evaluation': {'align': True, 'results_file': 'results.csv'},
    }


class PipelineStepTests(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.config = _config(cls.tmp.name)
        cls.dataset_dir = run_step1(cls.config, config_path='test.yaml')
        cls.spp_dir = run_step2(cls.config, cls.dataset_dir, mode='spp', progress=False)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_dataset_location_and_manifest(self):
        self.assertEqual(os.path.basename(self.dataset_dir), 'pipeline_seed5')
        manifest = read_manifest(self.dataset_dir)
        self.assertEqual(manifest['seed'], 5)
        self.assertEqual(manifest['command'], 'simulate')
        self.assertGreater(manifest['path_length_m'], 100.0)

    def test_existing_dataset_is_reused(self):
        gt_file = os.path.join(self.dataset_dir, GT_FILE)
        before = os.path.getmtime(gt_file)
        self.assertEqual(run_step1(self.config), self.dataset_dir)
        self.assertEqual(os.path.getmtime(gt_file), before)

    def test_spp_run_outputs(self):
        self.assertEqual(os.path.basename(self.spp_dir), 'spp')
        poses = read_tum(os.path.join(self.spp_dir, ESTIMATE_FILE))
        self.assertEqual(len(poses), 30)
        self.assertTrue(all(p.rotation is None for p in poses))
        manifest = read_manifest(self.spp_dir)
        self.assertEqual(manifest['mode'], 'spp')
        self.assertIsNone(manifest['gating_method'])

    def test_evaluate_spp(self):
        gt_file = os.path.join(self.dataset_dir, GT_FILE)
        rows = evaluate_files([self.spp_dir], gt_file, sequence='pipeline')
        self.assertEqual(rows[0]['approach'], 'spp')
        self.assertLess(rows[0]['rmse_trans'], 2.0)
        self.assertEqual(rows[0]['completeness'], 1.0)
        self.assertEqual(rows[0]['mae_rot_z'], '')

    def test_results_file(self):
        gt_file = os.path.join(self.dataset_dir, GT_FILE)
        output, rows = run_step3(self.config, [self.spp_dir], gt_file)
        self.assertEqual(output, os.path.join(self.tmp.name, 'results.csv'))
        self.assertEqual(len(read_results_csv(output)), 1)

    def test_missing_ground_truth(self):
        with self.assertRaises(InputError):
            evaluate_files([self.spp_dir], os.path.join(self.tmp.name, 'none.tum'))

    def test_unknown_mode(self):
        with self.assertRaises(InputError):
            run_step2(self.config, self.dataset_dir, mode='batch')


class GatingScenarioTests(unittest.TestCase):

    def test_variants_differ_in_seed_and_inject_outliers(self):
        scenarios = gating_scenarios(_config('/tmp'), 3)
        self.assertEqual([s.seed for s in scenarios], [5, 6, 7])
        self.assertEqual([s.name for s in scenarios], ['pipeline_1', 'pipeline_2', 'pipeline_3'])
        self.assertTrue(all(s.outlier_rate == DEFAULT_OUTLIER_RATE for s in scenarios))

    def test_configured_outlier_rate_kept(self):
        config = _config('/tmp')
        config['scenario']['outlier_rate'] = 0.05
        self.assertEqual(gating_scenarios(config, 1)[0].outlier_rate, 0.05)


class GatingOrderingTests(unittest.TestCase):
    """Both gating methods on four seeded drives with injected outliers."""

    @classmethod
    def setUpClass(cls):
        config = EstimatorConfig(min_alignment_pairs=10)
        cls.runs = []
        for seed in (21, 22, 23, 24):
            runs, _ = compare_scenario(short_scenario(seed=seed, outlier_rate=0.2, name=f'gating_{seed}'), config)
            cls.runs.append({run.method: run for run in runs})

    def test_mixed_gating_is_at_least_as_accurate(self):
        better = sum(r[METHOD_MIXED].ate <= r[METHOD_GNSS].ate for r in self.runs)
        self.assertGreaterEqual(better, 3, [(r[METHOD_GNSS].ate, r[METHOD_MIXED].ate) for r in self.runs])

    def test_standalone_gating_is_cheaper_per_call(self):
        for r in self.runs:
            standalone = [rep.elapsed_ms for rep in r[METHOD_GNSS].reports]
            joint = [rep.elapsed_ms for rep in r[METHOD_MIXED].reports if rep.method == METHOD_MIXED]
            self.assertTrue(joint)
            self.assertLess(np.mean(standalone), np.mean(joint))


if __name__ == '__main__':
    unittest.main()
