"""Step 1: Simulate a scenario into a dataset directory."""
import os
import logging

from fusion.metrics import trajectory_length
from fusion.simulator import simulate
from utils.data_io import GT_FILE, read_manifest, write_dataset, write_manifest
from utils.validation import scenario_from_config


logger = logging.getLogger(__name__)


def run_step1(config, output_dir=None, force=False, seed=None, config_path=None):
    """Run step 1: write imu.csv, features.csv, gnss.txt, gt.tum and friends.

    Returns:
        Path to the dataset directory
    """
    scenario = scenario_from_config(config)
    if seed is not None:
        scenario.seed = int(seed)
    if output_dir is None:
        output_dir = os.path.join(config['paths']['output_dir'], f'{scenario.name}_seed{scenario.seed}')

    if os.path.exists(os.path.join(output_dir, GT_FILE)) and not force:
        if read_manifest(output_dir).get('seed') == scenario.seed:
            logger.info(f"Dataset already exists at {output_dir}, skipping step 1")
            return output_dir

    result = simulate(scenario)
    write_dataset(output_dir, result.dataset, result.gnss_truth)
    write_manifest(output_dir, {
        'command': 'simulate',
        'scenario': scenario.name,
        'config_path': config_path,
        'seed': scenario.seed,
        'gating_method': None,
        'mode': None,
        'output_dir': output_dir,
        'path_length_m': round(trajectory_length(result.dataset.ground_truth), 3),
        'duration_s': result.truth.duration,
        'noise_free': scenario.noise_free,
    })
    return output_dir


if __name__ == '__main__':
    import sys
    import yaml

    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    with open('config.yaml', 'r', encoding='utf-8') as f:
        config = yaml.safe_load(f)

    run_step1(config, sys.argv[1] if len(sys.argv) > 1 else None, force=True)
