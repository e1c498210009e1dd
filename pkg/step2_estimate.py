"""Step 2: Run the estimator (or a baseline) over a dataset directory."""
import os
import logging
from dataclasses import replace

from fusion.errors import FusionError, InputError
from fusion.estimator import EstimatorConfig, run_estimator
from fusion.frames import ecef_to_enu, make_enu_anchor
from fusion.gnss_model import spp_solve
from fusion.initialization import select_reference
from fusion.models import TimedPose
from utils.data_io import (
    DIAGNOSTICS_FILE,
    ESTIMATE_FILE,
    GATE_LOG_FILE,
    load_dataset,
    read_manifest,
    write_gate_log,
    write_json_lines,
    write_manifest,
    write_tum,
)
from utils.validation import validate_dataset


logger = logging.getLogger(__name__)

RUN_MODES = ('fused', 'vio', 'spp', 'loose')


def spp_trajectory(epochs):
    """Standalone SPP positions in the ENU frame anchored at the third fix."""
    fixes = []
    guess = None
    for epoch in epochs:
        try:
            solution = spp_solve(epoch, guess)
        except FusionError as exc:
            logger.debug(f"Epoch {epoch.epoch_index}: no SPP fix ({exc})")
            continue
        guess = solution.position_ecef
        fixes.append((epoch.stamp, solution.position_ecef))
    reference = select_reference([f for _, f in fixes])
    if reference is None:
        raise InputError(f"only {len(fixes)} SPP fixes, cannot anchor an ENU frame")
    anchor = make_enu_anchor(reference)
    return [TimedPose(stamp, ecef_to_enu(anchor, fix)) for stamp, fix in fixes], anchor


def run_step2(config, dataset_dir, output_dir=None, mode='fused', gating=None, force=False,
              progress=True, config_path=None):
    """Run step 2: estimate.tum, diagnostics.jsonl and gate_log.jsonl.

    Returns:
        Path to the run output directory
    """
    if mode not in RUN_MODES:
        raise InputError(f"unknown mode '{mode}', expected one of {', '.join(RUN_MODES)}")
    estimator_config = EstimatorConfig.from_dict(config.get('estimator'))
    if gating is not None:
        estimator_config = replace(estimator_config, gating_method=gating)
    if mode != 'spp':
        estimator_config = replace(estimator_config, mode=mode)
    estimator_config.validate()

    if output_dir is None:
        label = mode if mode in ('vio', 'spp') else f'{mode}_{estimator_config.gating_method}'
        output_dir = os.path.join(dataset_dir, 'runs', label)
    estimate_file = os.path.join(output_dir, ESTIMATE_FILE)
    if os.path.exists(estimate_file) and not force:
        logger.info(f"Estimate already exists at {estimate_file}, skipping step 2")
        return output_dir

    dataset = load_dataset(dataset_dir, require_gnss=mode != 'vio')
    for issue in validate_dataset(dataset):
        logger.warning(f"Dataset check: {issue}")
    os.makedirs(output_dir, exist_ok=True)

    manifest = {
        'command': 'run',
        'dataset': dataset_dir,
        'config_path': config_path,
        'seed': read_manifest(dataset_dir).get('seed'),
        'mode': mode,
        'gating_method': estimator_config.gating_method if mode in ('fused', 'loose') else None,
        'output_dir': output_dir,
    }

    if mode == 'spp':
        poses, _ = spp_trajectory(dataset.gnss)
        write_tum(estimate_file, poses)
        write_json_lines(os.path.join(output_dir, DIAGNOSTICS_FILE), [])
        write_gate_log(os.path.join(output_dir, GATE_LOG_FILE), [])
        manifest['poses'] = len(poses)
    else:
        if mode == 'vio':
            dataset = replace(dataset, gnss=[])
        result = run_estimator(dataset, estimator_config, progress=progress)
        trajectory = result.trajectory()
        write_tum(estimate_file, [pose.as_timed_pose() for pose in trajectory])
        write_json_lines(os.path.join(output_dir, DIAGNOSTICS_FILE), result.diagnostics)
        write_gate_log(os.path.join(output_dir, GATE_LOG_FILE), result.gate_reports)
        failures = sum(1 for d in result.diagnostics if d['solver_failed'])
        manifest.update({
            'poses': len(trajectory),
            'initialized': result.initialized,
            'solver_failures': failures,
            'anchor_ecef': None if result.anchor is None else result.anchor.origin_ecef.tolist(),
            'alignment': None if result.handoff_alignment is None else result.handoff_alignment.to_dict(),
        })
        if failures:
            logger.warning(f"{failures} frames kept their predicted state after a failed solve")

    write_manifest(output_dir, manifest)
    logger.info(f"Step 2 ({mode}) complete: {estimate_file}")
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

    run_step2(config, sys.argv[1], mode=sys.argv[2] if len(sys.argv) > 2 else 'fused', force=True)
