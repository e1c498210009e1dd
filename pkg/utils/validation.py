"""Config and dataset validation utilities.

Validators return lists of messages instead of raising so that the CLI can
report every problem at once.
"""
from typing import Any, Dict, List

import numpy as np

from fusion.errors import ConfigError
from fusion.estimator import EstimatorConfig
from fusion.imu_preintegration import ImuNoise
from fusion.simulator import ScenarioConfig


SECTIONS = ('paths', 'scenario', 'imu', 'estimator', 'evaluation')
PATH_KEYS = ('output_dir', 'log_dir')
IMU_KEYS = ('gyro_noise', 'accel_noise', 'gyro_walk', 'accel_walk')
EVALUATION_KEYS = {
    'align': bool,
    'association_window': (int, float),
    'results_file': str,
    'gating_scenarios': int,
    'workers': int,
}


def _unknown_keys(section, data, known) -> List[str]:
    return [f'{section}.{key}: unknown key' for key in data if key not in known]


def _section(config, name, errors) -> Dict[str, Any]:
    data = config.get(name)
    if data is None:
        return {}
    if not isinstance(data, dict):
        errors.append(f'{name}: must be a mapping')
        return {}
    return data


def validate_config(config) -> List[str]:
    """Return one message per problem, each starting with the offending key."""
    if not isinstance(config, dict):
        return ['config: top level must be a mapping']
    errors = [f'{key}: unknown section' for key in config if key not in SECTIONS]

    paths = _section(config, 'paths', errors)
    for key in PATH_KEYS:
        if not paths.get(key):
            errors.append(f'paths.{key}: required')
    errors += _unknown_keys('paths', paths, PATH_KEYS)

    imu = _section(config, 'imu', errors)
    errors += _unknown_keys('imu', imu, IMU_KEYS)
    for key in IMU_KEYS:
        if key in imu and not (isinstance(imu[key], (int, float)) and imu[key] >= 0):
            errors.append(f'imu.{key}: must be a non-negative number')

    scenario = _section(config, 'scenario', errors)
    errors += _unknown_keys('scenario', scenario, ScenarioConfig.__dataclass_fields__)
    try:
        ScenarioConfig.from_dict(scenario)
    except ConfigError as exc:
        errors.append(str(exc))
    except (TypeError, ValueError) as exc:
        errors.append(f'scenario: {exc}')

    estimator = _section(config, 'estimator', errors)
    errors += _unknown_keys('estimator', estimator, EstimatorConfig.__dataclass_fields__)
    try:
        EstimatorConfig.from_dict(estimator)
    except ConfigError as exc:
        errors.append(str(exc))
    except (TypeError, ValueError) as exc:
        errors.append(f'estimator: {exc}')

    evaluation = _section(config, 'evaluation', errors)
    errors += _unknown_keys('evaluation', evaluation, EVALUATION_KEYS)
    for key, kind in EVALUATION_KEYS.items():
        if key in evaluation and not isinstance(evaluation[key], kind):
            errors.append(f'evaluation.{key}: wrong type')
    for key in ('association_window', 'gating_scenarios', 'workers'):
        value = evaluation.get(key)
        if isinstance(value, (int, float)) and value <= 0:
            errors.append(f'evaluation.{key}: must be positive')
    return errors


def scenario_from_config(config) -> ScenarioConfig:
    """ScenarioConfig with the `imu` section as its noise model unless overridden."""
    scenario = dict(config.get('scenario') or {})
    if config.get('imu') and 'imu_noise' not in scenario:
        scenario['imu_noise'] = dict(config['imu'])
    return ScenarioConfig.from_dict(scenario)


def validate_dataset(dataset, camera_gnss_gap=0.01) -> List[str]:
    """Consistency problems that would make an estimation run meaningless."""
    issues = []
    imu_stamps = np.array([s.stamp for s in dataset.imu])
    if len(imu_stamps) < 2:
        issues.append('imu: fewer than two samples')
    elif np.any(np.diff(imu_stamps) <= 0):
        issues.append('imu: stamps are not strictly increasing')
    frame_stamps = np.array([f.stamp for f in dataset.frames])
    if len(frame_stamps) and len(imu_stamps) and (
            frame_stamps[0] < imu_stamps[0] or frame_stamps[-1] > imu_stamps[-1]):
        issues.append('frames: camera stamps fall outside the IMU time range')
    gnss_stamps = np.array([e.stamp for e in dataset.gnss])
    if np.any(np.diff(gnss_stamps) <= 0):
        issues.append('gnss: epoch stamps are not strictly increasing')
    if len(gnss_stamps) and len(frame_stamps):
        gap = np.min(np.abs(gnss_stamps[:, None] - frame_stamps[None, :]))
        if gap < camera_gnss_gap:
            issues.append(f'gnss: epoch within {gap:.4f} s of a camera frame')
    return issues
