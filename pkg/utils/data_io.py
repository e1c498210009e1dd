"""Readers and writers for dataset, trajectory and result files.

Dataset directory layout:
    imu.csv          stamp,wx,wy,wz,ax,ay,az
    features.csv     stamp,track_id,u,v  (unit-plane coordinates)
    gnss.txt         epoch_stamp sat_id constellation px py pz vx vy vz clk_bias clk_drift pseudorange doppler wavelength
    gt.tum           stamp px py pz qx qy qz qw
    sensors.yaml     extrinsics, lever arm, IMU noise, gravity, pixel sigma
    bootstrap.yaml   initial NavState in the local frame
    gnss_truth.txt   per-satellite truth log (elevation, injected outlier bias, receiver clock)

In gnss.txt a missing measurement is written as `nan`.
"""
import csv
import json
import logging
import math
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import yaml

from fusion.errors import InputError
from fusion.gnss_model import Constellation, GnssObservation, RawGnssEpoch, SatelliteState, SatObs
from fusion.imu_preintegration import ImuSample
from fusion.lie import quat_to_rot, rot_to_quat
from fusion.metrics import RESULT_COLUMNS
from fusion.models import Dataset, ImageFrame, SensorSetup, TimedPose
from fusion.state import NavState


logger = logging.getLogger(__name__)

IMU_FILE = 'imu.csv'
FEATURES_FILE = 'features.csv'
GNSS_FILE = 'gnss.txt'
GT_FILE = 'gt.tum'
SENSORS_FILE = 'sensors.yaml'
BOOTSTRAP_FILE = 'bootstrap.yaml'
GNSS_TRUTH_FILE = 'gnss_truth.txt'
MANIFEST_FILE = 'manifest.json'
ESTIMATE_FILE = 'estimate.tum'
DIAGNOSTICS_FILE = 'diagnostics.jsonl'
GATE_LOG_FILE = 'gate_log.jsonl'

NO_ROTATION_MARK = '# rotation: unavailable'


def _fmt(value):
    if value is None:
        return 'nan'
    return f'{float(value):.15g}'


def _data_lines(path):
    """Yield (line_number, fields) for non-empty, non-comment lines."""
    with open(path, 'r', encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            yield number, line.replace(',', ' ').split()


def _floats(path, number, fields, count):
    if len(fields) != count:
        raise InputError(f"{path}:{number}: expected {count} fields, found {len(fields)}")
    try:
        return [float(v) for v in fields]
    except ValueError as exc:
        raise InputError(f"{path}:{number}: {exc}") from exc


def _optional(value):
    return None if math.isnan(value) else value


# IMU ------------------------------------------------------------------------

def write_imu_csv(path, samples: Iterable[ImuSample]):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['stamp', 'wx', 'wy', 'wz', 'ax', 'ay', 'az'])
        for s in samples:
            writer.writerow([_fmt(s.stamp)] + [_fmt(v) for v in s.gyro] + [_fmt(v) for v in s.accel])


def read_imu_csv(path) -> List[ImuSample]:
    samples = []
    for number, fields in _data_lines(path):
        if fields[0] == 'stamp':
            continue
        values = _floats(path, number, fields, 7)
        samples.append(ImuSample(np.array(values[1:4]), np.array(values[4:7]), values[0]))
    return samples


# Features -------------------------------------------------------------------

def write_features_csv(path, frames: Iterable[ImageFrame]):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['stamp', 'track_id', 'u', 'v'])
        for frame in frames:
            for track in sorted(frame.features):
                u, v = frame.features[track]
                writer.writerow([_fmt(frame.stamp), track, _fmt(u), _fmt(v)])


def read_features_csv(path, camera_stamps: Optional[Sequence[float]] = None) -> List[ImageFrame]:
    """Group observations by stamp; `camera_stamps` adds frames that saw nothing."""
    grouped: Dict[float, Dict[int, np.ndarray]] = {}
    for number, fields in _data_lines(path):
        if fields[0] == 'stamp':
            continue
        stamp, track, u, v = _floats(path, number, fields, 4)
        grouped.setdefault(stamp, {})[int(track)] = np.array([u, v])
    for stamp in camera_stamps or ():
        grouped.setdefault(float(stamp), {})
    return [ImageFrame(stamp, grouped[stamp]) for stamp in sorted(grouped)]


# GNSS -----------------------------------------------------------------------

def write_gnss_txt(path, epochs: Iterable[RawGnssEpoch]):
    with open(path, 'w', encoding='utf-8') as f:
        f.write('# epoch_stamp sat_id constellation px py pz vx vy vz clk_bias clk_drift '
                'pseudorange doppler wavelength\n')
        for epoch in epochs:
            for o in epoch.observations:
                sat, obs = o.sat, o.obs
                fields = [_fmt(epoch.stamp), obs.sat_id, sat.constellation.value]
                fields += [_fmt(v) for v in sat.position_ecef] + [_fmt(v) for v in sat.velocity_ecef]
                fields += [_fmt(sat.clock_bias), _fmt(sat.clock_drift)]
                fields += [_fmt(obs.pseudorange), _fmt(obs.doppler), _fmt(obs.wavelength)]
                f.write(' '.join(fields) + '\n')


def read_gnss_txt(path) -> List[RawGnssEpoch]:
    """Epochs in stamp order, indexed from 0."""
    grouped: Dict[float, List[GnssObservation]] = {}
    for number, fields in _data_lines(path):
        if len(fields) != 14:
            raise InputError(f"{path}:{number}: expected 14 fields, found {len(fields)}")
        sat_id, constellation_name = fields[1], fields[2]
        values = _floats(path, number, [fields[0]] + fields[3:], 12)
        try:
            constellation = Constellation.parse(constellation_name)
            sat = SatelliteState(sat_id, constellation, np.array(values[1:4]), np.array(values[4:7]),
                                 values[7], values[8])
            obs = SatObs(sat_id, _optional(values[9]), _optional(values[10]), values[11])
        except (InputError, ValueError) as exc:
            raise InputError(f"{path}:{number}: {exc}") from exc
        grouped.setdefault(values[0], []).append(GnssObservation(obs, sat))
    epochs = []
    for index, stamp in enumerate(sorted(grouped)):
        try:
            epochs.append(RawGnssEpoch(index, stamp, tuple(grouped[stamp])))
        except InputError as exc:
            raise InputError(f"{path}: epoch at {stamp}: {exc}") from exc
    return epochs


def write_gnss_truth(path, records):
    with open(path, 'w', encoding='utf-8') as f:
        f.write('# epoch_index stamp sat_id elevation_deg outlier_bias receiver_clock_bias receiver_clock_drift\n')
        for r in records:
            f.write(f"{r.epoch_index} {_fmt(r.stamp)} {r.sat_id} {_fmt(r.elevation_deg)} "
                    f"{_fmt(r.outlier_bias)} {_fmt(r.receiver_clock_bias)} {_fmt(r.receiver_clock_drift)}\n")


def read_gnss_outliers(path) -> Dict[int, set]:
    """Epoch index -> satellite ids with an injected outlier."""
    outliers: Dict[int, set] = {}
    for number, fields in _data_lines(path):
        if len(fields) != 7:
            raise InputError(f"{path}:{number}: expected 7 fields, found {len(fields)}")
        if float(fields[4]) != 0.0:
            outliers.setdefault(int(fields[0]), set()).add(fields[2])
    return outliers


# Trajectories ---------------------------------------------------------------

def write_tum(path, poses: Iterable[TimedPose]):
    poses = list(poses)
    with open(path, 'w', encoding='utf-8') as f:
        f.write('# stamp px py pz qx qy qz qw\n')
        if poses and all(p.rotation is None for p in poses):
            f.write(NO_ROTATION_MARK + '\n')
        for p in poses:
            q = rot_to_quat(p.rotation) if p.rotation is not None else np.array([0.0, 0.0, 0.0, 1.0])
            fields = [_fmt(p.stamp)] + [_fmt(v) for v in p.position] + [_fmt(v) for v in q]
            f.write(' '.join(fields) + '\n')


def read_tum(path) -> List[TimedPose]:
    with open(path, 'r', encoding='utf-8') as f:
        has_rotation = NO_ROTATION_MARK not in (line.strip() for line in f)
    poses = []
    for number, fields in _data_lines(path):
        values = _floats(path, number, fields, 8)
        rotation = quat_to_rot(np.array(values[4:8])) if has_rotation else None
        poses.append(TimedPose(values[0], np.array(values[1:4]), rotation))
    poses.sort(key=lambda p: p.stamp)
    return poses


# YAML state files -----------------------------------------------------------

def _load_yaml(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: {exc}") from exc


def write_sensors(path, sensors: SensorSetup):
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(sensors.to_dict(), f, sort_keys=False)


def read_sensors(path) -> SensorSetup:
    try:
        return SensorSetup.from_dict(_load_yaml(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: invalid sensor setup ({exc})") from exc


def nav_state_to_dict(state: NavState) -> Dict[str, Any]:
    return {
        'stamp': float(state.stamp),
        'position': state.p_wl_b.tolist(),
        'velocity': state.v_wl_b.tolist(),
        'quaternion_xyzw': state.q_wl_b.tolist(),
        'bias_accel': state.bias_accel.tolist(),
        'bias_gyro': state.bias_gyro.tolist(),
    }


def nav_state_from_dict(data: Dict[str, Any]) -> NavState:
    return NavState(
        p_wl_b=np.asarray(data['position'], dtype=float),
        v_wl_b=np.asarray(data['velocity'], dtype=float),
        q_wl_b=np.asarray(data['quaternion_xyzw'], dtype=float),
        bias_accel=np.asarray(data.get('bias_accel', [0.0, 0.0, 0.0]), dtype=float),
        bias_gyro=np.asarray(data.get('bias_gyro', [0.0, 0.0, 0.0]), dtype=float),
        stamp=float(data.get('stamp', 0.0)),
    )


def write_bootstrap(path, state: NavState):
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(nav_state_to_dict(state), f, sort_keys=False)


def read_bootstrap(path) -> NavState:
    try:
        return nav_state_from_dict(_load_yaml(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: invalid bootstrap state ({exc})") from exc


# Dataset directories --------------------------------------------------------

def write_dataset(directory, dataset: Dataset, gnss_truth=None):
    os.makedirs(directory, exist_ok=True)
    write_imu_csv(os.path.join(directory, IMU_FILE), dataset.imu)
    write_features_csv(os.path.join(directory, FEATURES_FILE), dataset.frames)
    write_gnss_txt(os.path.join(directory, GNSS_FILE), dataset.gnss)
    write_tum(os.path.join(directory, GT_FILE), dataset.ground_truth)
    write_sensors(os.path.join(directory, SENSORS_FILE), dataset.sensors)
    write_bootstrap(os.path.join(directory, BOOTSTRAP_FILE), dataset.bootstrap)
    if gnss_truth is not None:
        write_gnss_truth(os.path.join(directory, GNSS_TRUTH_FILE), gnss_truth)
    logger.info(f"Dataset written to {directory}")
    return directory


def load_dataset(directory, require_gnss=True) -> Dataset:
    """Load a dataset directory; every missing required file is reported."""
    required = [IMU_FILE, FEATURES_FILE, SENSORS_FILE, BOOTSTRAP_FILE]
    if require_gnss:
        required.append(GNSS_FILE)
    missing = [name for name in required if not os.path.isfile(os.path.join(directory, name))]
    if missing:
        raise InputError('; '.join(f"missing dataset file: {os.path.join(directory, n)}" for n in missing))

    gnss_path = os.path.join(directory, GNSS_FILE)
    gt_path = os.path.join(directory, GT_FILE)
    ground_truth = read_tum(gt_path) if os.path.isfile(gt_path) else []
    camera_stamps = [p.stamp for p in ground_truth]
    dataset = Dataset(
        imu=read_imu_csv(os.path.join(directory, IMU_FILE)),
        frames=read_features_csv(os.path.join(directory, FEATURES_FILE), camera_stamps),
        gnss=read_gnss_txt(gnss_path) if os.path.isfile(gnss_path) else [],
        sensors=read_sensors(os.path.join(directory, SENSORS_FILE)),
        bootstrap=read_bootstrap(os.path.join(directory, BOOTSTRAP_FILE)),
        ground_truth=ground_truth,
        name=os.path.basename(os.path.normpath(directory)),
    )
    if not dataset.frames:
        raise InputError(f"{directory}: dataset has no camera frames")
    return dataset


# Run outputs ----------------------------------------------------------------

def write_json_lines(path, records: Iterable[Dict[str, Any]]):
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + '\n')


def write_gate_log(path, reports):
    with open(path, 'w', encoding='utf-8') as f:
        for report in reports:
            f.write(report.to_json_line() + '\n')


def write_manifest(directory, manifest: Dict[str, Any]):
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, MANIFEST_FILE)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2, sort_keys=True)
    return path


def read_manifest(directory) -> Dict[str, Any]:
    path = os.path.join(directory, MANIFEST_FILE)
    if not os.path.isfile(path):
        return {}
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_results_csv(path, rows: Sequence[Dict[str, Any]], columns=RESULT_COLUMNS):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction='ignore')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ('' if row.get(k) is None else row.get(k)) for k in columns})
    return path


def read_results_csv(path) -> List[Dict[str, str]]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return list(csv.DictReader(f))
