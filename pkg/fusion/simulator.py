"""Synthetic ground truth and sensor streams for end-to-end verification."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from fusion.errors import ConfigError
from fusion.frames import GeodeticCoord, anchor_from_geodetic, enu_to_ecef
from fusion.gnss_model import (
    GLONASS_L1_WAVELENGTH,
    GPS_L1_WAVELENGTH,
    SPEED_OF_LIGHT,
    Constellation,
    GnssObservation,
    RawGnssEpoch,
    SatelliteState,
    SatObs,
)
from fusion.imu_preintegration import GravityVec, ImuNoise, ImuSample
from fusion.lie import rot_to_quat, yaw_matrix
from fusion.models import Dataset, ImageFrame, SensorSetup, TimedPose
from fusion.state import Extrinsics, LeverArm, NavState


logger = logging.getLogger(__name__)

ORBIT_RADIUS = 2.66e7
EARTH_GM = 3.986004418e14
# Camera z = body x (forward), camera x = -body y, camera y = -body z.
R_BODY_FROM_CAMERA = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])

GPS_SKY = [(10, 75), (55, 50), (100, 30), (145, 20), (190, 60), (235, 40), (280, 25), (325, 15)]
GLONASS_SKY = [(30, 82), (90, 45), (150, 35), (210, 20), (270, 55), (330, 28)]


def _pairs(value, name):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, "must be a list of numeric pairs") from exc
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ConfigError(name, "must be a list of numeric pairs")
    return arr


@dataclass
class CanyonSegment:
    start: float
    end: float
    elevation_mask_deg: float


@dataclass
class ScenarioConfig:
    """Scenario description; every field maps to a key of the `scenario` section."""

    name: str = 'default'
    seed: int = 7
    origin: Tuple[float, float, float] = (22.3193, 114.1694, 10.0)
    waypoints: List[List[float]] = field(default_factory=lambda: [
        [0.0, 0.0], [200.0, 0.0], [260.0, 20.0], [290.0, 90.0], [300.0, 450.0]])
    speed_profile: List[List[float]] = field(default_factory=lambda: [
        [0.0, 5.0], [40.0, 5.0], [45.0, 0.0], [55.0, 0.0], [60.0, 5.0], [120.0, 5.0]])
    imu_rate: float = 200.0
    camera_rate: float = 10.0
    gnss_rate: float = 1.0
    gnss_offset: float = 0.37
    landmark_count: int = 1200
    landmark_lateral: Tuple[float, float] = (4.0, 25.0)
    landmark_height: Tuple[float, float] = (-1.0, 8.0)
    min_depth: float = 1.0
    max_depth: float = 60.0
    fov_deg: float = 90.0
    focal_length: float = 460.0
    gps_satellites: int = 8
    glonass_satellites: int = 6
    elevation_mask_deg: float = 10.0
    canyon_segments: List[CanyonSegment] = field(default_factory=list)
    pseudorange_sigma: float = 1.0
    doppler_sigma: float = 0.5
    pixel_sigma: float = 1.5
    imu_noise: ImuNoise = field(default_factory=ImuNoise)
    accel_bias: Tuple[float, float, float] = (0.02, -0.01, 0.015)
    gyro_bias: Tuple[float, float, float] = (0.001, -0.0005, 0.0008)
    clock_bias: Dict[str, float] = field(default_factory=lambda: {'GPS': 1.2e-4, 'GLONASS': 1.5e-4})
    clock_drift: Dict[str, float] = field(default_factory=lambda: {'GPS': 2.0e-8, 'GLONASS': 2.0e-8})
    clock_random_walk: float = 1e-9
    outlier_rate: float = 0.0
    outlier_magnitude: Tuple[float, float] = (20.0, 200.0)
    lever_arm: Tuple[float, float, float] = (0.3, 0.1, 0.8)
    camera_translation: Tuple[float, float, float] = (0.1, 0.0, 0.05)
    gravity: float = 9.81
    bootstrap_position_sigma: float = 0.0
    bootstrap_velocity_sigma: float = 0.0
    bootstrap_yaw_sigma: float = 0.0
    noise_free: bool = False

    @property
    def duration(self):
        return float(self.speed_profile[-1][0])

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScenarioConfig':
        data = dict(data or {})
        kwargs = {}
        for name in cls.__dataclass_fields__:
            if name in data:
                kwargs[name] = data[name]
        if 'imu_noise' in kwargs:
            kwargs['imu_noise'] = ImuNoise.from_dict(kwargs['imu_noise'])
        if 'canyon_segments' in kwargs:
            segments = []
            for i, seg in enumerate(kwargs['canyon_segments'] or []):
                try:
                    segments.append(CanyonSegment(float(seg['start']), float(seg['end']),
                                                  float(seg['elevation_mask_deg'])))
                except (KeyError, TypeError, ValueError) as exc:
                    raise ConfigError(f'scenario.canyon_segments[{i}]',
                                      "needs start, end and elevation_mask_deg") from exc
            kwargs['canyon_segments'] = segments
        for name in ('origin', 'landmark_lateral', 'landmark_height', 'outlier_magnitude',
                     'accel_bias', 'gyro_bias', 'lever_arm', 'camera_translation'):
            if name in kwargs:
                kwargs[name] = tuple(float(v) for v in kwargs[name])
        config = cls(**kwargs)
        config.validate()
        return config

    def validate(self):
        profile = _pairs(self.speed_profile, 'scenario.speed_profile')
        _pairs(self.waypoints, 'scenario.waypoints')
        if len(self.waypoints) < 2:
            raise ConfigError('scenario.waypoints', "need at least two waypoints")
        if len(profile) < 2 or profile[-1, 0] <= profile[0, 0]:
            raise ConfigError('scenario.speed_profile', "scenario duration must be positive")
        if profile[0, 0] != 0.0:
            raise ConfigError('scenario.speed_profile', "first knot must be at t = 0")
        if np.any(np.diff(profile[:, 0]) <= 0.0):
            raise ConfigError('scenario.speed_profile', "knot times must be strictly increasing")
        if np.any(profile[:, 1] < 0.0):
            raise ConfigError('scenario.speed_profile', "speeds must be non-negative")
        for name in ('imu_rate', 'camera_rate', 'gnss_rate', 'focal_length', 'gravity'):
            if getattr(self, name) <= 0:
                raise ConfigError(f'scenario.{name}', "must be positive")
        if self.imu_rate < self.camera_rate:
            raise ConfigError('scenario.imu_rate', "must not be below camera_rate")
        if self.landmark_count < 0:
            raise ConfigError('scenario.landmark_count', "must be non-negative")

    def effective(self) -> 'ScenarioConfig':
        """Copy with every noise source disabled when `noise_free` is set."""
        if not self.noise_free:
            return self
        return replace(
            self,
            pseudorange_sigma=0.0,
            doppler_sigma=0.0,
            pixel_sigma=0.0,
            imu_noise=ImuNoise(0.0, 0.0, 0.0, 0.0),
            clock_random_walk=0.0,
            outlier_rate=0.0,
            accel_bias=(0.0, 0.0, 0.0),
            gyro_bias=(0.0, 0.0, 0.0),
            bootstrap_position_sigma=0.0,
            bootstrap_velocity_sigma=0.0,
            bootstrap_yaw_sigma=0.0,
        )


@dataclass
class SimSatellite:
    sat_id: str
    constellation: Constellation
    axis_u: np.ndarray
    axis_v: np.ndarray
    radius: float
    rate: float
    clock_bias: float
    clock_drift: float
    wavelength: float

    def state(self, t) -> SatelliteState:
        c, s = math.cos(self.rate * t), math.sin(self.rate * t)
        position = self.radius * (c * self.axis_u + s * self.axis_v)
        velocity = self.radius * self.rate * (-s * self.axis_u + c * self.axis_v)
        return SatelliteState(self.sat_id, self.constellation, position, velocity,
                              self.clock_bias + self.clock_drift * t, self.clock_drift)


@dataclass
class Kinematics:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    rotation: np.ndarray
    yaw: float
    angular_rate: np.ndarray


class GroundTruth:
    """Continuous-time truth: trajectory, landmarks, satellites and clocks."""

    def __init__(self, config: ScenarioConfig, seed_sequence: Optional[np.random.SeedSequence] = None):
        self.config = config
        seed_sequence = seed_sequence or np.random.SeedSequence(config.seed)
        streams = [np.random.default_rng(s) for s in seed_sequence.spawn(3)]
        self.anchor = anchor_from_geodetic(GeodeticCoord.from_degrees(*config.origin))
        self._build_path()
        self._build_speed()
        self.accel_bias = np.asarray(config.accel_bias, dtype=float)
        self.gyro_bias = np.asarray(config.gyro_bias, dtype=float)
        self.landmarks = self._build_landmarks(streams[0])
        self.satellites = self._build_satellites(streams[1])
        self._build_clocks(streams[2])
        start = self.kinematics(0.0)
        self.local_origin = start.position.copy()
        self.local_yaw = start.yaw

    # Trajectory -------------------------------------------------------------

    def _build_path(self):
        points = np.asarray(self.config.waypoints, dtype=float)[:, :2]
        chords = np.linalg.norm(np.diff(points, axis=0), axis=1)
        if np.any(chords <= 0.0):
            raise ConfigError('scenario.waypoints', "consecutive waypoints must differ")
        knots = np.concatenate([[0.0], np.cumsum(chords)])
        start_dir = (points[1] - points[0]) / chords[0]
        end_dir = (points[-1] - points[-2]) / chords[-1]
        self._path = CubicSpline(knots, points, bc_type=((1, start_dir), (1, end_dir)))
        self.path_length = float(knots[-1])

    def _build_speed(self):
        profile = np.asarray(self.config.speed_profile, dtype=float)
        self._knot_t = profile[:, 0]
        self._knot_v = profile[:, 1]
        distance = [0.0]
        for k in range(len(profile) - 1):
            T = self._knot_t[k + 1] - self._knot_t[k]
            distance.append(distance[-1] + 0.5 * T * (self._knot_v[k] + self._knot_v[k + 1]))
        self._knot_u = np.asarray(distance)
        if self._knot_u[-1] > self.path_length:
            raise ConfigError('scenario.speed_profile',
                              f"covers {self._knot_u[-1]:.1f} m but the path is only {self.path_length:.1f} m")

    @property
    def duration(self):
        return float(self._knot_t[-1])

    def _progress(self, t):
        """Path parameter u and its first two time derivatives."""
        t = min(max(t, self._knot_t[0]), self._knot_t[-1])
        k = int(np.clip(np.searchsorted(self._knot_t, t, side='right') - 1, 0, len(self._knot_t) - 2))
        T = self._knot_t[k + 1] - self._knot_t[k]
        tau = (t - self._knot_t[k]) / T
        v0, v1 = self._knot_v[k], self._knot_v[k + 1]
        u = self._knot_u[k] + T * (v0 * tau + (v1 - v0) * (tau ** 3 - 0.5 * tau ** 4))
        u_dot = v0 + (v1 - v0) * (3.0 * tau ** 2 - 2.0 * tau ** 3)
        u_ddot = (v1 - v0) * (6.0 * tau - 6.0 * tau ** 2) / T
        return u, u_dot, u_ddot

    def kinematics(self, t) -> Kinematics:
        u, u_dot, u_ddot = self._progress(t)
        p = self._path(u)
        d1 = self._path(u, 1)
        d2 = self._path(u, 2)
        yaw = math.atan2(d1[1], d1[0])
        yaw_rate = (d1[0] * d2[1] - d1[1] * d2[0]) / (d1 @ d1) * u_dot
        velocity = d1 * u_dot
        acceleration = d2 * u_dot * u_dot + d1 * u_ddot
        return Kinematics(
            position=np.array([p[0], p[1], 0.0]),
            velocity=np.array([velocity[0], velocity[1], 0.0]),
            acceleration=np.array([acceleration[0], acceleration[1], 0.0]),
            rotation=yaw_matrix(yaw),
            yaw=yaw,
            angular_rate=np.array([0.0, 0.0, yaw_rate]),
        )

    def antenna(self, t):
        """Antenna position/velocity in the scenario ENU frame."""
        kin = self.kinematics(t)
        lever = np.asarray(self.config.lever_arm, dtype=float)
        position = kin.position + kin.rotation @ lever
        velocity = kin.velocity + kin.rotation @ np.cross(kin.angular_rate, lever)
        return position, velocity

    def local_state(self, t) -> NavState:
        """True NavState in the local frame (origin/yaw of the first pose)."""
        kin = self.kinematics(t)
        R_lg = yaw_matrix(-self.local_yaw)
        return NavState(
            p_wl_b=R_lg @ (kin.position - self.local_origin),
            v_wl_b=R_lg @ kin.velocity,
            q_wl_b=rot_to_quat(R_lg @ kin.rotation),
            bias_accel=self.accel_bias.copy(),
            bias_gyro=self.gyro_bias.copy(),
            stamp=t,
        )

    def local_to_enu(self):
        """(yaw, translation) mapping the local frame onto scenario ENU."""
        return self.local_yaw, self.local_origin.copy()

    # World ------------------------------------------------------------------

    def _build_landmarks(self, rng):
        cfg = self.config
        if cfg.landmark_count == 0:
            return np.zeros((0, 3))
        u = rng.uniform(0.0, self.path_length, cfg.landmark_count)
        side = rng.choice([-1.0, 1.0], cfg.landmark_count)
        lateral = rng.uniform(*cfg.landmark_lateral, cfg.landmark_count)
        height = rng.uniform(*cfg.landmark_height, cfg.landmark_count)
        centers = self._path(u)
        tangents = self._path(u, 1)
        tangents = tangents / np.linalg.norm(tangents, axis=1, keepdims=True)
        normals = np.column_stack([-tangents[:, 1], tangents[:, 0]])
        xy = centers + (side * lateral)[:, None] * normals
        return np.column_stack([xy, height])

    def _build_satellites(self, rng):
        cfg = self.config
        rate = math.sqrt(EARTH_GM / ORBIT_RADIUS ** 3)
        origin = self.anchor.origin_ecef
        R_eg = self.anchor.rotation_ecef_from_enu
        plans = ([(Constellation.GPS, f'G{i + 1:02d}', GPS_SKY[i % len(GPS_SKY)], math.radians(55.0),
                   GPS_L1_WAVELENGTH) for i in range(cfg.gps_satellites)]
                 + [(Constellation.GLONASS, f'R{i + 1:02d}', GLONASS_SKY[i % len(GLONASS_SKY)],
                     math.radians(64.8), GLONASS_L1_WAVELENGTH) for i in range(cfg.glonass_satellites)])
        satellites = []
        for constellation, sat_id, (az_deg, el_deg), inclination, wavelength in plans:
            az, el = math.radians(az_deg), math.radians(el_deg)
            los = R_eg @ np.array([math.cos(el) * math.sin(az), math.cos(el) * math.cos(az), math.sin(el)])
            b = origin @ los
            distance = -b + math.sqrt(b * b - origin @ origin + ORBIT_RADIUS ** 2)
            axis_u = (origin + distance * los) / ORBIT_RADIUS
            normal = _orbit_normal(axis_u, inclination)
            satellites.append(SimSatellite(
                sat_id=sat_id,
                constellation=constellation,
                axis_u=axis_u,
                axis_v=np.cross(normal, axis_u),
                radius=ORBIT_RADIUS,
                rate=rate,
                clock_bias=float(rng.uniform(-1e-4, 1e-4)),
                clock_drift=float(rng.uniform(-1e-11, 1e-11)),
                wavelength=wavelength,
            ))
        return satellites

    def _build_clocks(self, rng):
        cfg = self.config
        self.epoch_stamps = gnss_stamps(cfg, self.duration)
        self._clock_walk = {}
        for constellation in (Constellation.GPS.value, Constellation.GLONASS.value):
            steps = rng.normal(0.0, 1.0, len(self.epoch_stamps))
            dt = np.diff(np.concatenate([[0.0], self.epoch_stamps]))
            self._clock_walk[constellation] = np.cumsum(cfg.clock_random_walk * np.sqrt(dt) * steps)

    def receiver_clock(self, constellation, t):
        cfg = self.config
        bias0 = cfg.clock_bias.get(constellation, 0.0)
        drift = cfg.clock_drift.get(constellation, 0.0)
        bias = bias0 + drift * t
        walk = self._clock_walk.get(constellation)
        if walk is None or not len(walk):
            return bias, drift
        stamps = self.epoch_stamps
        bias += float(np.interp(t, stamps, walk))
        # the walk is piecewise linear between epochs; its slope is part of the drift
        k = int(np.searchsorted(stamps, t, side='right')) - 1
        if 0 <= k < len(stamps) - 1:
            drift += (walk[k + 1] - walk[k]) / (stamps[k + 1] - stamps[k])
        return bias, drift

    def elevation_mask(self, t):
        mask = self.config.elevation_mask_deg
        for seg in self.config.canyon_segments:
            if seg.start <= t <= seg.end:
                mask = max(mask, seg.elevation_mask_deg)
        return math.radians(mask)

    def ground_truth_poses(self, stamps) -> List[TimedPose]:
        poses = []
        for t in stamps:
            kin = self.kinematics(t)
            poses.append(TimedPose(float(t), kin.position, kin.rotation))
        return poses


def _orbit_normal(axis_u, inclination):
    """Unit normal perpendicular to `axis_u` with the requested inclination if reachable."""
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis_u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis_u, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis_u, e1)
    amplitude = math.hypot(e1[2], e2[2])
    target = math.cos(inclination)
    if amplitude < 1e-12 or target > amplitude:
        return e1 if abs(e1[2]) >= abs(e2[2]) else e2
    phase = math.atan2(e2[2], e1[2])
    phi = phase + math.acos(target / amplitude)
    normal = math.cos(phi) * e1 + math.sin(phi) * e2
    return normal / np.linalg.norm(normal)


def camera_stamps(config, duration):
    count = int(math.floor(duration * config.camera_rate + 1e-9))
    return np.arange(count + 1) / config.camera_rate


def imu_stamps(config, duration):
    count = int(math.floor(duration * config.imu_rate + 1e-9))
    return np.arange(count + 1) / config.imu_rate


def gnss_stamps(config, duration):
    period = 1.0 / config.gnss_rate
    count = int(math.floor((duration - config.gnss_offset) / period + 1e-9))
    if count < 0:
        return np.zeros(0)
    return config.gnss_offset + np.arange(count + 1) * period


def synth_imu(gt: GroundTruth, config: ScenarioConfig, rng: Optional[np.random.Generator] = None) -> List[ImuSample]:
    """Specific force and angular rate in the body frame, with bias and noise."""
    stamps = imu_stamps(config, gt.duration)
    g = np.array([0.0, 0.0, config.gravity])
    noise = config.imu_noise
    dt = 1.0 / config.imu_rate
    ba = gt.accel_bias.copy()
    bg = gt.gyro_bias.copy()
    samples = []
    for t in stamps:
        kin = gt.kinematics(t)
        accel = kin.rotation.T @ (kin.acceleration + g) + ba
        gyro = kin.angular_rate + bg
        if rng is not None:
            accel = accel + rng.normal(0.0, noise.accel_noise / math.sqrt(dt), 3)
            gyro = gyro + rng.normal(0.0, noise.gyro_noise / math.sqrt(dt), 3)
            ba = ba + rng.normal(0.0, noise.accel_walk * math.sqrt(dt), 3)
            bg = bg + rng.normal(0.0, noise.gyro_walk * math.sqrt(dt), 3)
        samples.append(ImuSample(gyro=gyro, accel=accel, stamp=float(t)))
    return samples


def synth_features(gt: GroundTruth, config: ScenarioConfig, frame_stamp,
                   rng: Optional[np.random.Generator] = None) -> Dict[int, np.ndarray]:
    """Unit-plane observations keyed by landmark index (track ids are assigned later)."""
    if len(gt.landmarks) == 0:
        return {}
    kin = gt.kinematics(frame_stamp)
    R_wc = kin.rotation @ R_BODY_FROM_CAMERA
    t_wc = kin.position + kin.rotation @ np.asarray(config.camera_translation, dtype=float)
    points = (gt.landmarks - t_wc) @ R_wc
    depth = points[:, 2]
    half_fov = math.tan(math.radians(config.fov_deg) / 2.0)
    with np.errstate(divide='ignore', invalid='ignore'):
        uv = points[:, :2] / depth[:, None]
    visible = ((depth >= config.min_depth) & (depth <= config.max_depth)
               & (np.abs(uv[:, 0]) <= half_fov) & (np.abs(uv[:, 1]) <= half_fov))
    sigma = config.pixel_sigma / config.focal_length
    out = {}
    for idx in np.flatnonzero(visible):
        obs = uv[idx].copy()
        if rng is not None and sigma > 0.0:
            obs = obs + rng.normal(0.0, sigma, 2)
        out[int(idx)] = obs
    return out


@dataclass
class GnssTruthRecord:
    epoch_index: int
    stamp: float
    sat_id: str
    elevation_deg: float
    outlier_bias: float
    receiver_clock_bias: float
    receiver_clock_drift: float


def synth_gnss_epoch(gt: GroundTruth, config: ScenarioConfig, stamp, epoch_index=0,
                     rng: Optional[np.random.Generator] = None) -> Tuple[RawGnssEpoch, List[GnssTruthRecord]]:
    """Pseudorange/Doppler for every satellite above the elevation mask."""
    p_enu, v_enu = gt.antenna(stamp)
    receiver = enu_to_ecef(gt.anchor, p_enu)
    receiver_vel = gt.anchor.rotation_ecef_from_enu @ v_enu
    R_eg = gt.anchor.rotation_ecef_from_enu
    mask = gt.elevation_mask(stamp)
    observations = []
    truth = []
    for sat in gt.satellites:
        state = sat.state(stamp)
        diff = state.position_ecef - receiver
        rng_m = float(np.linalg.norm(diff))
        los = diff / rng_m
        elevation = math.asin(float((R_eg.T @ los)[2]))
        if elevation < mask:
            continue
        bias, drift = gt.receiver_clock(sat.constellation.value, stamp)
        pseudorange = rng_m + SPEED_OF_LIGHT * bias - SPEED_OF_LIGHT * state.clock_bias
        rate = (float(los @ (state.velocity_ecef - receiver_vel)) + SPEED_OF_LIGHT * drift
                - SPEED_OF_LIGHT * state.clock_drift)
        outlier = 0.0
        if rng is not None:
            pseudorange += rng.normal(0.0, config.pseudorange_sigma) if config.pseudorange_sigma > 0 else 0.0
            rate += rng.normal(0.0, config.doppler_sigma) if config.doppler_sigma > 0 else 0.0
            if config.outlier_rate > 0.0 and rng.uniform() < config.outlier_rate:
                outlier = float(rng.uniform(*config.outlier_magnitude))
                pseudorange += outlier
        observations.append(GnssObservation(SatObs(sat.sat_id, pseudorange, -rate / sat.wavelength, sat.wavelength),
                                            state))
        truth.append(GnssTruthRecord(epoch_index, float(stamp), sat.sat_id, math.degrees(elevation),
                                     outlier, bias, drift))
    return RawGnssEpoch(epoch_index, float(stamp), tuple(observations)), truth


def _assign_tracks(raw_frames):
    """Split landmark sightings into contiguous tracks with at least two observations."""
    next_id = 0
    active = {}
    tracks = []
    for frame in raw_frames:
        current = {}
        for landmark, uv in frame.items():
            track = active.get(landmark)
            if track is None:
                track = next_id
                next_id += 1
            current[landmark] = track
        tracks.append({current[lm]: uv for lm, uv in frame.items()})
        active = current
    counts = {}
    for frame in tracks:
        for track in frame:
            counts[track] = counts.get(track, 0) + 1
    return [{t: uv for t, uv in frame.items() if counts[t] >= 2} for frame in tracks]


@dataclass
class SimulationResult:
    dataset: Dataset
    truth: GroundTruth
    gnss_truth: List[GnssTruthRecord]


def simulate(config: ScenarioConfig) -> SimulationResult:
    """Generate a complete dataset; identical config and seed give identical output."""
    config = config.effective()
    config.validate()
    seed_seq = np.random.SeedSequence(config.seed)
    world_seq, imu_seq, feature_seq, gnss_seq, boot_seq = seed_seq.spawn(5)
    gt = GroundTruth(config, world_seq)
    noisy = not config.noise_free

    imu = synth_imu(gt, config, np.random.default_rng(imu_seq) if noisy else None)
    feature_rng = np.random.default_rng(feature_seq) if noisy else None
    stamps = camera_stamps(config, gt.duration)
    raw_frames = [synth_features(gt, config, t, feature_rng) for t in stamps]
    frames = [ImageFrame(float(t), f) for t, f in zip(stamps, _assign_tracks(raw_frames))]

    gnss_rng = np.random.default_rng(gnss_seq) if noisy else None
    epochs, truth = [], []
    for index, t in enumerate(gt.epoch_stamps):
        epoch, records = synth_gnss_epoch(gt, config, float(t), index, gnss_rng)
        epochs.append(epoch)
        truth.extend(records)

    sensors = SensorSetup(
        extrinsics=Extrinsics(rot_to_quat(R_BODY_FROM_CAMERA), np.asarray(config.camera_translation, dtype=float)),
        lever_arm=LeverArm(np.asarray(config.lever_arm, dtype=float)),
        imu_noise=config.imu_noise if any(config.imu_noise.to_dict().values()) else ImuNoise(),
        gravity=GravityVec(config.gravity),
        pixel_sigma=max(config.pixel_sigma, 0.1),
        focal_length=config.focal_length,
    )
    dataset = Dataset(
        imu=imu,
        frames=frames,
        gnss=epochs,
        sensors=sensors,
        bootstrap=_bootstrap_state(gt, config, float(stamps[0]), np.random.default_rng(boot_seq)),
        ground_truth=gt.ground_truth_poses(stamps),
        name=config.name,
    )
    outliers = sum(1 for r in truth if r.outlier_bias)
    logger.info(f"Simulated '{config.name}': {gt.duration:.1f} s, {len(imu)} IMU samples, "
                f"{len(frames)} frames, {len(epochs)} GNSS epochs, {outliers} injected outliers")
    return SimulationResult(dataset, gt, truth)


def _bootstrap_state(gt, config, stamp, rng):
    truth = gt.local_state(stamp)
    position = truth.p_wl_b + rng.normal(0.0, config.bootstrap_position_sigma, 3)
    velocity = truth.v_wl_b + rng.normal(0.0, config.bootstrap_velocity_sigma, 3)
    yaw_error = rng.normal(0.0, config.bootstrap_yaw_sigma)
    R = yaw_matrix(yaw_error) @ truth.rotation
    return NavState(position, velocity, rot_to_quat(R), truth.bias_accel, truth.bias_gyro, stamp)
