"""Sliding-window GNSS/visual/inertial estimator.

The estimator starts in a visual-inertial warm-up phase with the first
window pose held fixed. Once enough SPP fixes line up with the local
trajectory it aligns the local frame to ENU and raw GNSS factors join the
window.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from fusion.errors import ConfigError, FusionError, InputError
from fusion.factors import (
    AlignmentPriorFactor,
    DopplerFactor,
    GnssFactorBinding,
    ImuFactor,
    PositionFixFactor,
    PseudorangeFactor,
    ReprojectionFactor,
)
from fusion.frames import EnuAnchor, ecef_to_enu, ecef_to_geodetic, enu_to_ecef, make_enu_anchor
from fusion.gating import GateReport, GateThresholds, GatingProblem, GnssGate, apply_gate
from fusion.gnss_model import RawGnssEpoch, spp_solve, velocity_solve
from fusion.imu_preintegration import ImuBuffer, Preintegration, integrate, propagate
from fusion.initialization import (
    align_5dof,
    interpolate_positions,
    ready_for_alignment,
    select_reference,
    translation_for_scale,
)
from fusion.lie import wrap_angle, yaw_matrix, yaw_of
from fusion.marginalization import is_keyframe, slide_keyframe, slide_non_keyframe
from fusion.models import FrameInput, SensorSetup, TimedPose
from fusion.solver import Problem, SolveReport, SolverOptions, solve
from fusion.state import (
    ALIGNMENT_KEY,
    EXTRINSICS_KEY,
    ClockState,
    LandmarkDepth,
    NavState,
    WorldAlignment,
    clock_key,
    frame_key,
    landmark_key,
)


logger = logging.getLogger(__name__)

MODE_FUSED = 'fused'
MODE_VIO = 'vio'
MODE_LOOSE = 'loose'
ESTIMATOR_MODES = (MODE_FUSED, MODE_VIO, MODE_LOOSE)


@dataclass
class EstimatorConfig:
    window_size: int = 10
    mode: str = MODE_FUSED
    gating_method: str = 'gnss'
    pseudorange_weight: float = 1.0
    doppler_weight: float = 4.0
    pseudorange_threshold: float = 10.0
    doppler_threshold: float = 3.0
    fallback_window: float = 5.0
    prior_removal_epochs: int = 30
    low_speed_threshold: float = 0.5
    keyframe_parallax: float = 0.01
    keyframe_min_tracked: int = 50
    alignment_prior_yaw_sigma_deg: float = 5.0
    alignment_prior_translation_sigma: float = 5.0
    turn_threshold_deg: float = 15.0
    min_alignment_pairs: int = 20
    min_alignment_extent: float = 30.0
    scale_correction_threshold: float = 0.0
    alignment_lever_arm: bool = True
    position_fix_sigma: float = 2.0
    huber_delta: float = 1.0
    initial_inverse_depth: float = 0.1
    min_landmark_depth: float = 0.5
    max_landmark_depth: float = 200.0
    accel_bias_repropagation: float = 0.1
    gyro_bias_repropagation: float = 0.01
    solver: SolverOptions = field(default_factory=SolverOptions)

    _POSITIVE = (
        'pseudorange_weight', 'doppler_weight', 'pseudorange_threshold', 'doppler_threshold',
        'fallback_window', 'prior_removal_epochs', 'low_speed_threshold', 'keyframe_parallax',
        'keyframe_min_tracked', 'alignment_prior_yaw_sigma_deg', 'alignment_prior_translation_sigma',
        'turn_threshold_deg', 'min_alignment_pairs', 'min_alignment_extent', 'position_fix_sigma',
        'huber_delta', 'initial_inverse_depth', 'min_landmark_depth', 'max_landmark_depth',
    )

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'EstimatorConfig':
        data = dict(data or {})
        kwargs = {k: data[k] for k in cls.__dataclass_fields__ if k in data and k != 'solver'}
        kwargs['solver'] = SolverOptions.from_dict(data.get('solver'))
        config = cls(**kwargs)
        config.validate()
        return config

    def validate(self):
        if self.window_size < 4:
            raise ConfigError('estimator.window_size', "must be at least 4")
        if self.mode not in ESTIMATOR_MODES:
            raise ConfigError('estimator.mode', f"must be one of {', '.join(ESTIMATOR_MODES)}")
        if self.gating_method not in ('gnss', 'mixed'):
            raise ConfigError('estimator.gating_method', "must be 'gnss' or 'mixed'")
        for name in self._POSITIVE:
            if not getattr(self, name) > 0:
                raise ConfigError(f'estimator.{name}', "must be positive")

    @property
    def gate_thresholds(self):
        keys = ('pseudorange_threshold', 'doppler_threshold', 'fallback_window')
        return GateThresholds.from_dict({k: getattr(self, k) for k in keys})

    @property
    def alignment_prior_weight(self):
        yaw_sigma = math.radians(self.alignment_prior_yaw_sigma_deg)
        t_sigma = self.alignment_prior_translation_sigma
        return np.array([yaw_sigma ** -2, t_sigma ** -2, t_sigma ** -2, t_sigma ** -2])


@dataclass
class WindowFrame:
    frame_id: int
    stamp: float
    state: NavState
    features: Dict[int, np.ndarray]
    keyframe: bool
    preintegration: Optional[Preintegration] = None


@dataclass
class GnssEntry:
    """A gated epoch inside the window with its binding and clock parameters."""

    epoch: RawGnssEpoch
    binding: GnssFactorBinding
    clock: Optional[ClockState] = None
    enu_fix: Optional[np.ndarray] = None

    @property
    def epoch_index(self):
        return self.epoch.epoch_index

    @property
    def has_measurements(self):
        return self.enu_fix is not None or self.epoch.measurement_count > 0


@dataclass
class HistoryRecord:
    stamp: float
    state: NavState
    alignment: Optional[WorldAlignment] = None


@dataclass
class GlobalPose:
    stamp: float
    enu: np.ndarray
    rotation_enu: np.ndarray
    ecef: Optional[np.ndarray] = None
    geodetic: Optional[Any] = None

    def as_timed_pose(self):
        return TimedPose(self.stamp, self.enu, self.rotation_enu)


class WindowState:
    """All parameter blocks of the window plus the bookkeeping that ties them together."""

    def __init__(self, config: EstimatorConfig, sensors: SensorSetup, imu: ImuBuffer):
        self.config = config
        self.sensors = sensors
        self.imu = imu
        self.frames: List[WindowFrame] = []
        self.landmarks: Dict[int, LandmarkDepth] = {}
        self.extrinsics = sensors.extrinsics
        self.alignment: Optional[WorldAlignment] = None
        self.anchor: Optional[EnuAnchor] = None
        self.entries: Dict[int, GnssEntry] = {}
        self.marginal_prior = None
        self.alignment_prior: Optional[WorldAlignment] = None
        self.alignment_prior_removed = False
        self.marginalized_epochs = 0
        self.turned = False
        self.initialized = False
        self.start_yaw: Optional[float] = None
        self.gnss_active = True
        self.history: List[HistoryRecord] = []

    # Lookup -----------------------------------------------------------------

    def frame(self, frame_id) -> WindowFrame:
        for frame in self.frames:
            if frame.frame_id == frame_id:
                return frame
        raise KeyError(frame_id)

    def frame_before(self, stamp) -> Optional[WindowFrame]:
        """Latest frame with stamp <= `stamp`."""
        for frame in reversed(self.frames):
            if frame.stamp <= stamp + 1e-9:
                return frame
        return None

    def entries_bound_to(self, frame_id) -> List[GnssEntry]:
        return [e for e in self.entries.values() if e.binding.frame_id == frame_id]

    def _landmark_in_problem(self, lm):
        return lm.triangulated and len(lm.observations) >= 2 and lm.host_frame in lm.observations

    def values(self) -> Dict[Any, Any]:
        values = {frame_key(f.frame_id): f.state for f in self.frames}
        for lm in self.landmarks.values():
            if self._landmark_in_problem(lm):
                values[landmark_key(lm.track_id)] = lm
        values[EXTRINSICS_KEY] = self.extrinsics
        if self.alignment is not None:
            values[ALIGNMENT_KEY] = self.alignment
        for entry in self.entries.values():
            if entry.clock is not None:
                values[clock_key(entry.epoch_index)] = entry.clock
        return values

    def constant_keys(self):
        constant = set()
        if not self.turned:
            constant.add(EXTRINSICS_KEY)
        if self.marginal_prior is None and self.frames:
            constant.add(frame_key(self.frames[0].frame_id))
        return constant

    # Factors ----------------------------------------------------------------

    def gnss_factors(self, entry: GnssEntry):
        fkey = frame_key(entry.binding.frame_id)
        if entry.enu_fix is not None:
            return [PositionFixFactor(fkey, ALIGNMENT_KEY, entry.binding, entry.enu_fix,
                                      self.config.position_fix_sigma)]
        ckey = clock_key(entry.epoch_index)
        factors = []
        for o in entry.epoch.observations:
            if o.obs.pseudorange is not None:
                factors.append(PseudorangeFactor(fkey, ALIGNMENT_KEY, ckey, self.anchor, entry.binding,
                                                 o.sat, o.obs, self.config.pseudorange_weight))
            if o.obs.doppler is not None:
                factors.append(DopplerFactor(fkey, ALIGNMENT_KEY, ckey, self.anchor, entry.binding,
                                             o.sat, o.obs, self.config.doppler_weight))
        return factors

    def build_factors(self, include_inactive=False, include_prior=True, include_gnss=True):
        factors = []
        gravity = self.sensors.gravity
        for prev, curr in zip(self.frames, self.frames[1:]):
            if curr.preintegration is not None:
                factors.append(ImuFactor(frame_key(prev.frame_id), frame_key(curr.frame_id),
                                         curr.preintegration, gravity))
        sqrt_info = 1.0 / self.sensors.unit_plane_sigma
        for lm in self.landmarks.values():
            if not self._landmark_in_problem(lm):
                continue
            for fid, uv in lm.observations.items():
                if fid == lm.host_frame:
                    continue
                factors.append(ReprojectionFactor(frame_key(lm.host_frame), frame_key(fid), EXTRINSICS_KEY,
                                                  landmark_key(lm.track_id), uv, sqrt_info,
                                                  self.config.huber_delta))
        if include_gnss and (self.gnss_active or include_inactive):
            for entry in self.entries.values():
                factors.extend(self.gnss_factors(entry))
        if self.alignment is not None and self.alignment_prior is not None:
            factors.append(AlignmentPriorFactor(ALIGNMENT_KEY, self.alignment_prior,
                                                self.config.alignment_prior_weight))
        if include_prior and self.marginal_prior is not None:
            factors.append(self.marginal_prior.factor())
        return factors

    def build_problem(self, include_gnss=True, extra_blocks=None, extra_factors=()) -> Problem:
        values = self.values()
        values.update(extra_blocks or {})
        factors = self.build_factors(include_gnss=include_gnss) + list(extra_factors)
        constant = self.constant_keys()
        problem = Problem()
        for factor in factors:
            for key in factor.keys:
                if not problem.has_block(key):
                    problem.add_block(key, values[key], constant=key in constant,
                                      eliminate=key[0] == 'lm')
        for factor in factors:
            problem.add_factor(factor)
        return problem

    def write_back(self, values):
        for frame in self.frames:
            frame.state = values.get(frame_key(frame.frame_id), frame.state)
        for lm in self.landmarks.values():
            updated = values.get(landmark_key(lm.track_id))
            if updated is not None:
                lm.inverse_depth = updated.inverse_depth
        self.extrinsics = values.get(EXTRINSICS_KEY, self.extrinsics)
        if self.alignment is not None:
            self.alignment = values.get(ALIGNMENT_KEY, self.alignment)
        for entry in self.entries.values():
            if entry.clock is not None:
                entry.clock = values.get(clock_key(entry.epoch_index), entry.clock)

    # Landmarks --------------------------------------------------------------

    def camera_pose(self, state: NavState, extrinsics=None):
        ext = extrinsics or self.extrinsics
        R_wb = state.rotation
        return R_wb @ ext.rotation, state.p_wl_b + R_wb @ ext.translation_c_in_b

    def add_observations(self, frame_id, features):
        for track, uv in features.items():
            uv = np.asarray(uv, dtype=float)
            lm = self.landmarks.get(track)
            if lm is None:
                self.landmarks[track] = LandmarkDepth(track, self.config.initial_inverse_depth, frame_id, {frame_id: uv})
            else:
                lm.observations[frame_id] = uv

    def triangulate(self, lm: LandmarkDepth) -> bool:
        rows = []
        centers = []
        for fid, uv in lm.observations.items():
            R_wc, t_wc = self.camera_pose(self.frame(fid).state)
            R_cw = R_wc.T
            P = np.hstack([R_cw, (-R_cw @ t_wc).reshape(3, 1)])
            rows.append(uv[0] * P[2] - P[0])
            rows.append(uv[1] * P[2] - P[1])
            centers.append(t_wc)
        centers = np.array(centers)
        if np.max(np.linalg.norm(centers - centers[0], axis=1)) < 0.05:
            return False
        _, _, Vt = np.linalg.svd(np.array(rows))
        X = Vt[-1]
        if abs(X[3]) < 1e-12:
            return False
        point = X[:3] / X[3]
        R_wc, t_wc = self.camera_pose(self.frame(lm.host_frame).state)
        depth = (R_wc.T @ (point - t_wc))[2]
        if not self.config.min_landmark_depth <= depth <= self.config.max_landmark_depth:
            return False
        lm.inverse_depth = 1.0 / depth
        lm.triangulated = True
        return True

    def triangulate_pending(self):
        for lm in self.landmarks.values():
            if not lm.triangulated and len(lm.observations) >= 2:
                self.triangulate(lm)

    def prune_landmarks(self):
        lo = 1.0 / self.config.max_landmark_depth
        hi = 1.0 / self.config.min_landmark_depth
        bad = [t for t, lm in self.landmarks.items() if lm.triangulated and not lo <= lm.inverse_depth <= hi]
        for track in bad:
            del self.landmarks[track]
        return bad

    # Window maintenance -----------------------------------------------------

    def _record(self, frame):
        self.history.append(HistoryRecord(frame.stamp, frame.state, self.alignment))

    def remove_oldest(self, hosted_tracks, entries):
        oldest = self.frames.pop(0)
        self._record(oldest)
        for track in hosted_tracks:
            self.landmarks.pop(track, None)
        for lm in self.landmarks.values():
            lm.observations.pop(oldest.frame_id, None)
        for entry in entries:
            self.entries.pop(entry.epoch_index, None)
        if self.frames:
            self.frames[0].preintegration = None

    def _rehost(self, lm, old_host, new_host):
        if lm.triangulated:
            R_wc, t_wc = self.camera_pose(self.frame(old_host).state)
            point = R_wc @ (np.append(lm.observations[old_host], 1.0) / lm.inverse_depth) + t_wc
            R_wc2, t_wc2 = self.camera_pose(self.frame(new_host).state)
            depth = (R_wc2.T @ (point - t_wc2))[2]
            if self.config.min_landmark_depth <= depth <= self.config.max_landmark_depth:
                lm.inverse_depth = 1.0 / depth
            else:
                lm.triangulated = False
                lm.inverse_depth = self.config.initial_inverse_depth
        lm.host_frame = new_host

    def remove_second_latest(self) -> List[int]:
        """Drop frames[-2] without marginalization; returns deleted landmark tracks."""
        third, second, latest = self.frames[-3], self.frames[-2], self.frames[-1]
        dropped = []
        for track, lm in list(self.landmarks.items()):
            if second.frame_id not in lm.observations:
                continue
            if lm.host_frame == second.frame_id and latest.frame_id in lm.observations:
                self._rehost(lm, second.frame_id, latest.frame_id)
            lm.observations.pop(second.frame_id)
            if not lm.observations or lm.host_frame == second.frame_id:
                del self.landmarks[track]
                dropped.append(track)

        noise = self.sensors.imu_noise
        latest.preintegration = integrate(self.imu.between(third.stamp, latest.stamp),
                                          third.state.bias_accel, third.state.bias_gyro, noise)
        for entry in self.entries_bound_to(second.frame_id):
            entry.binding = self.make_binding(third, entry.epoch.stamp, entry.epoch.epoch_index,
                                              entry.binding.gyro_at_epoch)
        self._record(second)
        self.frames.remove(second)
        return dropped

    def make_binding(self, frame: WindowFrame, stamp, epoch_index, gyro=None) -> GnssFactorBinding:
        samples = self.imu.between(frame.stamp, stamp)
        pi = integrate(samples, frame.state.bias_accel, frame.state.bias_gyro, self.sensors.imu_noise)
        if gyro is None:
            gyro = self.imu.nearest(stamp).gyro
        return GnssFactorBinding(frame.frame_id, epoch_index, pi, np.asarray(gyro, dtype=float),
                                 self.sensors.lever_arm, self.sensors.gravity)

    def repropagate_if_needed(self):
        for prev, curr in zip(self.frames, self.frames[1:]):
            pi = curr.preintegration
            if pi is None:
                continue
            dba = np.max(np.abs(prev.state.bias_accel - pi.bias_accel))
            dbg = np.max(np.abs(prev.state.bias_gyro - pi.bias_gyro))
            if dba > self.config.accel_bias_repropagation or dbg > self.config.gyro_bias_repropagation:
                curr.preintegration = pi.repropagate(prev.state.bias_accel, prev.state.bias_gyro)

    def apply_scale(self, scale):
        """Rescale the local frame once at handoff."""
        for frame in self.frames:
            frame.state = frame.state.with_scale(scale)
        for lm in self.landmarks.values():
            lm.inverse_depth /= scale
        self.history = [replace(r, state=r.state.with_scale(scale)) for r in self.history]
        prior = self.marginal_prior
        if prior is not None:
            prior.linearization_values = {
                k: (v.with_scale(scale) if isinstance(v, NavState) else v)
                for k, v in prior.linearization_values.items()
            }


@dataclass
class FrameReport:
    frame_id: int
    stamp: float
    solve: Optional[SolveReport]
    gate_reports: List[GateReport]
    slide: Optional[str]
    gnss_active: bool
    initialized: bool

    def to_dict(self, mode):
        gate = {
            'epochs': len(self.gate_reports),
            'kept': sum(r.kept_measurements for r in self.gate_reports),
            'removed': sum(r.removed_measurements for r in self.gate_reports),
            'dropped': sum(1 for r in self.gate_reports if r.dropped),
        }
        solve_info = self.solve.to_dict() if self.solve else {}
        return {
            'frame': self.frame_id,
            'stamp': round(self.stamp, 6),
            'mode': mode,
            'phase': 'fused' if self.initialized else 'warmup',
            'cost_before': solve_info.get('initial_cost'),
            'cost_after': solve_info.get('final_cost'),
            'iterations': solve_info.get('iterations'),
            'termination': solve_info.get('termination'),
            'solver_failed': bool(self.solve is not None and not self.solve.success),
            'factor_counts': solve_info.get('factor_counts', {}),
            'gnss_active': self.gnss_active,
            'gate': gate,
            'slide': self.slide,
        }


@dataclass
class EstimatorResult:
    records: List[HistoryRecord]
    anchor: Optional[EnuAnchor]
    handoff_alignment: Optional[WorldAlignment]
    diagnostics: List[Dict[str, Any]]
    gate_reports: List[GateReport]
    initialized: bool

    def trajectory(self) -> List[GlobalPose]:
        return export_global_trajectory(self.records, self.anchor, self.handoff_alignment)


def export_global_trajectory(records: Sequence[HistoryRecord], anchor: Optional[EnuAnchor],
                             default_alignment: Optional[WorldAlignment] = None) -> List[GlobalPose]:
    """ENU/ECEF/geodetic poses; records without an alignment use `default_alignment`."""
    poses = []
    for record in sorted(records, key=lambda r: r.stamp):
        alignment = record.alignment or default_alignment or WorldAlignment.identity()
        Rz = yaw_matrix(alignment.yaw)
        enu = Rz @ record.state.p_wl_b + alignment.translation
        rotation = Rz @ record.state.rotation
        ecef = geodetic = None
        if anchor is not None:
            ecef = enu_to_ecef(anchor, enu)
            geodetic = ecef_to_geodetic(ecef)
        poses.append(GlobalPose(record.stamp, enu, rotation, ecef, geodetic))
    return poses


class Estimator:
    """Single-owner state machine fed one image frame at a time."""

    def __init__(self, config: EstimatorConfig, sensors: SensorSetup, bootstrap: NavState):
        self.config = config
        self.sensors = sensors
        self.bootstrap = bootstrap
        self.imu = ImuBuffer()
        self.window = WindowState(config, sensors, self.imu)
        self.gate = GnssGate(config.gating_method, config.gate_thresholds, config.solver)
        self.spp_fixes: List[tuple] = []
        self.diagnostics: List[Dict[str, Any]] = []
        self.handoff_alignment: Optional[WorldAlignment] = None
        self._next_frame_id = 0

    # Frame processing -------------------------------------------------------

    def process_frame(self, frame: FrameInput) -> FrameReport:
        window = self.window
        self.imu.extend(frame.imu)
        frame_id = self._next_frame_id
        self._next_frame_id += 1

        if not window.frames:
            state = replace(self.bootstrap, stamp=frame.stamp)
            window.frames.append(WindowFrame(frame_id, frame.stamp, state, dict(frame.features), True))
            window.start_yaw = yaw_of(state.rotation)
        else:
            prev = window.frames[-1]
            pi = integrate(self.imu.between(prev.stamp, frame.stamp), prev.state.bias_accel,
                           prev.state.bias_gyro, self.sensors.imu_noise)
            predicted = propagate(prev.state, pi, self.sensors.gravity)
            keyframe = is_keyframe(prev.features, frame.features, self.config.keyframe_parallax,
                                   self.config.keyframe_min_tracked)
            window.frames.append(WindowFrame(frame_id, frame.stamp, predicted, dict(frame.features), keyframe, pi))
        window.add_observations(frame_id, frame.features)
        window.triangulate_pending()

        gate_reports = []
        if self.config.mode != MODE_VIO:
            for epoch in frame.gnss_epochs:
                report = self._handle_epoch(epoch)
                if report is not None:
                    gate_reports.append(report)

        self.update_turn_state()
        self.update_prior_lifecycle()
        window.gnss_active = self._gnss_active()

        report = None
        if len(window.frames) >= 2:
            problem = window.build_problem()
            report = solve(problem, self.config.solver)
            if report.success:
                window.write_back(problem.values)
            else:
                logger.warning(f"Frame {frame_id}: solver failed, keeping predicted state")
            window.prune_landmarks()
            window.repropagate_if_needed()

        slide = None
        if len(window.frames) > self.config.window_size:
            decision = slide_keyframe(window) if window.frames[-2].keyframe else slide_non_keyframe(window)
            slide = decision.kind
        self._try_initialize()
        self.imu.discard_before(window.frames[0].stamp)

        frame_report = FrameReport(frame_id, frame.stamp, report, gate_reports, slide,
                                   window.gnss_active, window.initialized)
        self.diagnostics.append(frame_report.to_dict(self.config.mode))
        return frame_report

    def _gnss_active(self):
        frames = self.window.frames
        if len(frames) < 2:
            return True
        return float(np.linalg.norm(frames[-2].state.v_wl_b)) >= self.config.low_speed_threshold

    def update_turn_state(self):
        window = self.window
        if window.turned or not window.frames or window.start_yaw is None:
            return window
        change = abs(wrap_angle(yaw_of(window.frames[-1].state.rotation) - window.start_yaw))
        if change > math.radians(self.config.turn_threshold_deg):
            window.turned = True
            logger.info(f"Turn detected ({math.degrees(change):.1f} deg), extrinsics now estimated")
        return window

    def update_prior_lifecycle(self):
        window = self.window
        if (window.alignment_prior is not None and not window.alignment_prior_removed
                and window.marginalized_epochs > self.config.prior_removal_epochs):
            window.alignment_prior = None
            window.alignment_prior_removed = True
            logger.info(f"Alignment prior removed after {window.marginalized_epochs} marginalized GNSS epochs")
        return window

    # GNSS -------------------------------------------------------------------

    def _last_fix(self):
        return self.spp_fixes[-1][1] if self.spp_fixes else None

    def _handle_epoch(self, epoch: RawGnssEpoch) -> Optional[GateReport]:
        window = self.window
        use_window = window.initialized and self.config.mode == MODE_FUSED
        try:
            report = self.gate.gate(epoch, window=self if use_window else None, guess_ecef=self._last_fix())
        except FusionError as exc:
            logger.warning(f"Epoch {epoch.epoch_index}: gating failed ({exc})")
            return None
        gated = apply_gate(epoch, report)
        if gated is None:
            return report

        fix = report.position_ecef
        if fix is None and (not window.initialized or self.config.mode == MODE_LOOSE):
            try:
                fix = spp_solve(gated, self._last_fix()).position_ecef
            except FusionError:
                fix = None
        if fix is not None:
            self.spp_fixes.append((epoch.stamp, fix))
            if window.anchor is None and len(self.spp_fixes) >= 3:
                window.anchor = make_enu_anchor(select_reference([f for _, f in self.spp_fixes]))
                logger.info("ENU anchor set at the third SPP fix")

        if not window.initialized:
            return report
        frame = window.frame_before(epoch.stamp)
        if frame is None:
            return report
        binding = window.make_binding(frame, epoch.stamp, epoch.epoch_index)
        if self.config.mode == MODE_LOOSE:
            if fix is not None:
                window.entries[epoch.epoch_index] = GnssEntry(gated, binding,
                                                              enu_fix=ecef_to_enu(window.anchor, fix))
            return report
        clock = self._initial_clock(gated, report)
        window.entries[epoch.epoch_index] = GnssEntry(gated, binding, clock)
        return report

    def _initial_clock(self, epoch: RawGnssEpoch, report: Optional[GateReport]) -> ClockState:
        constellations = epoch.constellations
        bias = dict(report.clock_bias) if report else {}
        drift = dict(report.clock_drift) if report else {}
        previous = max(self.window.entries.values(), key=lambda e: e.epoch.stamp, default=None)
        if previous is not None and previous.clock is not None:
            dt = epoch.stamp - previous.epoch.stamp
            for c in previous.clock.constellations:
                bias.setdefault(c, previous.clock.bias_of(c) + previous.clock.drift_of(c) * dt)
                drift.setdefault(c, previous.clock.drift_of(c))
        if any(c not in bias for c in constellations):
            try:
                spp = spp_solve(epoch, self._last_fix())
                for c, value in spp.clock_bias.items():
                    bias.setdefault(c, value)
                vel = velocity_solve(epoch, spp.position_ecef)
                for c, value in vel.clock_drift.items():
                    drift.setdefault(c, value)
            except FusionError:
                pass
        return ClockState(epoch.epoch_index, constellations,
                          tuple(bias.get(c, 0.0) for c in constellations),
                          tuple(drift.get(c, 0.0) for c in constellations))

    def gating_problem(self, epoch: RawGnssEpoch) -> GatingProblem:
        """Window clone with only `epoch`'s GNSS factors, for mixed gating."""
        window = self.window
        frame = window.frame_before(epoch.stamp)
        if frame is None or window.anchor is None or window.alignment is None:
            raise InputError(f"epoch {epoch.epoch_index} cannot be attached to the window")
        binding = window.make_binding(frame, epoch.stamp, epoch.epoch_index)
        clock = self._initial_clock(epoch, None)
        entry = GnssEntry(epoch, binding, clock)
        factors = window.gnss_factors(entry)
        problem = window.build_problem(include_gnss=False, extra_blocks={clock_key(epoch.epoch_index): clock},
                                       extra_factors=factors)
        return GatingProblem(problem, factors)

    # Initialization ---------------------------------------------------------

    def local_trajectory(self) -> List[TimedPose]:
        records = [(r.stamp, r.state) for r in self.window.history]
        records += [(f.stamp, f.state) for f in self.window.frames]
        records.sort(key=lambda item: item[0])
        return [TimedPose(t, s.p_wl_b.copy(), s.rotation) for t, s in records]

    def _alignment_point(self, pose: TimedPose):
        if not self.config.alignment_lever_arm:
            return pose.position
        return pose.position + pose.rotation @ self.sensors.lever_arm.translation_g_in_b

    def _try_initialize(self):
        window = self.window
        if window.initialized or self.config.mode == MODE_VIO or window.anchor is None:
            return False
        local = self.local_trajectory()
        if len(local) < 2:
            return False
        stamps = np.array([p.stamp for p in local])
        positions = np.array([self._alignment_point(p) for p in local])
        fix_stamps = np.array([t for t, _ in self.spp_fixes])
        enu = np.array([ecef_to_enu(window.anchor, f) for _, f in self.spp_fixes])
        local_pts, mask = interpolate_positions(stamps, positions, fix_stamps)
        if not ready_for_alignment(local_pts, self.config.min_alignment_pairs, self.config.min_alignment_extent):
            return False
        enu = enu[mask]
        estimate = align_5dof(enu, local_pts)
        if abs(estimate.scale - 1.0) > self.config.scale_correction_threshold:
            logger.info(f"Correcting local scale by {estimate.scale:.4f}")
            window.apply_scale(estimate.scale)
            translation = estimate.translation
        else:
            translation = translation_for_scale(enu, local_pts, estimate.yaw, 1.0)
        alignment = WorldAlignment(estimate.yaw, translation)
        window.alignment = alignment
        window.alignment_prior = alignment
        window.initialized = True
        self.handoff_alignment = alignment
        logger.info(f"GNSS alignment initialized: yaw {math.degrees(estimate.yaw):.2f} deg, "
                    f"scale {estimate.scale:.4f}, rms {estimate.rms:.2f} m over {len(enu)} fixes")
        return True

    # Drivers ----------------------------------------------------------------

    def run_vio_warmup(self, frames: Iterable[FrameInput]) -> List[TimedPose]:
        """Process frames without GNSS and return the local trajectory."""
        if self.window.initialized:
            raise InputError("warm-up requested after initialization")
        for frame in frames:
            self.process_frame(replace(frame, gnss_epochs=[]))
        return self.local_trajectory()

    def finish(self) -> EstimatorResult:
        window = self.window
        for frame in window.frames:
            window.history.append(HistoryRecord(frame.stamp, frame.state, window.alignment))
        window.frames = []
        return EstimatorResult(
            records=list(window.history),
            anchor=window.anchor,
            handoff_alignment=self.handoff_alignment,
            diagnostics=list(self.diagnostics),
            gate_reports=list(self.gate.reports),
            initialized=window.initialized,
        )


def run_estimator(dataset, config: EstimatorConfig, progress=True) -> EstimatorResult:
    """Feed a whole dataset through a fresh estimator."""
    estimator = Estimator(config, dataset.sensors, dataset.bootstrap)
    frames = list(dataset.frame_inputs())
    for frame in tqdm(frames, desc=f"{config.mode} estimation", disable=not progress):
        estimator.process_frame(frame)
    result = estimator.finish()
    if config.mode != MODE_VIO and not result.initialized:
        logger.warning("GNSS alignment never initialized; trajectory stays in the local frame")
    return result
