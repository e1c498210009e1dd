"""Residuals and analytic Jacobians for every cost term of the window.

All residuals are returned already multiplied by the square root of their
information. Jacobians are taken with respect to the tangent coordinates of
each block (see fusion.state for the layouts).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fusion.gnss_model import SPEED_OF_LIGHT, SatelliteState, SatObs
from fusion.imu_preintegration import ALPHA, BETA, GravityVec, Preintegration
from fusion.lie import (
    quat_conj,
    quat_exp,
    quat_log,
    quat_mul,
    quat_to_rot,
    right_jacobian,
    right_jacobian_inv,
    skew,
    yaw_matrix,
    yaw_matrix_derivative,
)
from fusion.models import Factor, FactorEval
from fusion.state import BA, BG, NAV_DIM, P, THETA, V, LeverArm, WorldAlignment


PSEUDORANGE_WEIGHT = 1.0
DOPPLER_WEIGHT = 4.0
MIN_CAMERA_DEPTH = 1e-3


class HuberLoss:
    """rho(s) for s = squared residual norm, with threshold delta."""

    def __init__(self, delta=1.0):
        self.delta = float(delta)

    def evaluate(self, squared_norm):
        d2 = self.delta * self.delta
        if squared_norm <= d2:
            return squared_norm, 1.0
        root = math.sqrt(squared_norm)
        return 2.0 * self.delta * root - d2, self.delta / root


@dataclass(frozen=True)
class GnssFactorBinding:
    """Ties one GNSS epoch to the image frame just before it."""

    frame_id: int
    epoch_index: int
    preintegration: Preintegration
    gyro_at_epoch: np.ndarray
    lever: LeverArm
    gravity: GravityVec

    @property
    def epoch_stamp(self):
        return self.preintegration.end_stamp


def _antenna_with_jacobians(x_k, binding):
    """Antenna position/velocity in the local frame and their 3x15 Jacobians."""
    pi = binding.preintegration
    dba = x_k.bias_accel - pi.bias_accel
    dbg = x_k.bias_gyro - pi.bias_gyro
    J = pi.jacobian
    phi = J[THETA, BG] @ dbg
    alpha = pi.alpha + J[ALPHA, BA] @ dba + J[ALPHA, BG] @ dbg
    beta = pi.beta + J[BETA, BA] @ dba + J[BETA, BG] @ dbg
    R_gamma = quat_to_rot(quat_mul(pi.gamma, quat_exp(phi)))
    jr_phi = right_jacobian(phi)

    R = x_k.rotation
    dt = pi.duration
    g = binding.gravity.g_wl
    lever = binding.lever.translation_g_in_b
    omega = np.asarray(binding.gyro_at_epoch, dtype=float) - x_k.bias_gyro

    a_term = alpha + R_gamma @ lever
    position = x_k.p_wl_b + x_k.v_wl_b * dt + R @ a_term - 0.5 * g * dt * dt
    Jp = np.zeros((3, NAV_DIM))
    Jp[:, P] = np.eye(3)
    Jp[:, V] = np.eye(3) * dt
    Jp[:, THETA] = -R @ skew(a_term)
    Jp[:, BA] = R @ J[ALPHA, BA]
    Jp[:, BG] = R @ (J[ALPHA, BG] - R_gamma @ skew(lever) @ jr_phi @ J[THETA, BG])

    s = skew(lever) @ omega
    m_term = beta - R_gamma @ s
    velocity = x_k.v_wl_b + R @ m_term - g * dt
    Jv = np.zeros((3, NAV_DIM))
    Jv[:, V] = np.eye(3)
    Jv[:, THETA] = -R @ skew(m_term)
    Jv[:, BA] = R @ J[BETA, BA]
    Jv[:, BG] = R @ (J[BETA, BG] + R_gamma @ skew(s) @ jr_phi @ J[THETA, BG] + R_gamma @ skew(lever))
    return position, velocity, Jp, Jv


def antenna_ecef(x_k, alignment: WorldAlignment, anchor, binding):
    """Receiver antenna position and velocity in ECEF."""
    p_wl, v_wl, _, _ = _antenna_with_jacobians(x_k, binding)
    A = anchor.rotation_ecef_from_enu @ yaw_matrix(alignment.yaw)
    return (A @ p_wl + anchor.rotation_ecef_from_enu @ alignment.translation + anchor.origin_ecef,
            A @ v_wl)


def _clock_jacobian(clock, constellation, drift):
    n = len(clock.constellations)
    J = np.zeros((1, 2 * n))
    J[0, clock.index_of(constellation) + (n if drift else 0)] = 1.0
    return J


def eval_pseudorange(x_k, alignment, anchor, clock, binding, sat: SatelliteState, obs: SatObs,
                     weight=PSEUDORANGE_WEIGHT) -> FactorEval:
    p_wl, _, Jp, _ = _antenna_with_jacobians(x_k, binding)
    R_eg = anchor.rotation_ecef_from_enu
    Rz = yaw_matrix(alignment.yaw)
    p_ecef = R_eg @ (Rz @ p_wl + alignment.translation) + anchor.origin_ecef
    diff = sat.position_ecef - p_ecef
    rng = float(np.linalg.norm(diff))
    los = diff / rng
    constellation = sat.constellation.value
    residual = (rng + SPEED_OF_LIGHT * clock.bias_of(constellation)
                - SPEED_OF_LIGHT * sat.clock_bias - obs.pseudorange)

    de_dp = -los.reshape(1, 3)
    J_x = de_dp @ R_eg @ Rz @ Jp
    J_align = np.hstack([de_dp @ R_eg @ yaw_matrix_derivative(alignment.yaw) @ p_wl.reshape(3, 1),
                         de_dp @ R_eg])
    J_clock = _clock_jacobian(clock, constellation, drift=False)
    w = math.sqrt(weight)
    return FactorEval(np.array([w * residual]), [w * J_x, w * J_align, w * J_clock])


def eval_doppler(x_k, alignment, anchor, clock, binding, sat: SatelliteState, obs: SatObs,
                 weight=DOPPLER_WEIGHT) -> FactorEval:
    p_wl, v_wl, Jp, Jv = _antenna_with_jacobians(x_k, binding)
    R_eg = anchor.rotation_ecef_from_enu
    Rz = yaw_matrix(alignment.yaw)
    dRz = yaw_matrix_derivative(alignment.yaw)
    p_ecef = R_eg @ (Rz @ p_wl + alignment.translation) + anchor.origin_ecef
    v_ecef = R_eg @ Rz @ v_wl
    diff = sat.position_ecef - p_ecef
    rng = float(np.linalg.norm(diff))
    los = diff / rng
    rel = sat.velocity_ecef - v_ecef
    constellation = sat.constellation.value
    predicted = (float(los @ rel) + SPEED_OF_LIGHT * clock.drift_of(constellation)
                 - SPEED_OF_LIGHT * sat.clock_drift)
    residual = predicted + obs.wavelength * obs.doppler

    # d(los)/d(p_ecef) = -(I - l l^T) / r
    de_dp = (-(rel - los * (los @ rel)) / rng).reshape(1, 3)
    de_dv = -los.reshape(1, 3)
    J_x = de_dp @ R_eg @ Rz @ Jp + de_dv @ R_eg @ Rz @ Jv
    J_yaw = de_dp @ R_eg @ dRz @ p_wl.reshape(3, 1) + de_dv @ R_eg @ dRz @ v_wl.reshape(3, 1)
    J_align = np.hstack([J_yaw, de_dp @ R_eg])
    J_clock = _clock_jacobian(clock, constellation, drift=True)
    w = math.sqrt(weight)
    return FactorEval(np.array([w * residual]), [w * J_x, w * J_align, w * J_clock])


def eval_position_fix(x_k, alignment, binding, enu_fix, sigma) -> FactorEval:
    """Loosely coupled ENU position constraint on the extrapolated antenna."""
    p_wl, _, Jp, _ = _antenna_with_jacobians(x_k, binding)
    Rz = yaw_matrix(alignment.yaw)
    residual = Rz @ p_wl + alignment.translation - np.asarray(enu_fix, dtype=float)
    J_align = np.hstack([(yaw_matrix_derivative(alignment.yaw) @ p_wl).reshape(3, 1), np.eye(3)])
    w = 1.0 / sigma
    return FactorEval(w * residual, [w * Rz @ Jp, w * J_align])


def eval_reprojection(host_state, target_state, extrinsics, landmark, obs_unit_plane,
                      sqrt_info=1.0) -> FactorEval:
    """Inverse-depth two-frame reprojection error on the unit plane."""
    Ric = extrinsics.rotation
    tic = extrinsics.translation_c_in_b
    Ri, Pi = host_state.rotation, host_state.p_wl_b
    Rj, Pj = target_state.rotation, target_state.p_wl_b
    inv_depth = landmark.inverse_depth
    u_i, v_i = landmark.host_observation
    pts_i = np.array([u_i, v_i, 1.0])

    pts_cam_i = pts_i / inv_depth
    pts_imu_i = Ric @ pts_cam_i + tic
    pts_w = Ri @ pts_imu_i + Pi
    pts_imu_j = Rj.T @ (pts_w - Pj)
    pts_cam_j = Ric.T @ (pts_imu_j - tic)
    x, y, z = pts_cam_j
    obs = np.asarray(obs_unit_plane, dtype=float)
    valid = z > MIN_CAMERA_DEPTH and inv_depth > 0.0
    if not valid:
        zero = np.zeros(2)
        return FactorEval(zero, [np.zeros((2, NAV_DIM)), np.zeros((2, NAV_DIM)),
                                 np.zeros((2, 6)), np.zeros((2, 1))], valid=False)

    residual = np.array([x / z, y / z]) - obs
    reduce = np.array([[1.0 / z, 0.0, -x / (z * z)], [0.0, 1.0 / z, -y / (z * z)]])
    to_cam_j = Ric.T @ Rj.T

    J_host = np.zeros((2, NAV_DIM))
    J_host[:, P] = reduce @ to_cam_j
    J_host[:, THETA] = reduce @ to_cam_j @ (-Ri @ skew(pts_imu_i))

    J_target = np.zeros((2, NAV_DIM))
    J_target[:, P] = reduce @ (-to_cam_j)
    J_target[:, THETA] = reduce @ Ric.T @ skew(pts_imu_j)

    chain = to_cam_j @ Ri @ Ric
    J_ext = np.zeros((2, 6))
    J_ext[:, 0:3] = reduce @ Ric.T @ (Rj.T @ Ri - np.eye(3))
    J_ext[:, 3:6] = reduce @ (-chain @ skew(pts_cam_i) + skew(pts_cam_j))

    J_lm = reduce @ chain @ (-pts_i / (inv_depth * inv_depth))
    s = sqrt_info
    return FactorEval(s * residual, [s * J_host, s * J_target, s * J_ext, s * J_lm.reshape(2, 1)])


def eval_imu(x_i, x_j, pi: Preintegration, gravity: GravityVec) -> FactorEval:
    dba = x_i.bias_accel - pi.bias_accel
    dbg = x_i.bias_gyro - pi.bias_gyro
    J = pi.jacobian
    phi = J[THETA, BG] @ dbg
    alpha = pi.alpha + J[ALPHA, BA] @ dba + J[ALPHA, BG] @ dbg
    beta = pi.beta + J[BETA, BA] @ dba + J[BETA, BG] @ dbg
    gamma = quat_mul(pi.gamma, quat_exp(phi))

    dt = pi.duration
    g = gravity.g_wl
    Ri_T = x_i.rotation.T
    dp_world = x_j.p_wl_b - x_i.p_wl_b - x_i.v_wl_b * dt + 0.5 * g * dt * dt
    dv_world = x_j.v_wl_b - x_i.v_wl_b + g * dt
    err_q = quat_mul(quat_conj(gamma), quat_mul(quat_conj(x_i.q_wl_b), x_j.q_wl_b))

    r = np.empty(NAV_DIM)
    r[P] = Ri_T @ dp_world - alpha
    r[V] = Ri_T @ dv_world - beta
    r[THETA] = quat_log(err_q)
    r[BA] = x_j.bias_accel - x_i.bias_accel
    r[BG] = x_j.bias_gyro - x_i.bias_gyro

    jr_inv = right_jacobian_inv(r[THETA])
    E = quat_to_rot(err_q)
    R_rel = x_j.rotation.T @ x_i.rotation

    Ji = np.zeros((NAV_DIM, NAV_DIM))
    Ji[P, P] = -Ri_T
    Ji[P, V] = -Ri_T * dt
    Ji[P, THETA] = skew(Ri_T @ dp_world)
    Ji[P, BA] = -J[ALPHA, BA]
    Ji[P, BG] = -J[ALPHA, BG]
    Ji[V, V] = -Ri_T
    Ji[V, THETA] = skew(Ri_T @ dv_world)
    Ji[V, BA] = -J[BETA, BA]
    Ji[V, BG] = -J[BETA, BG]
    Ji[THETA, THETA] = -jr_inv @ R_rel
    Ji[THETA, BG] = -jr_inv @ E.T @ right_jacobian(phi) @ J[THETA, BG]
    Ji[BA, BA] = -np.eye(3)
    Ji[BG, BG] = -np.eye(3)

    Jj = np.zeros((NAV_DIM, NAV_DIM))
    Jj[P, P] = Ri_T
    Jj[V, V] = Ri_T
    Jj[THETA, THETA] = jr_inv
    Jj[BA, BA] = np.eye(3)
    Jj[BG, BG] = np.eye(3)

    S = pi.sqrt_information
    return FactorEval(S @ r, [S @ Ji, S @ Jj])


def eval_alignment_prior(alignment: WorldAlignment, prior_value: WorldAlignment, prior_weight) -> FactorEval:
    """`prior_weight` is the diagonal information (yaw, tx, ty, tz)."""
    sqrt_w = np.sqrt(np.asarray(prior_weight, dtype=float))
    residual = sqrt_w * alignment.local_diff(prior_value)
    return FactorEval(residual, [np.diag(sqrt_w)])


class ImuFactor(Factor):
    kind = 'imu'

    def __init__(self, key_i, key_j, preintegration, gravity):
        super().__init__((key_i, key_j))
        self.preintegration = preintegration
        self.gravity = gravity

    def evaluate(self, values):
        return eval_imu(values[self.keys[0]], values[self.keys[1]], self.preintegration, self.gravity)


class ReprojectionFactor(Factor):
    kind = 'visual'

    def __init__(self, host_key, target_key, extrinsics_key, landmark_key, observation, sqrt_info,
                 huber_delta=1.0):
        super().__init__((host_key, target_key, extrinsics_key, landmark_key))
        self.observation = np.asarray(observation, dtype=float)
        self.sqrt_info = sqrt_info
        self.loss = HuberLoss(huber_delta)

    def evaluate(self, values):
        host, target, ext, lm = (values[k] for k in self.keys)
        return eval_reprojection(host, target, ext, lm, self.observation, self.sqrt_info)


class _GnssFactor(Factor):
    def __init__(self, frame_key, alignment_key, clock_key, anchor, binding, sat, obs, weight):
        super().__init__((frame_key, alignment_key, clock_key))
        self.anchor = anchor
        self.binding = binding
        self.sat = sat
        self.obs = obs
        self.weight = weight

    @property
    def sat_id(self):
        return self.obs.sat_id


class PseudorangeFactor(_GnssFactor):
    kind = 'pseudorange'

    def __init__(self, frame_key, alignment_key, clock_key, anchor, binding, sat, obs,
                 weight=PSEUDORANGE_WEIGHT):
        super().__init__(frame_key, alignment_key, clock_key, anchor, binding, sat, obs, weight)

    def evaluate(self, values):
        x, align, clock = (values[k] for k in self.keys)
        return eval_pseudorange(x, align, self.anchor, clock, self.binding, self.sat, self.obs, self.weight)


class DopplerFactor(_GnssFactor):
    kind = 'doppler'

    def __init__(self, frame_key, alignment_key, clock_key, anchor, binding, sat, obs,
                 weight=DOPPLER_WEIGHT):
        super().__init__(frame_key, alignment_key, clock_key, anchor, binding, sat, obs, weight)

    def evaluate(self, values):
        x, align, clock = (values[k] for k in self.keys)
        return eval_doppler(x, align, self.anchor, clock, self.binding, self.sat, self.obs, self.weight)


class PositionFixFactor(Factor):
    kind = 'position_fix'

    def __init__(self, frame_key, alignment_key, binding, enu_fix, sigma):
        super().__init__((frame_key, alignment_key))
        self.binding = binding
        self.enu_fix = np.asarray(enu_fix, dtype=float)
        self.sigma = sigma

    def evaluate(self, values):
        return eval_position_fix(values[self.keys[0]], values[self.keys[1]], self.binding,
                                 self.enu_fix, self.sigma)


class AlignmentPriorFactor(Factor):
    kind = 'alignment_prior'

    def __init__(self, alignment_key, prior_value, prior_weight):
        super().__init__((alignment_key,))
        self.prior_value = prior_value
        self.prior_weight = np.asarray(prior_weight, dtype=float)

    def evaluate(self, values):
        return eval_alignment_prior(values[self.keys[0]], self.prior_value, self.prior_weight)
