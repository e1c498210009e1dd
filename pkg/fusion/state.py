"""Estimated parameter blocks and their manifold operations.

Every block type exposes `tangent_dim`, `retract(delta)` and
`local_diff(other)` (self minus other in tangent coordinates). The solver
and the marginal prior only rely on this protocol.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Tuple

import numpy as np

from fusion.lie import (
    IDENTITY_QUAT,
    quat_conj,
    quat_exp,
    quat_log,
    quat_mul,
    quat_normalize,
    quat_to_rot,
    wrap_angle,
    yaw_matrix,
)
from fusion.gnss_model import SPEED_OF_LIGHT


# Tangent layout of a NavState increment.
P = slice(0, 3)
V = slice(3, 6)
THETA = slice(6, 9)
BA = slice(9, 12)
BG = slice(12, 15)
NAV_DIM = 15


def _vec(values):
    return np.asarray(values, dtype=float).reshape(3)


@dataclass(frozen=True)
class NavState:
    """IMU pose, velocity and biases in the local world frame."""

    p_wl_b: np.ndarray
    v_wl_b: np.ndarray
    q_wl_b: np.ndarray
    bias_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    stamp: float = 0.0

    tangent_dim = NAV_DIM

    @classmethod
    def identity(cls, stamp=0.0):
        return cls(np.zeros(3), np.zeros(3), IDENTITY_QUAT.copy(), stamp=stamp)

    @property
    def rotation(self):
        return quat_to_rot(self.q_wl_b)

    def retract(self, delta):
        delta = np.asarray(delta, dtype=float)
        return NavState(
            p_wl_b=self.p_wl_b + delta[P],
            v_wl_b=self.v_wl_b + delta[V],
            q_wl_b=quat_normalize(quat_mul(self.q_wl_b, quat_exp(delta[THETA]))),
            bias_accel=self.bias_accel + delta[BA],
            bias_gyro=self.bias_gyro + delta[BG],
            stamp=self.stamp,
        )

    def local_diff(self, other):
        out = np.empty(NAV_DIM)
        out[P] = self.p_wl_b - other.p_wl_b
        out[V] = self.v_wl_b - other.v_wl_b
        out[THETA] = quat_log(quat_mul(quat_conj(other.q_wl_b), self.q_wl_b))
        out[BA] = self.bias_accel - other.bias_accel
        out[BG] = self.bias_gyro - other.bias_gyro
        return out

    def with_scale(self, scale):
        return replace(self, p_wl_b=scale * self.p_wl_b, v_wl_b=scale * self.v_wl_b)


def retract(x, delta):
    return x.retract(delta)


def local_diff(x2, x1):
    return x2.local_diff(x1)


@dataclass
class LandmarkDepth:
    """Inverse-depth landmark hosted by the first window frame observing it.

    `observations` maps frame ids to unit-plane coordinates (2-vectors).
    """

    track_id: int
    inverse_depth: float
    host_frame: int
    observations: Dict[int, np.ndarray] = field(default_factory=dict)
    triangulated: bool = False

    tangent_dim = 1

    @property
    def host_observation(self):
        return self.observations[self.host_frame]

    def retract(self, delta):
        return replace(self, inverse_depth=self.inverse_depth + float(np.asarray(delta).reshape(-1)[0]))

    def local_diff(self, other):
        return np.array([self.inverse_depth - other.inverse_depth])


@dataclass(frozen=True)
class Extrinsics:
    """Camera pose in the IMU body frame. Tangent order: [dp, dtheta]."""

    rotation_b_from_c: np.ndarray
    translation_c_in_b: np.ndarray

    tangent_dim = 6

    @property
    def rotation(self):
        return quat_to_rot(self.rotation_b_from_c)

    def retract(self, delta):
        delta = np.asarray(delta, dtype=float)
        return Extrinsics(
            rotation_b_from_c=quat_normalize(quat_mul(self.rotation_b_from_c, quat_exp(delta[3:6]))),
            translation_c_in_b=self.translation_c_in_b + delta[0:3],
        )

    def local_diff(self, other):
        return np.concatenate([
            self.translation_c_in_b - other.translation_c_in_b,
            quat_log(quat_mul(quat_conj(other.rotation_b_from_c), self.rotation_b_from_c)),
        ])


@dataclass(frozen=True)
class WorldAlignment:
    """Yaw-only rotation plus translation from the local frame to ENU.

    Tangent order: [dyaw, dtx, dty, dtz].
    """

    yaw: float
    translation: np.ndarray

    tangent_dim = 4

    def __post_init__(self):
        object.__setattr__(self, 'yaw', wrap_angle(self.yaw))
        object.__setattr__(self, 'translation', _vec(self.translation))

    @classmethod
    def identity(cls):
        return cls(0.0, np.zeros(3))

    def retract(self, delta):
        delta = np.asarray(delta, dtype=float)
        return WorldAlignment(self.yaw + delta[0], self.translation + delta[1:4])

    def local_diff(self, other):
        return np.concatenate([[wrap_angle(self.yaw - other.yaw)], self.translation - other.translation])

    def apply(self, p_wl):
        return yaw_rotation(self) @ np.asarray(p_wl, dtype=float) + self.translation

    def to_dict(self):
        return {'yaw': self.yaw, 'translation': self.translation.tolist()}


def yaw_rotation(a):
    return yaw_matrix(a.yaw)


@dataclass(frozen=True)
class ClockState:
    """Receiver clock bias (s) and drift (s/s) per constellation of one epoch.

    The tangent space is expressed in meters and m/s (c times the change),
    ordered [biases..., drifts...] following `constellations`.
    """

    epoch_index: int
    constellations: Tuple[str, ...]
    bias: Tuple[float, ...]
    drift: Tuple[float, ...]

    def __post_init__(self):
        n = len(self.constellations)
        if len(self.bias) != n or len(self.drift) != n:
            raise ValueError("clock state needs one bias and one drift per constellation")

    @classmethod
    def zeros(cls, epoch_index, constellations):
        constellations = tuple(constellations)
        n = len(constellations)
        return cls(epoch_index, constellations, (0.0,) * n, (0.0,) * n)

    @property
    def tangent_dim(self):
        return 2 * len(self.constellations)

    def index_of(self, constellation):
        return self.constellations.index(constellation)

    def bias_of(self, constellation):
        return self.bias[self.index_of(constellation)]

    def drift_of(self, constellation):
        return self.drift[self.index_of(constellation)]

    def retract(self, delta):
        delta = np.asarray(delta, dtype=float)
        n = len(self.constellations)
        bias = tuple(b + d / SPEED_OF_LIGHT for b, d in zip(self.bias, delta[:n]))
        drift = tuple(r + d / SPEED_OF_LIGHT for r, d in zip(self.drift, delta[n:]))
        return replace(self, bias=bias, drift=drift)

    def local_diff(self, other):
        return SPEED_OF_LIGHT * np.concatenate([
            np.subtract(self.bias, other.bias),
            np.subtract(self.drift, other.drift),
        ])

    def to_dict(self):
        return {
            'epoch_index': self.epoch_index,
            'bias': dict(zip(self.constellations, self.bias)),
            'drift': dict(zip(self.constellations, self.drift)),
        }


@dataclass(frozen=True)
class LeverArm:
    """Antenna position in the body frame; calibrated, never optimized."""

    translation_g_in_b: np.ndarray = field(default_factory=lambda: np.zeros(3))


EXTRINSICS_KEY = ('ext',)
ALIGNMENT_KEY = ('align',)


def frame_key(frame_id):
    return ('x', frame_id)


def landmark_key(track_id):
    return ('lm', track_id)


def clock_key(epoch_index):
    return ('clk', epoch_index)
