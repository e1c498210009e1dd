"""Midpoint IMU preintegration, bias correction and GNSS-epoch extrapolation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Sequence, Tuple

import numpy as np
from scipy import linalg

from fusion.errors import InputError
from fusion.lie import (
    IDENTITY_QUAT,
    quat_exp,
    quat_mul,
    quat_normalize,
    quat_to_rot,
    right_jacobian,
    skew,
)
from fusion.state import BA, BG, NavState, P, THETA, V


logger = logging.getLogger(__name__)

# Rows/cols of the preintegration covariance and Jacobian: [alpha, beta, theta, ba, bg].
ALPHA = P
BETA = V

DEFAULT_GRAVITY = 9.81
_STAMP_TOLERANCE = 1e-9


@dataclass(frozen=True)
class GravityVec:
    magnitude: float = DEFAULT_GRAVITY

    @property
    def g_wl(self):
        return np.array([0.0, 0.0, self.magnitude])


@dataclass(frozen=True)
class ImuSample:
    gyro: np.ndarray
    accel: np.ndarray
    stamp: float


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time noise densities."""

    gyro_noise: float = 1e-4
    accel_noise: float = 1e-3
    gyro_walk: float = 1e-5
    accel_walk: float = 1e-4

    @classmethod
    def from_dict(cls, data):
        data = data or {}
        return cls(**{k: float(data[k]) for k in ('gyro_noise', 'accel_noise', 'gyro_walk', 'accel_walk') if k in data})

    def to_dict(self):
        return {
            'gyro_noise': self.gyro_noise,
            'accel_noise': self.accel_noise,
            'gyro_walk': self.gyro_walk,
            'accel_walk': self.accel_walk,
        }


@dataclass(frozen=True)
class Preintegration:
    """Relative motion summary between two stamps.

    `jacobian` is the full 15x15 sensitivity of the summary; the bias block
    (`jacobian_bias`) drives first-order bias correction.
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    covariance: np.ndarray
    jacobian: np.ndarray
    duration: float
    bias_accel: np.ndarray
    bias_gyro: np.ndarray
    samples: Tuple[ImuSample, ...] = field(default=(), repr=False)
    noise: ImuNoise = field(default_factory=ImuNoise, repr=False)

    @property
    def jacobian_bias(self):
        return self.jacobian[:, 9:15]

    @property
    def start_stamp(self):
        return self.samples[0].stamp if self.samples else 0.0

    @property
    def end_stamp(self):
        return self.samples[-1].stamp if self.samples else 0.0

    @cached_property
    def sqrt_information(self):
        """Upper-triangular S with S^T S = covariance^-1."""
        cov = 0.5 * (self.covariance + self.covariance.T)
        try:
            factor = linalg.cho_factor(cov, lower=True)
        except linalg.LinAlgError:
            logger.warning("Preintegration covariance not positive definite, regularizing")
            cov = cov + 1e-12 * np.eye(cov.shape[0])
            factor = linalg.cho_factor(cov, lower=True)
        info = linalg.cho_solve(factor, np.eye(cov.shape[0]))
        info = 0.5 * (info + info.T)
        return linalg.cholesky(info, lower=True).T

    def corrected(self, bias_accel, bias_gyro):
        return bias_corrected(self, np.asarray(bias_accel) - self.bias_accel,
                              np.asarray(bias_gyro) - self.bias_gyro)

    def repropagate(self, bias_accel, bias_gyro):
        return integrate(self.samples, bias_accel, bias_gyro, self.noise)


def _identity(bias_accel, bias_gyro, samples, noise):
    return Preintegration(
        alpha=np.zeros(3),
        beta=np.zeros(3),
        gamma=IDENTITY_QUAT.copy(),
        covariance=np.zeros((15, 15)),
        jacobian=np.eye(15),
        duration=0.0,
        bias_accel=bias_accel,
        bias_gyro=bias_gyro,
        samples=tuple(samples),
        noise=noise,
    )


def integrate(samples: Sequence[ImuSample], bias_accel, bias_gyro, noise=None) -> Preintegration:
    noise = noise or ImuNoise()
    ba = np.asarray(bias_accel, dtype=float).copy()
    bg = np.asarray(bias_gyro, dtype=float).copy()
    samples = list(samples)
    for prev, curr in zip(samples, samples[1:]):
        if not curr.stamp > prev.stamp:
            raise InputError(f"IMU stamps not strictly increasing at {curr.stamp:.6f}")
    if len(samples) < 2:
        return _identity(ba, bg, samples, noise)

    alpha = np.zeros(3)
    beta = np.zeros(3)
    q = IDENTITY_QUAT.copy()
    R = np.eye(3)
    cov = np.zeros((15, 15))
    jac = np.eye(15)
    eye3 = np.eye(3)

    for s0, s1 in zip(samples, samples[1:]):
        dt = s1.stamp - s0.stamp
        w = 0.5 * (s0.gyro + s1.gyro) - bg
        dq = quat_exp(w * dt)
        dR = quat_to_rot(dq)
        q1 = quat_normalize(quat_mul(q, dq))
        R1 = quat_to_rot(q1)
        a0 = s0.accel - ba
        a1 = s1.accel - ba
        acc = 0.5 * (R @ a0 + R1 @ a1)

        jr = right_jacobian(w * dt)
        ra0 = R @ skew(a0)
        ra1 = R1 @ skew(a1) @ dR.T
        gyro_coupling = R1 @ skew(a1) @ jr * dt

        F = np.eye(15)
        F[ALPHA, BETA] = eye3 * dt
        F[ALPHA, THETA] = -0.25 * dt * dt * (ra0 + ra1)
        F[ALPHA, BA] = -0.25 * dt * dt * (R + R1)
        F[ALPHA, BG] = 0.25 * dt * dt * gyro_coupling
        F[BETA, THETA] = -0.5 * dt * (ra0 + ra1)
        F[BETA, BA] = -0.5 * dt * (R + R1)
        F[BETA, BG] = 0.5 * dt * gyro_coupling
        F[THETA, THETA] = dR.T
        F[THETA, BG] = -jr * dt

        # Noise inputs: [accel0, gyro0, accel1, gyro1, accel walk, gyro walk].
        G = np.zeros((15, 18))
        G[ALPHA, 0:3] = 0.25 * R * dt * dt
        G[ALPHA, 3:6] = -0.125 * dt * dt * gyro_coupling
        G[ALPHA, 6:9] = 0.25 * R1 * dt * dt
        G[ALPHA, 9:12] = G[ALPHA, 3:6]
        G[BETA, 0:3] = 0.5 * R * dt
        G[BETA, 3:6] = -0.25 * dt * gyro_coupling
        G[BETA, 6:9] = 0.5 * R1 * dt
        G[BETA, 9:12] = G[BETA, 3:6]
        G[THETA, 3:6] = 0.5 * jr * dt
        G[THETA, 9:12] = 0.5 * jr * dt
        G[BA, 12:15] = eye3 * dt
        G[BG, 15:18] = eye3 * dt
        q_diag = np.repeat([
            noise.accel_noise ** 2, noise.gyro_noise ** 2,
            noise.accel_noise ** 2, noise.gyro_noise ** 2,
            noise.accel_walk ** 2, noise.gyro_walk ** 2,
        ], 3) / dt

        cov = F @ cov @ F.T + (G * q_diag) @ G.T
        cov = 0.5 * (cov + cov.T)
        jac = F @ jac

        alpha = alpha + beta * dt + 0.5 * acc * dt * dt
        beta = beta + acc * dt
        q, R = q1, R1

    return Preintegration(
        alpha=alpha,
        beta=beta,
        gamma=q,
        covariance=cov,
        jacobian=jac,
        duration=samples[-1].stamp - samples[0].stamp,
        bias_accel=ba,
        bias_gyro=bg,
        samples=tuple(samples),
        noise=noise,
    )


def bias_corrected(pi: Preintegration, delta_ba, delta_bg):
    """First-order bias update; accurate while the deltas stay small (~0.1)."""
    delta_ba = np.asarray(delta_ba, dtype=float)
    delta_bg = np.asarray(delta_bg, dtype=float)
    J = pi.jacobian
    alpha = pi.alpha + J[ALPHA, BA] @ delta_ba + J[ALPHA, BG] @ delta_bg
    beta = pi.beta + J[BETA, BA] @ delta_ba + J[BETA, BG] @ delta_bg
    gamma = quat_normalize(quat_mul(pi.gamma, quat_exp(J[THETA, BG] @ delta_bg)))
    return alpha, beta, gamma


def propagate(x: NavState, pi: Preintegration, gravity: GravityVec) -> NavState:
    """Predict the state at the end of the preintegrated interval."""
    alpha, beta, gamma = pi.corrected(x.bias_accel, x.bias_gyro)
    R = x.rotation
    dt = pi.duration
    g = gravity.g_wl
    return NavState(
        p_wl_b=x.p_wl_b + x.v_wl_b * dt - 0.5 * g * dt * dt + R @ alpha,
        v_wl_b=x.v_wl_b - g * dt + R @ beta,
        q_wl_b=quat_normalize(quat_mul(x.q_wl_b, gamma)),
        bias_accel=x.bias_accel.copy(),
        bias_gyro=x.bias_gyro.copy(),
        stamp=x.stamp + dt,
    )


def extrapolate_to_epoch(x_k: NavState, pi: Preintegration, lever, gyro_at_epoch, gravity: GravityVec):
    """Antenna position and velocity in the local frame at a GNSS epoch."""
    alpha, beta, gamma = pi.corrected(x_k.bias_accel, x_k.bias_gyro)
    R = x_k.rotation
    R_gamma = quat_to_rot(gamma)
    p_lever = lever.translation_g_in_b
    dt = pi.duration
    g = gravity.g_wl
    omega = np.asarray(gyro_at_epoch, dtype=float) - x_k.bias_gyro
    position = x_k.p_wl_b + x_k.v_wl_b * dt + R @ (alpha + R_gamma @ p_lever) - 0.5 * g * dt * dt
    velocity = x_k.v_wl_b + R @ (beta - R_gamma @ skew(p_lever) @ omega) - g * dt
    return position, velocity


class ImuBuffer:
    """Time-ordered IMU history with interval extraction."""

    def __init__(self, samples: Sequence[ImuSample] = ()):
        self._samples: List[ImuSample] = []
        self._stamps = np.empty(0)
        self.extend(samples)

    def __len__(self):
        return len(self._samples)

    def extend(self, samples):
        samples = list(samples)
        if not samples:
            return
        last = self._samples[-1].stamp if self._samples else -np.inf
        for sample in samples:
            if not sample.stamp > last:
                raise InputError(f"IMU stamps not strictly increasing at {sample.stamp:.6f}")
            last = sample.stamp
        self._samples.extend(samples)
        self._stamps = np.array([s.stamp for s in self._samples])

    def _sample_at(self, stamp):
        stamps = self._stamps
        if stamp < stamps[0] - _STAMP_TOLERANCE or stamp > stamps[-1] + _STAMP_TOLERANCE:
            raise InputError(f"stamp {stamp:.6f} outside buffered IMU span "
                             f"[{stamps[0]:.6f}, {stamps[-1]:.6f}]")
        idx = int(np.searchsorted(stamps, stamp))
        for j in (idx - 1, idx):
            if 0 <= j < len(stamps) and abs(stamps[j] - stamp) <= _STAMP_TOLERANCE:
                return ImuSample(self._samples[j].gyro, self._samples[j].accel, stamp)
        s0, s1 = self._samples[idx - 1], self._samples[idx]
        ratio = (stamp - s0.stamp) / (s1.stamp - s0.stamp)
        return ImuSample(
            gyro=(1.0 - ratio) * s0.gyro + ratio * s1.gyro,
            accel=(1.0 - ratio) * s0.accel + ratio * s1.accel,
            stamp=stamp,
        )

    def between(self, t0, t1) -> List[ImuSample]:
        """Samples covering [t0, t1], with interpolated boundary samples."""
        if t1 < t0:
            raise InputError(f"interval end {t1:.6f} precedes start {t0:.6f}")
        first = self._sample_at(t0)
        if t1 - t0 <= _STAMP_TOLERANCE:
            return [first]
        last = self._sample_at(t1)
        lo = int(np.searchsorted(self._stamps, t0 + _STAMP_TOLERANCE, side='right'))
        hi = int(np.searchsorted(self._stamps, t1 - _STAMP_TOLERANCE, side='left'))
        return [first] + self._samples[lo:hi] + [last]

    def nearest(self, stamp) -> ImuSample:
        if not self._samples:
            raise InputError("IMU buffer is empty")
        idx = int(np.searchsorted(self._stamps, stamp))
        candidates = [j for j in (idx - 1, idx) if 0 <= j < len(self._samples)]
        best = min(candidates, key=lambda j: abs(self._stamps[j] - stamp))
        return self._samples[best]

    def discard_before(self, stamp):
        keep = int(np.searchsorted(self._stamps, stamp - _STAMP_TOLERANCE, side='left'))
        keep = max(keep - 1, 0)
        if keep:
            self._samples = self._samples[keep:]
            self._stamps = self._stamps[keep:]
