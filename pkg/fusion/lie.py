"""SO(3) helpers shared by state, preintegration and factor code.

Quaternions are numpy arrays in (x, y, z, w) order, matching
scipy.spatial.transform.Rotation. Rotation increments are applied on the
right: R <- R * Exp(dtheta).
"""
import math

import numpy as np


IDENTITY_QUAT = np.array([0.0, 0.0, 0.0, 1.0])
_SMALL_ANGLE = 1e-4


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def wrap_angle(angle):
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(float(angle) + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_mul(q1, q2):
    v1, w1 = q1[:3], q1[3]
    v2, w2 = q2[:3], q2[3]
    v = w1 * v2 + w2 * v1 + np.cross(v1, v2)
    return np.array([v[0], v[1], v[2], w1 * w2 - v1 @ v2])


def quat_conj(q):
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_exp(phi):
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        return quat_normalize(np.array([0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2], 1.0]))
    half = 0.5 * angle
    v = math.sin(half) / angle * phi
    return np.array([v[0], v[1], v[2], math.cos(half)])


def quat_log(q):
    """Rotation vector of a unit quaternion.

    The shortest rotation is returned. At exactly pi the axis sign is chosen so
    that its first non-zero component is positive.
    """
    q = quat_normalize(q)
    if q[3] < 0.0:
        q = -q
    v, w = q[:3], q[3]
    n = np.linalg.norm(v)
    if n < 1e-12:
        return 2.0 * v / w
    if abs(w) < 1e-15:
        nonzero = np.flatnonzero(np.abs(v) > 1e-15)
        if nonzero.size and v[nonzero[0]] < 0.0:
            v = -v
    angle = 2.0 * math.atan2(n, w)
    return angle / n * v


def quat_to_rot(q):
    x, y, z, w = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array([
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
    ])


def rot_to_quat(R):
    """Shepperd's method; result has w >= 0."""
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    if trace > 0.0:
        s = 2.0 * math.sqrt(trace + 1.0)
        q = np.array([(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s, 0.25 * s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([0.25 * s, (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 1] + R[1, 0]) / s, 0.25 * s,
                      (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s,
                      0.25 * s, (R[1, 0] - R[0, 1]) / s])
    if q[3] < 0.0:
        q = -q
    return quat_normalize(q)


def rot_exp(phi):
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    return (np.eye(3) + math.sin(angle) / angle * K
            + (1.0 - math.cos(angle)) / (angle * angle) * K @ K)


def rot_log(R):
    return quat_log(rot_to_quat(R))


def right_jacobian(phi):
    """Jr(phi) with Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    a2 = angle * angle
    return (np.eye(3) - (1.0 - math.cos(angle)) / a2 * K
            + (angle - math.sin(angle)) / (a2 * angle) * K @ K)


def right_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + (1.0 / 12.0 + angle * angle / 720.0) * K @ K
    coeff = 1.0 / (angle * angle) - (1.0 + math.cos(angle)) / (2.0 * angle * math.sin(angle))
    return np.eye(3) + 0.5 * K + coeff * K @ K


def yaw_matrix(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_matrix_derivative(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def yaw_of(R):
    """Heading of the body x axis projected on the horizontal plane."""
    return math.atan2(R[1, 0], R[0, 0])
