"""Shared builders for tests: random states, short scenarios and numeric Jacobians."""
import numpy as np

from fusion.gnss_model import Constellation, GnssObservation, RawGnssEpoch, SatelliteState, SatObs
from fusion.gnss_model import GPS_L1_WAVELENGTH, SPEED_OF_LIGHT
from fusion.lie import quat_exp
from fusion.simulator import CanyonSegment, ScenarioConfig
from fusion.state import NavState


def random_nav_state(rng, stamp=0.0, bias_scale=0.05):
    return NavState(
        p_wl_b=rng.normal(0.0, 5.0, 3),
        v_wl_b=rng.normal(0.0, 2.0, 3),
        q_wl_b=quat_exp(rng.normal(0.0, 0.6, 3)),
        bias_accel=rng.normal(0.0, bias_scale, 3),
        bias_gyro=rng.normal(0.0, 0.1 * bias_scale, 3),
        stamp=stamp,
    )


def numeric_jacobian(evaluate, values, key, eps=1e-6):
    """Central differences of `evaluate(values).residual` w.r.t. block `key`."""
    base = values[key]
    columns = []
    for i in range(base.tangent_dim):
        delta = np.zeros(base.tangent_dim)
        delta[i] = eps
        plus = dict(values)
        minus = dict(values)
        plus[key] = base.retract(delta)
        minus[key] = base.retract(-delta)
        columns.append((evaluate(plus).residual - evaluate(minus).residual) / (2.0 * eps))
    return np.column_stack(columns)


def assert_jacobians_close(test, factor, values, rtol=1e-5, atol=1e-6, eps=1e-6):
    analytic = factor.evaluate(values).jacobians
    for key, J in zip(factor.keys, analytic):
        numeric = numeric_jacobian(factor.evaluate, values, key, eps)
        scale = max(1.0, float(np.max(np.abs(numeric))))
        err = float(np.max(np.abs(J - numeric)))
        test.assertLessEqual(err, atol + rtol * scale, f"{factor!r} block {key}: error {err:.3e}")


def sky_epoch(receiver_ecef, receiver_vel=None, clock_bias=None, clock_drift=None,
              count=8, constellations=(Constellation.GPS,), epoch_index=0, stamp=0.0, seed=3):
    """Noiseless epoch with satellites spread over the upper hemisphere of `receiver_ecef`."""
    rng = np.random.default_rng(seed)
    receiver_ecef = np.asarray(receiver_ecef, dtype=float)
    receiver_vel = np.zeros(3) if receiver_vel is None else np.asarray(receiver_vel, dtype=float)
    clock_bias = clock_bias or {}
    clock_drift = clock_drift or {}
    up = receiver_ecef / np.linalg.norm(receiver_ecef)
    east = np.cross([0.0, 0.0, 1.0], up)
    east /= np.linalg.norm(east)
    north = np.cross(up, east)
    observations = []
    for i in range(count):
        constellation = constellations[i % len(constellations)]
        az = 2.0 * np.pi * i / count + 0.3
        el = np.radians(20.0 + 60.0 * ((i * 7) % count) / count)
        los = np.cos(el) * (np.sin(az) * east + np.cos(az) * north) + np.sin(el) * up
        position = receiver_ecef + 2.2e7 * los
        velocity = rng.normal(0.0, 2000.0, 3)
        sat_bias = float(rng.uniform(-1e-4, 1e-4))
        sat_drift = float(rng.uniform(-1e-11, 1e-11))
        sat_id = f'{constellation.value[0]}{i + 1:02d}'
        sat = SatelliteState(sat_id, constellation, position, velocity, sat_bias, sat_drift)
        rng_true = float(np.linalg.norm(position - receiver_ecef))
        rcv_bias = clock_bias.get(constellation.value, 0.0)
        rcv_drift = clock_drift.get(constellation.value, 0.0)
        pseudorange = rng_true + SPEED_OF_LIGHT * (rcv_bias - sat_bias)
        rate = los @ (velocity - receiver_vel) + SPEED_OF_LIGHT * (rcv_drift - sat_drift)
        obs = SatObs(sat_id, pseudorange, -rate / GPS_L1_WAVELENGTH, GPS_L1_WAVELENGTH)
        observations.append(GnssObservation(obs, sat))
    return RawGnssEpoch(epoch_index, stamp, tuple(observations))


def short_scenario(**overrides):
    """Roughly 40 s drive with one turn and a short stop."""
    config = ScenarioConfig(
        name='short',
        seed=11,
        waypoints=[[0.0, 0.0], [80.0, 0.0], [110.0, 15.0], [125.0, 60.0], [130.0, 140.0]],
        speed_profile=[[0.0, 4.0], [14.0, 4.0], [16.0, 0.0], [19.0, 0.0], [21.0, 4.0], [40.0, 4.0]],
        camera_rate=5.0,
        landmark_count=500,
    )
    for key, value in overrides.items():
        setattr(config, key, value)
    config.validate()
    return config


def canyon_scenario(**overrides):
    return short_scenario(canyon_segments=[CanyonSegment(30.0, 34.0, 70.0)], **overrides)


def long_scenario(**overrides):
    """Two-minute drive with a right-angle turn and a 10 s stop."""
    config = ScenarioConfig(name='long', seed=11, camera_rate=5.0)
    for key, value in overrides.items():
        setattr(config, key, value)
    config.validate()
    return config


def long_canyon_scenario(**overrides):
    return long_scenario(canyon_segments=[CanyonSegment(70.0, 80.0, 70.0)], **overrides)
