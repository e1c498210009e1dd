"""GNSS measurement models and standalone single-epoch solutions."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from fusion.errors import DegenerateInputError, InputError, InsufficientObservationsError, NonConvergenceError


logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299792458.0
GPS_L1_WAVELENGTH = SPEED_OF_LIGHT / 1575.42e6
GLONASS_L1_WAVELENGTH = SPEED_OF_LIGHT / 1602.0e6

SPP_MAX_ITERATIONS = 10
SPP_TOLERANCE = 1e-4
SPP_DIVERGENCE_STEP = 1.0


class Constellation(str, Enum):
    GPS = 'GPS'
    GLONASS = 'GLONASS'
    GALILEO = 'GALILEO'
    BEIDOU = 'BEIDOU'

    @classmethod
    def parse(cls, value):
        try:
            return cls(str(value).upper())
        except ValueError as exc:
            raise InputError(f"unknown constellation '{value}'") from exc


@dataclass(frozen=True)
class SatelliteState:
    sat_id: str
    constellation: Constellation
    position_ecef: np.ndarray
    velocity_ecef: np.ndarray
    clock_bias: float = 0.0
    clock_drift: float = 0.0


@dataclass(frozen=True)
class SatObs:
    """One satellite's measurements; None marks a missing or removed value."""

    sat_id: str
    pseudorange: Optional[float]
    doppler: Optional[float]
    wavelength: float

    def __post_init__(self):
        if not self.wavelength > 0.0:
            raise InputError(f"satellite {self.sat_id}: wavelength must be positive")


@dataclass(frozen=True)
class GnssObservation:
    obs: SatObs
    sat: SatelliteState


@dataclass(frozen=True)
class RawGnssEpoch:
    epoch_index: int
    stamp: float
    observations: Tuple[GnssObservation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'observations', tuple(self.observations))
        ids = [o.obs.sat_id for o in self.observations]
        if len(ids) != len(set(ids)):
            raise InputError(f"epoch {self.epoch_index}: duplicate satellite ids")

    @property
    def sat_ids(self):
        return [o.obs.sat_id for o in self.observations]

    @property
    def constellations(self):
        """Constellations with at least one usable measurement, sorted."""
        used = {o.sat.constellation.value for o in self.observations
                if o.obs.pseudorange is not None or o.obs.doppler is not None}
        return tuple(sorted(used))

    @property
    def measurement_count(self):
        return sum((o.obs.pseudorange is not None) + (o.obs.doppler is not None) for o in self.observations)

    def with_observations(self, observations):
        return RawGnssEpoch(self.epoch_index, self.stamp, tuple(observations))


@dataclass
class SppSolution:
    position_ecef: np.ndarray
    clock_bias: Dict[str, float]
    residuals: Dict[str, float]
    iterations: int
    gdop: float
    pdop: float


@dataclass
class VelocitySolution:
    velocity_ecef: np.ndarray
    clock_drift: Dict[str, float]
    residuals: Dict[str, float] = field(default_factory=dict)


def _line_of_sight(sat_position, receiver_ecef):
    diff = np.asarray(sat_position, dtype=float) - np.asarray(receiver_ecef, dtype=float)
    rng = float(np.linalg.norm(diff))
    if rng == 0.0:
        raise DegenerateInputError("receiver coincides with satellite")
    return diff / rng, rng


def predict_pseudorange(sat: SatelliteState, receiver_ecef, clock_bias_r: float) -> float:
    _, rng = _line_of_sight(sat.position_ecef, receiver_ecef)
    return rng + SPEED_OF_LIGHT * clock_bias_r - SPEED_OF_LIGHT * sat.clock_bias


def predict_range_rate(sat: SatelliteState, receiver_ecef, receiver_vel_ecef, clock_drift_r: float) -> float:
    los, _ = _line_of_sight(sat.position_ecef, receiver_ecef)
    relative = np.asarray(sat.velocity_ecef) - np.asarray(receiver_vel_ecef)
    return float(los @ relative) + SPEED_OF_LIGHT * clock_drift_r - SPEED_OF_LIGHT * sat.clock_drift


def _dops(geometry):
    try:
        q = np.linalg.inv(geometry.T @ geometry)
    except np.linalg.LinAlgError:
        return float('inf'), float('inf')
    return float(np.sqrt(np.trace(q))), float(np.sqrt(np.trace(q[:3, :3])))


def spp_solve(epoch: RawGnssEpoch, guess_ecef=None,
              max_iterations=SPP_MAX_ITERATIONS, tolerance=SPP_TOLERANCE) -> SppSolution:
    """Gauss-Newton pseudorange positioning with one clock bias per constellation."""
    usable = [o for o in epoch.observations if o.obs.pseudorange is not None]
    constellations = sorted({o.sat.constellation.value for o in usable})
    n_unknowns = 3 + len(constellations)
    if len(usable) < n_unknowns:
        raise InsufficientObservationsError(
            f"epoch {epoch.epoch_index}: {len(usable)} pseudoranges for {n_unknowns} unknowns")

    col = {c: 3 + i for i, c in enumerate(constellations)}
    x = np.zeros(n_unknowns)
    if guess_ecef is not None:
        x[:3] = guess_ecef

    def linearize(state):
        H = np.zeros((len(usable), n_unknowns))
        res = np.zeros(len(usable))
        for row, o in enumerate(usable):
            los, rng = _line_of_sight(o.sat.position_ecef, state[:3])
            j = col[o.sat.constellation.value]
            predicted = rng + state[j] - SPEED_OF_LIGHT * o.sat.clock_bias
            res[row] = o.obs.pseudorange - predicted
            H[row, :3] = -los
            H[row, j] = 1.0
        return H, res

    converged = False
    step = np.inf
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        H, res = linearize(x)
        delta, *_ = np.linalg.lstsq(H, res, rcond=None)
        x = x + delta
        step = float(np.linalg.norm(delta))
        if not np.all(np.isfinite(x)):
            raise NonConvergenceError(f"epoch {epoch.epoch_index}: SPP diverged")
        if step < tolerance:
            converged = True
            break

    if not converged:
        if step > SPP_DIVERGENCE_STEP:
            raise NonConvergenceError(
                f"epoch {epoch.epoch_index}: SPP step {step:.3f} m after {iterations} iterations")
        logger.debug(f"SPP epoch {epoch.epoch_index} stopped at iteration cap, last step {step:.2e} m")

    H, res = linearize(x)
    gdop, pdop = _dops(H)
    return SppSolution(
        position_ecef=x[:3].copy(),
        clock_bias={c: x[col[c]] / SPEED_OF_LIGHT for c in constellations},
        residuals={o.obs.sat_id: float(r) for o, r in zip(usable, res)},
        iterations=iterations,
        gdop=gdop,
        pdop=pdop,
    )


def velocity_solve(epoch: RawGnssEpoch, position_ecef) -> VelocitySolution:
    """Linear least squares on Doppler-derived range rates."""
    usable = [o for o in epoch.observations if o.obs.doppler is not None]
    constellations = sorted({o.sat.constellation.value for o in usable})
    n_unknowns = 3 + len(constellations)
    if len(usable) < n_unknowns:
        raise InsufficientObservationsError(
            f"epoch {epoch.epoch_index}: {len(usable)} Dopplers for {n_unknowns} unknowns")

    col = {c: 3 + i for i, c in enumerate(constellations)}
    A = np.zeros((len(usable), n_unknowns))
    y = np.zeros(len(usable))
    for row, o in enumerate(usable):
        los, _ = _line_of_sight(o.sat.position_ecef, position_ecef)
        measured_rate = -o.obs.wavelength * o.obs.doppler
        A[row, :3] = -los
        A[row, col[o.sat.constellation.value]] = 1.0
        y[row] = measured_rate - los @ o.sat.velocity_ecef + SPEED_OF_LIGHT * o.sat.clock_drift
    x, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ x
    return VelocitySolution(
        velocity_ecef=x[:3].copy(),
        clock_drift={c: x[col[c]] / SPEED_OF_LIGHT for c in constellations},
        residuals={o.obs.sat_id: float(r) for o, r in zip(usable, res)},
    )
