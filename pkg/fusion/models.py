"""Data models shared by the estimator, simulator and pipeline steps."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from fusion.gnss_model import RawGnssEpoch
from fusion.imu_preintegration import GravityVec, ImuNoise, ImuSample
from fusion.state import Extrinsics, LeverArm, NavState


@dataclass
class FactorEval:
    """Weighted residual with one Jacobian per parameter block of the factor."""

    residual: np.ndarray
    jacobians: List[np.ndarray]
    valid: bool = True


class Factor:
    """Residual term over an ordered tuple of parameter block keys."""

    kind = 'generic'
    loss = None

    def __init__(self, keys: Sequence[Any]):
        self.keys = tuple(keys)

    def evaluate(self, values: Dict[Any, Any]) -> FactorEval:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}{self.keys}"


@dataclass
class ImageFrame:
    """Feature observations of one camera image (track id -> unit-plane uv)."""

    stamp: float
    features: Dict[int, np.ndarray] = field(default_factory=dict)


@dataclass
class FrameInput:
    """Everything the estimator consumes for one image."""

    stamp: float
    features: Dict[int, np.ndarray]
    imu: List[ImuSample]
    gnss_epochs: List[RawGnssEpoch] = field(default_factory=list)


@dataclass
class SensorSetup:
    extrinsics: Extrinsics
    lever_arm: LeverArm
    imu_noise: ImuNoise = field(default_factory=ImuNoise)
    gravity: GravityVec = field(default_factory=GravityVec)
    pixel_sigma: float = 1.5
    focal_length: float = 460.0

    @property
    def unit_plane_sigma(self):
        return self.pixel_sigma / self.focal_length

    def to_dict(self) -> Dict[str, Any]:
        return {
            'extrinsics': {
                'rotation_b_from_c': self.extrinsics.rotation_b_from_c.tolist(),
                'translation_c_in_b': self.extrinsics.translation_c_in_b.tolist(),
            },
            'lever_arm': self.lever_arm.translation_g_in_b.tolist(),
            'imu_noise': self.imu_noise.to_dict(),
            'gravity': self.gravity.magnitude,
            'pixel_sigma': self.pixel_sigma,
            'focal_length': self.focal_length,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SensorSetup':
        ext = data['extrinsics']
        return cls(
            extrinsics=Extrinsics(
                rotation_b_from_c=np.asarray(ext['rotation_b_from_c'], dtype=float),
                translation_c_in_b=np.asarray(ext['translation_c_in_b'], dtype=float),
            ),
            lever_arm=LeverArm(np.asarray(data.get('lever_arm', [0.0, 0.0, 0.0]), dtype=float)),
            imu_noise=ImuNoise.from_dict(data.get('imu_noise')),
            gravity=GravityVec(float(data.get('gravity', GravityVec().magnitude))),
            pixel_sigma=float(data.get('pixel_sigma', 1.5)),
            focal_length=float(data.get('focal_length', 460.0)),
        )


@dataclass
class TimedPose:
    """Trajectory sample; `rotation` is None when the source has no attitude."""

    stamp: float
    position: np.ndarray
    rotation: Optional[np.ndarray] = None


@dataclass
class Dataset:
    """A complete sensor log plus the bootstrap state the estimator starts from."""

    imu: List[ImuSample]
    frames: List[ImageFrame]
    gnss: List[RawGnssEpoch]
    sensors: SensorSetup
    bootstrap: NavState
    ground_truth: List[TimedPose] = field(default_factory=list)
    name: str = 'dataset'

    def frame_inputs(self):
        """Yield FrameInput objects slicing IMU/GNSS into (previous, current] intervals."""
        imu_stamps = np.array([s.stamp for s in self.imu])
        gnss_stamps = np.array([e.stamp for e in self.gnss])
        prev_stamp = -np.inf
        for frame in self.frames:
            lo = int(np.searchsorted(imu_stamps, prev_stamp, side='right'))
            hi = int(np.searchsorted(imu_stamps, frame.stamp, side='right'))
            g_lo = int(np.searchsorted(gnss_stamps, prev_stamp, side='right'))
            g_hi = int(np.searchsorted(gnss_stamps, frame.stamp, side='right'))
            yield FrameInput(
                stamp=frame.stamp,
                features=frame.features,
                imu=self.imu[lo:hi],
                gnss_epochs=self.gnss[g_lo:g_hi],
            )
            prev_stamp = frame.stamp

    @property
    def span(self) -> Tuple[float, float]:
        if self.ground_truth:
            return self.ground_truth[0].stamp, self.ground_truth[-1].stamp
        return self.frames[0].stamp, self.frames[-1].stamp
