"""Schur-complement marginal priors and the sliding-window slide policies."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Sequence, Tuple

import numpy as np

from fusion.errors import InputError
from fusion.models import Factor, FactorEval
from fusion.solver import _robust_eval
from fusion.state import clock_key, frame_key, landmark_key


logger = logging.getLogger(__name__)

EIGEN_CLAMP = 1e-10
MARGINALIZE_OLDEST = 'marginalize_oldest'
DROP_SECOND_LATEST = 'drop_second_latest'


@dataclass
class MarginalPrior:
    """Gaussian prior e = offset + sqrt_info * (x - x_lin) on the retained blocks."""

    keys: Tuple[Hashable, ...]
    linearization_values: Dict[Hashable, Any]
    dims: Dict[Hashable, int]
    sqrt_info: np.ndarray
    residual_offset: np.ndarray

    @property
    def information(self):
        return self.sqrt_info.T @ self.sqrt_info

    def offsets(self):
        out, cursor = {}, 0
        for key in self.keys:
            out[key] = cursor
            cursor += self.dims[key]
        return out

    def information_block(self, keys):
        offsets = self.offsets()
        idx = np.concatenate([np.arange(offsets[k], offsets[k] + self.dims[k]) for k in keys])
        info = self.information
        return info[np.ix_(idx, idx)]

    def factor(self):
        return MarginalPriorFactor(self)


class MarginalPriorFactor(Factor):
    kind = 'marginal'

    def __init__(self, prior: MarginalPrior):
        super().__init__(prior.keys)
        self.prior = prior

    def evaluate(self, values):
        prior = self.prior
        dx = np.concatenate([values[k].local_diff(prior.linearization_values[k]) for k in prior.keys])
        residual = prior.residual_offset + prior.sqrt_info @ dx
        jacobians, cursor = [], 0
        for key in prior.keys:
            d = prior.dims[key]
            jacobians.append(prior.sqrt_info[:, cursor:cursor + d])
            cursor += d
        return FactorEval(residual, jacobians)


@dataclass
class WindowPolicyDecision:
    kind: str
    frame_id: int
    affected_epochs: List[int] = field(default_factory=list)
    dropped_landmarks: List[int] = field(default_factory=list)

    def to_dict(self):
        return {
            'kind': self.kind,
            'frame_id': self.frame_id,
            'affected_epochs': list(self.affected_epochs),
            'dropped_landmarks': list(self.dropped_landmarks),
        }


def _pseudo_inverse(H):
    w, U = np.linalg.eigh(0.5 * (H + H.T))
    inv_w = np.where(w > EIGEN_CLAMP, 1.0 / np.where(w > EIGEN_CLAMP, w, 1.0), 0.0)
    return (U * inv_w) @ U.T


def _schur_prior(factors, drop_keys, keep_keys, values, constant_keys=()) -> MarginalPrior:
    constant = set(constant_keys)
    keep = [k for k in keep_keys if k not in constant]
    drop = [k for k in drop_keys if k not in constant]
    dims = {k: values[k].tangent_dim for k in keep + drop}
    offsets, cursor = {}, 0
    for key in keep + drop:
        offsets[key] = cursor
        cursor += dims[key]
    size = cursor
    m = sum(dims[k] for k in keep)

    H = np.zeros((size, size))
    b = np.zeros(size)
    for factor in factors:
        _, ev = _robust_eval(factor, values)
        if not ev.valid:
            continue
        J = np.zeros((ev.residual.size, size))
        for key, block in zip(factor.keys, ev.jacobians):
            if key in offsets:
                J[:, offsets[key]:offsets[key] + dims[key]] = block
        H += J.T @ J
        b += J.T @ ev.residual

    H_mm, H_md, H_dd = H[:m, :m], H[:m, m:], H[m:, m:]
    inv_dd = _pseudo_inverse(H_dd) if size > m else np.zeros((0, 0))
    H_marg = H_mm - H_md @ inv_dd @ H_md.T
    b_marg = b[:m] - H_md @ inv_dd @ b[m:]

    w, U = np.linalg.eigh(0.5 * (H_marg + H_marg.T))
    w = np.where(w > EIGEN_CLAMP, w, 0.0)
    sqrt_w = np.sqrt(w)
    inv_sqrt_w = np.where(w > 0.0, 1.0 / np.where(w > 0.0, sqrt_w, 1.0), 0.0)
    return MarginalPrior(
        keys=tuple(keep),
        linearization_values={k: values[k] for k in keep},
        dims={k: dims[k] for k in keep},
        sqrt_info=(sqrt_w[:, None] * U.T),
        residual_offset=inv_sqrt_w * (U.T @ b_marg),
    )


def marginalize(factors: Sequence[Factor], drop_blocks, keep_blocks, values, constant_keys=()) -> MarginalPrior:
    """Linearize `factors` at `values` and Schur-complement `drop_blocks` out."""
    drop = list(drop_blocks)
    keep = list(keep_blocks)
    overlap = set(drop) & set(keep)
    if overlap:
        raise InputError(f"blocks both dropped and kept: {sorted(map(str, overlap))}")
    drop_set = set(drop)
    known = drop_set | set(keep) | set(constant_keys)
    for factor in factors:
        if not drop_set.intersection(factor.keys):
            raise InputError(f"{factor!r} touches no dropped block")
        stray = [k for k in factor.keys if k not in known]
        if stray:
            raise InputError(f"{factor!r} references blocks outside drop/keep sets: {stray}")
    return _schur_prior(factors, drop, keep, values, constant_keys)


def _ordered_keys(factors, exclude):
    seen = []
    for factor in factors:
        for key in factor.keys:
            if key not in exclude and key not in seen:
                seen.append(key)
    return seen


def is_keyframe(previous_features, features, min_parallax=0.01, min_tracked=50):
    """Average unit-plane parallax against the previous frame, or weak tracking."""
    common = [t for t in features if t in previous_features]
    if len(common) < min_tracked:
        return True
    parallax = np.mean([np.linalg.norm(np.asarray(features[t]) - np.asarray(previous_features[t]))
                        for t in common])
    return bool(parallax >= min_parallax)


def slide_keyframe(window) -> WindowPolicyDecision:
    """Marginalize the oldest frame with its landmarks and GNSS parameters."""
    oldest = window.frames[0]
    fid = oldest.frame_id
    hosted = [lm.track_id for lm in window.landmarks.values() if lm.host_frame == fid]
    entries = window.entries_bound_to(fid)

    values = window.values()
    drop = [frame_key(fid)]
    drop += [landmark_key(t) for t in hosted if landmark_key(t) in values]
    drop += [clock_key(e.epoch_index) for e in entries if clock_key(e.epoch_index) in values]
    drop_set = set(drop)
    constant = window.constant_keys()

    factors = [f for f in window.build_factors(include_inactive=True, include_prior=False)
               if drop_set.intersection(f.keys)]
    if window.marginal_prior is not None:
        factors.append(window.marginal_prior.factor())
    keep = _ordered_keys(factors, drop_set | constant)
    if factors:
        window.marginal_prior = _schur_prior(factors, drop, keep, values, constant)

    window.marginalized_epochs += sum(1 for e in entries if e.has_measurements)
    window.remove_oldest(hosted, entries)
    decision = WindowPolicyDecision(MARGINALIZE_OLDEST, fid, [e.epoch_index for e in entries], hosted)
    logger.debug(f"Marginalized frame {fid}: {len(hosted)} landmarks, {len(entries)} GNSS epochs")
    return decision


def slide_non_keyframe(window) -> WindowPolicyDecision:
    """Drop the second-latest frame's visual data and rebind its GNSS epochs."""
    second = window.frames[-2]
    fid = second.frame_id
    key = frame_key(fid)
    prior = window.marginal_prior
    if prior is not None and key in prior.keys:
        factor = prior.factor()
        keep = [k for k in prior.keys if k != key]
        window.marginal_prior = _schur_prior([factor], [key], keep, prior.linearization_values)
    entries = window.entries_bound_to(fid)
    dropped = window.remove_second_latest()
    return WindowPolicyDecision(DROP_SECOND_LATEST, fid, [e.epoch_index for e in entries], dropped)
