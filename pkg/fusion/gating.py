"""Residual-threshold removal of faulty GNSS measurements.

Two methods are offered: a standalone SPP/Doppler solution per epoch
(`gnss`) and a joint window solve restricted to the current epoch's GNSS
measurements (`mixed`). Thresholds are in physical units.
"""
from __future__ import annotations

import json
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from fusion.errors import FusionError, InsufficientObservationsError, NonConvergenceError
from fusion.gnss_model import GnssObservation, RawGnssEpoch, SatObs, spp_solve, velocity_solve
from fusion.solver import SolverOptions, solve


logger = logging.getLogger(__name__)

METHOD_GNSS = 'gnss'
METHOD_MIXED = 'mixed'

ALL_FILTERED = 'all_filtered'
PARTIALLY_FILTERED = 'partially_filtered'
NOT_FILTERED = 'not_filtered'


@dataclass(frozen=True)
class GateThresholds:
    pseudorange: float = 10.0
    doppler: float = 3.0
    fallback_window: float = 5.0

    @classmethod
    def from_dict(cls, data):
        data = data or {}
        return cls(
            pseudorange=float(data.get('pseudorange_threshold', cls.pseudorange)),
            doppler=float(data.get('doppler_threshold', cls.doppler)),
            fallback_window=float(data.get('fallback_window', cls.fallback_window)),
        )


@dataclass
class GateReport:
    """Outcome of gating one epoch. Residual maps are keyed by satellite id."""

    epoch_index: int
    stamp: float
    method: str
    kept_pseudorange: Dict[str, float] = field(default_factory=dict)
    removed_pseudorange: Dict[str, float] = field(default_factory=dict)
    kept_doppler: Dict[str, float] = field(default_factory=dict)
    removed_doppler: Dict[str, float] = field(default_factory=dict)
    dropped: bool = False
    reason: str = ''
    fallback: bool = False
    elapsed_ms: float = 0.0
    position_ecef: Optional[np.ndarray] = None
    clock_bias: Dict[str, float] = field(default_factory=dict)
    clock_drift: Dict[str, float] = field(default_factory=dict)

    @property
    def observed(self):
        return (set(self.kept_pseudorange) | set(self.removed_pseudorange)
                | set(self.kept_doppler) | set(self.removed_doppler))

    @property
    def kept_measurements(self):
        return len(self.kept_pseudorange) + len(self.kept_doppler)

    @property
    def removed_measurements(self):
        return len(self.removed_pseudorange) + len(self.removed_doppler)

    @property
    def category(self):
        if self.dropped or (self.kept_measurements == 0 and self.removed_measurements > 0):
            return ALL_FILTERED
        if self.removed_measurements:
            return PARTIALLY_FILTERED
        return NOT_FILTERED

    def to_dict(self) -> Dict[str, Any]:
        return {
            'epoch': self.epoch_index,
            'stamp': round(self.stamp, 6),
            'method': self.method,
            'category': self.category,
            'dropped': self.dropped,
            'fallback': self.fallback,
            'reason': self.reason,
            'elapsed_ms': self.elapsed_ms,
            'kept_pseudorange': _rounded(self.kept_pseudorange),
            'removed_pseudorange': _rounded(self.removed_pseudorange),
            'kept_doppler': _rounded(self.kept_doppler),
            'removed_doppler': _rounded(self.removed_doppler),
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _rounded(residuals):
    return {k: round(float(v), 4) for k, v in sorted(residuals.items())}


@dataclass
class GatingProblem:
    """Cloned window problem plus the GNSS factors of the epoch under test."""

    problem: Any
    factors: List[Any]


def min_satellites(n_constellations):
    return 3 + n_constellations + 1


def _without(epoch, removed_pr=(), removed_dop=()):
    observations = []
    for o in epoch.observations:
        pr = None if o.obs.sat_id in removed_pr else o.obs.pseudorange
        dop = None if o.obs.sat_id in removed_dop else o.obs.doppler
        observations.append(GnssObservation(SatObs(o.obs.sat_id, pr, dop, o.obs.wavelength), o.sat))
    return epoch.with_observations(observations)


def _drop(report, reason):
    report.removed_pseudorange.update(report.kept_pseudorange)
    report.removed_doppler.update(report.kept_doppler)
    report.kept_pseudorange.clear()
    report.kept_doppler.clear()
    report.dropped = True
    report.reason = reason
    return report


def _check_count(report, epoch):
    kept = [o for o in epoch.observations if o.obs.sat_id in report.kept_pseudorange]
    constellations = {o.sat.constellation.value for o in kept}
    required = min_satellites(len(constellations))
    if len(kept) < required:
        return _drop(report, f"{len(kept)} satellites left, need {required}")
    return report


def gate_gnss_only(epoch: RawGnssEpoch, thresholds: GateThresholds = GateThresholds(), guess_ecef=None) -> GateReport:
    """Iteratively remove the largest SPP / Doppler residual above threshold."""
    started = time.perf_counter()
    report = GateReport(epoch.epoch_index, epoch.stamp, METHOD_GNSS)
    pr_ids = [o.obs.sat_id for o in epoch.observations if o.obs.pseudorange is not None]
    dop_ids = [o.obs.sat_id for o in epoch.observations if o.obs.doppler is not None]
    report.kept_pseudorange = {s: 0.0 for s in pr_ids}
    report.kept_doppler = {s: 0.0 for s in dop_ids}

    removed_pr = {}
    solution = None
    try:
        while True:
            solution = spp_solve(_without(epoch, removed_pr), guess_ecef)
            worst = max(solution.residuals, key=lambda s: abs(solution.residuals[s]))
            if abs(solution.residuals[worst]) <= thresholds.pseudorange:
                break
            removed_pr[worst] = solution.residuals[worst]
    except (InsufficientObservationsError, NonConvergenceError) as exc:
        report.elapsed_ms = 1e3 * (time.perf_counter() - started)
        report.removed_pseudorange.update(removed_pr)
        return _drop(report, str(exc))

    report.kept_pseudorange = dict(solution.residuals)
    report.removed_pseudorange = removed_pr
    report.position_ecef = solution.position_ecef
    report.clock_bias = dict(solution.clock_bias)

    removed_dop = {}
    try:
        while True:
            vel = velocity_solve(_without(epoch, removed_pr=(), removed_dop=removed_dop), solution.position_ecef)
            worst = max(vel.residuals, key=lambda s: abs(vel.residuals[s]))
            if abs(vel.residuals[worst]) <= thresholds.doppler:
                break
            removed_dop[worst] = vel.residuals[worst]
        report.kept_doppler = dict(vel.residuals)
        report.clock_drift = dict(vel.clock_drift)
    except InsufficientObservationsError:
        removed_dop.update({s: float('nan') for s in dop_ids if s not in removed_dop})
        report.kept_doppler = {}
    report.removed_doppler = removed_dop

    _check_count(report, epoch)
    report.elapsed_ms = 1e3 * (time.perf_counter() - started)
    return report


def gate_mixed(epoch: RawGnssEpoch, window_snapshot, thresholds: GateThresholds = GateThresholds(),
               solver_options: Optional[SolverOptions] = None) -> GateReport:
    """Joint window solve with only this epoch's GNSS factors, then threshold.

    `window_snapshot.gating_problem(epoch)` must return a GatingProblem on
    cloned state; the live window is never touched. Raises FusionError when
    the solve fails so the caller can fall back.
    """
    started = time.perf_counter()
    gp = window_snapshot.gating_problem(epoch)
    report_solve = solve(gp.problem, solver_options)
    if not report_solve.success:
        raise NonConvergenceError(f"epoch {epoch.epoch_index}: mixed gating solve failed")

    values = gp.problem.values
    report = GateReport(epoch.epoch_index, epoch.stamp, METHOD_MIXED)
    for factor in gp.factors:
        ev = factor.evaluate(values)
        physical = float(ev.residual[0]) / math.sqrt(factor.weight)
        if factor.kind == 'pseudorange':
            target = report.kept_pseudorange if abs(physical) <= thresholds.pseudorange else report.removed_pseudorange
        else:
            target = report.kept_doppler if abs(physical) <= thresholds.doppler else report.removed_doppler
        target[factor.sat_id] = physical
    clock = values[gp.factors[0].keys[2]] if gp.factors else None
    if clock is not None:
        report.clock_bias = dict(zip(clock.constellations, clock.bias))
        report.clock_drift = dict(zip(clock.constellations, clock.drift))

    _check_count(report, epoch)
    report.elapsed_ms = 1e3 * (time.perf_counter() - started)
    return report


def apply_gate(epoch: RawGnssEpoch, report: GateReport) -> Optional[RawGnssEpoch]:
    """Epoch with removed measurements blanked, or None when dropped."""
    if report.dropped:
        return None
    gated = _without(epoch, report.removed_pseudorange, report.removed_doppler)
    if gated.measurement_count == 0:
        return None
    return gated


class GnssGate:
    """Dispatches to a gating method and owns the fallback history."""

    def __init__(self, method=METHOD_GNSS, thresholds: GateThresholds = GateThresholds(),
                 solver_options: Optional[SolverOptions] = None):
        if method not in (METHOD_GNSS, METHOD_MIXED):
            raise ValueError(f"unknown gating method '{method}'")
        self.method = method
        self.thresholds = thresholds
        self.solver_options = solver_options
        self.reports: List[GateReport] = []
        self._recent = deque()

    def _recently_all_excluded(self, stamp):
        while self._recent and self._recent[0][0] < stamp - self.thresholds.fallback_window:
            self._recent.popleft()
        return bool(self._recent) and all(not kept for _, kept in self._recent)

    def gate(self, epoch: RawGnssEpoch, window=None, guess_ecef=None) -> GateReport:
        use_mixed = self.method == METHOD_MIXED and window is not None
        fallback = False
        if use_mixed and self._recently_all_excluded(epoch.stamp):
            logger.info(f"Epoch {epoch.epoch_index}: all measurements excluded in the last "
                        f"{self.thresholds.fallback_window:g} s, using standalone gating")
            use_mixed, fallback = False, True
        report = None
        if use_mixed:
            try:
                report = gate_mixed(epoch, window, self.thresholds, self.solver_options)
            except FusionError as exc:
                logger.warning(f"Mixed gating failed ({exc}), using standalone gating")
                fallback = True
        if report is None:
            report = gate_gnss_only(epoch, self.thresholds, guess_ecef)
        report.fallback = fallback
        if report.dropped:
            logger.info(f"Epoch {epoch.epoch_index} dropped: {report.reason}")
        self.reports.append(report)
        self._recent.append((epoch.stamp, report.kept_measurements > 0))
        return report


@dataclass
class GatingRun:
    """One completed estimation run, summarized for the gating comparison."""

    sequence: str
    method: str
    reports: Sequence[GateReport]
    ate: float


def gating_cost_report(runs: Sequence[GatingRun]) -> List[Dict[str, Any]]:
    rows = []
    for run in runs:
        times = [r.elapsed_ms for r in run.reports]
        categories = {ALL_FILTERED: 0, PARTIALLY_FILTERED: 0, NOT_FILTERED: 0}
        for r in run.reports:
            categories[r.category] += 1
        rows.append({
            'sequence': run.sequence,
            'method': run.method,
            'executions': len(times),
            'mean_time_ms': float(np.mean(times)) if times else 0.0,
            'ate': run.ate,
            **categories,
        })
    return rows


def gating_recall(reports: Sequence[GateReport], outliers: Dict[int, set]):
    """(recall, false_removal_rate) of pseudorange removals against injected outliers.

    `outliers` maps epoch index to the satellite ids whose pseudorange was corrupted.
    """
    hits = total_outliers = false_removed = total_clean = 0
    for report in reports:
        bad = outliers.get(report.epoch_index, set())
        observed = set(report.kept_pseudorange) | set(report.removed_pseudorange)
        removed = set(report.removed_pseudorange)
        hits += len(removed & bad)
        total_outliers += len(observed & bad)
        false_removed += len(removed - bad)
        total_clean += len(observed - bad)
    recall = hits / total_outliers if total_outliers else 1.0
    false_rate = false_removed / total_clean if total_clean else 0.0
    return recall, false_rate
