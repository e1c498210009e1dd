"""Levenberg-Marquardt over manifold parameter blocks with Schur elimination."""
from __future__ import annotations

import logging
import math
from collections import Counter, OrderedDict
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Hashable, List, Optional

import numpy as np
from scipy import linalg, sparse

from fusion.errors import InputError
from fusion.models import Factor, FactorEval


logger = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    max_iterations: int = 10
    initial_lambda: float = 1e-4
    relative_cost_tolerance: float = 1e-8
    gradient_tolerance: float = 1e-10
    max_consecutive_rejections: int = 20
    min_diagonal: float = 1e-6

    @classmethod
    def from_dict(cls, data):
        data = data or {}
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


@dataclass
class SolveReport:
    initial_cost: float
    final_cost: float
    iterations: int
    termination: str
    gradient_norm: float
    success: bool = True
    cost_history: List[float] = field(default_factory=list)
    factor_counts: Dict[str, int] = field(default_factory=dict)

    def to_dict(self):
        return {
            'initial_cost': self.initial_cost,
            'final_cost': self.final_cost,
            'iterations': self.iterations,
            'termination': self.termination,
            'gradient_norm': self.gradient_norm,
            'success': self.success,
            'factor_counts': dict(self.factor_counts),
        }


@dataclass
class ParameterBlock:
    key: Hashable
    value: Any
    constant: bool = False
    eliminate: bool = False

    @property
    def dim(self):
        return self.value.tangent_dim


@dataclass(frozen=True)
class VectorBlock:
    """Plain Euclidean parameter block."""

    data: np.ndarray

    @property
    def tangent_dim(self):
        return int(np.asarray(self.data).size)

    def retract(self, delta):
        return VectorBlock(np.asarray(self.data, dtype=float) + np.asarray(delta, dtype=float))

    def local_diff(self, other):
        return np.asarray(self.data, dtype=float) - np.asarray(other.data, dtype=float)


class LinearFactor(Factor):
    """r = sum_k A_k x_k - b over VectorBlocks."""

    kind = 'linear'

    def __init__(self, keys, matrices, target):
        super().__init__(keys)
        self.matrices = [np.atleast_2d(np.asarray(m, dtype=float)) for m in matrices]
        self.target = np.asarray(target, dtype=float).reshape(-1)

    def evaluate(self, values):
        residual = -self.target.copy()
        for key, A in zip(self.keys, self.matrices):
            residual = residual + A @ np.asarray(values[key].data, dtype=float).reshape(-1)
        return FactorEval(residual, [A.copy() for A in self.matrices])


class Problem:
    """Ordered parameter blocks plus the factors that constrain them."""

    def __init__(self):
        self.blocks: "OrderedDict[Hashable, ParameterBlock]" = OrderedDict()
        self.factors: List[Factor] = []

    def add_block(self, key, value, constant=False, eliminate=False):
        self.blocks[key] = ParameterBlock(key, value, constant, eliminate)

    def has_block(self, key):
        return key in self.blocks

    def set_constant(self, key, constant=True):
        self.blocks[key].constant = constant

    def add_factor(self, factor: Factor):
        missing = [k for k in factor.keys if k not in self.blocks]
        if missing:
            raise InputError(f"{factor!r} references unknown blocks {missing}")
        self.factors.append(factor)

    @property
    def values(self) -> Dict[Hashable, Any]:
        return {k: b.value for k, b in self.blocks.items()}

    def set_values(self, values):
        for key, value in values.items():
            if key in self.blocks:
                self.blocks[key].value = value

    def copy(self) -> 'Problem':
        clone = Problem()
        for key, block in self.blocks.items():
            clone.blocks[key] = replace(block)
        clone.factors = list(self.factors)
        return clone

    def factor_counts(self) -> Dict[str, int]:
        return dict(Counter(f.kind for f in self.factors))


def _robust_eval(factor, values):
    """Evaluate a factor and apply its loss; returns (cost, FactorEval)."""
    ev = factor.evaluate(values)
    if not ev.valid:
        return 0.0, ev
    squared = float(ev.residual @ ev.residual)
    if factor.loss is None:
        return squared, ev
    rho, weight = factor.loss.evaluate(squared)
    scale = math.sqrt(weight)
    return rho, FactorEval(scale * ev.residual, [scale * J for J in ev.jacobians], True)


def evaluate_cost(problem: Problem, values=None) -> float:
    values = problem.values if values is None else values
    return float(sum(_robust_eval(f, values)[0] for f in problem.factors))


class _Layout:
    """Column offsets: free non-eliminated blocks first, eliminated blocks last."""

    def __init__(self, problem):
        free = [b for b in problem.blocks.values() if not b.constant]
        ordered = [b for b in free if not b.eliminate] + [b for b in free if b.eliminate]
        self.offsets = {}
        self.dims = {}
        cursor = 0
        self.reduced_size = 0
        self.eliminated = []
        for block in ordered:
            self.offsets[block.key] = cursor
            self.dims[block.key] = block.dim
            if block.eliminate:
                self.eliminated.append((cursor - self.reduced_size, block.dim))
            cursor += block.dim
            if not block.eliminate:
                self.reduced_size = cursor
        self.size = cursor


def _linearize(problem, values, layout):
    rows, cols, data = [], [], []
    residuals = []
    cost = 0.0
    row = 0
    for factor in problem.factors:
        contribution, ev = _robust_eval(factor, values)
        if not ev.valid:
            continue
        cost += contribution
        m = ev.residual.size
        residuals.append(ev.residual)
        for key, J in zip(factor.keys, ev.jacobians):
            if key not in layout.offsets:
                continue
            r_idx, c_idx = np.meshgrid(np.arange(row, row + m), np.arange(layout.offsets[key], layout.offsets[key] + J.shape[1]),
                                       indexing='ij')
            rows.append(r_idx.ravel())
            cols.append(c_idx.ravel())
            data.append(np.asarray(J, dtype=float).ravel())
        row += m
    r = np.concatenate(residuals) if residuals else np.zeros(0)
    if data:
        J = sparse.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(row, layout.size)).tocsr()
    else:
        J = sparse.csr_matrix((row, layout.size))
    return cost, J, r


def _block_diag_inverse(H_ll, eliminated):
    dense_blocks = []
    for start, dim in eliminated:
        block = H_ll[start:start + dim, start:start + dim].toarray()
        dense_blocks.append(np.linalg.inv(block))
    return sparse.block_diag(dense_blocks, format='csr')


def solve_normal_equations(H, g, layout):
    """Solve H dx = -g, eliminating landmark blocks by Schur complement."""
    n_r = layout.reduced_size
    try:
        if not layout.eliminated:
            factor = linalg.cho_factor(H.toarray())
            return linalg.cho_solve(factor, -g)
        H = H.tocsr()
        H_rr = H[:n_r, :n_r].toarray()
        H_rl = H[:n_r, n_r:]
        H_ll_inv = _block_diag_inverse(H[n_r:, n_r:], layout.eliminated)
        g_r, g_l = g[:n_r], g[n_r:]
        coupling = H_rl @ H_ll_inv
        dx_r = np.zeros(0)
        if n_r:
            schur = H_rr - (coupling @ H_rl.T).toarray()
            rhs = -g_r + coupling @ g_l
            dx_r = linalg.cho_solve(linalg.cho_factor(schur), rhs)
        dx_l = H_ll_inv @ (-g_l - H_rl.T @ dx_r)
        return np.concatenate([dx_r, dx_l])
    except (linalg.LinAlgError, np.linalg.LinAlgError, ValueError):
        return None


def _retract(values, delta, layout):
    updated = dict(values)
    for key, offset in layout.offsets.items():
        updated[key] = values[key].retract(delta[offset:offset + layout.dims[key]])
    return updated


def solve(problem: Problem, options: Optional[SolverOptions] = None) -> SolveReport:
    """Minimize the problem in place; on failure the initial values are kept."""
    options = options or SolverOptions()
    layout = _Layout(problem)
    initial_values = problem.values
    values = initial_values
    cost, J, r = _linearize(problem, values, layout)
    initial_cost = cost
    history = [cost]
    lam = options.initial_lambda
    iterations = 0
    termination = 'max_iterations'
    success = True
    gradient_norm = 0.0

    if layout.size == 0:
        return SolveReport(cost, cost, 0, 'no_free_parameters', 0.0, True, history, problem.factor_counts())

    while iterations < options.max_iterations:
        g = J.T @ r
        gradient_norm = float(np.max(np.abs(g))) if g.size else 0.0
        if gradient_norm < options.gradient_tolerance:
            termination = 'gradient'
            break
        H = (J.T @ J).tocsr()
        diagonal = np.maximum(H.diagonal(), options.min_diagonal)

        rejections = 0
        accepted = False
        while not accepted:
            delta = solve_normal_equations(H + sparse.diags(lam * diagonal), g, layout)
            candidate_cost = np.inf
            if delta is not None and np.all(np.isfinite(delta)):
                candidate = _retract(values, delta, layout)
                candidate_cost, cand_J, cand_r = _linearize(problem, candidate, layout)
            if np.isfinite(candidate_cost) and candidate_cost < cost:
                accepted = True
                relative = (cost - candidate_cost) / max(cost, np.finfo(float).tiny)
                values, cost, J, r = candidate, candidate_cost, cand_J, cand_r
                lam = max(lam * 0.5, 1e-16)
                iterations += 1
                history.append(cost)
            else:
                lam *= 10.0
                rejections += 1
                if rejections >= options.max_consecutive_rejections:
                    break
        if not accepted:
            # Stalling after progress is a converged solve; never moving is a failure.
            termination = 'stalled' if iterations else 'no_convergence'
            success = iterations > 0
            break
        if relative < options.relative_cost_tolerance:
            termination = 'cost'
            break

    if success:
        problem.set_values(values)
        final_cost = cost
    else:
        logger.warning(f"LM gave up after {options.max_consecutive_rejections} rejected steps, keeping initial values")
        problem.set_values(initial_values)
        final_cost = initial_cost
    return SolveReport(
        initial_cost=initial_cost,
        final_cost=final_cost,
        iterations=iterations,
        termination=termination,
        gradient_norm=gradient_norm,
        success=success,
        cost_history=history,
        factor_counts=problem.factor_counts(),
    )
