"""Levenberg-Marquardt over a 6-dof twist."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError
from .geometry import compose_left

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    lambda0: float = 1e-4
    lambda_factor: float = 10.0
    max_iters: int = 100
    cost_tol: float = 1e-8
    step_tol: float = 1e-10
    min_constraints: int = 6
    max_failures: int = 10

    def __post_init__(self):
        for name in ("lambda0", "lambda_factor", "max_iters", "cost_tol", "step_tol", "min_constraints"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"solver {name} must be positive")
        if not self.lambda_factor > 1:
            raise ConfigError("solver lambda_factor must exceed 1")


@dataclass
class SolveReport:
    xi_opt: np.ndarray
    final_cost: float
    initial_cost: float
    iterations: int
    converged: bool
    reason: str
    cost_history: list = field(default_factory=list)
    n_rows: int = 0


def _robust_scale(block):
    """Per-term IRLS scale and robust cost (pseudo-Huber); ``None`` if off."""
    s2 = np.einsum("ni,nij,nj->n", block.r, block.W, block.r)
    if block.robust_delta is None:
        return None, s2
    d2 = block.robust_delta**2
    root = np.sqrt(1.0 + s2 / d2)
    return 1.0 / root, 2.0 * d2 * (root - 1.0)


def total_cost(blocks):
    """Sum of ``r^T W r`` over all terms (pseudo-Huber cost when enabled)."""
    cost = 0.0
    for block in blocks:
        _, c = _robust_scale(block)
        cost += float(c.sum())
    return cost


def total_rows(blocks):
    return sum(block.n_rows for block in blocks)


def normal_equations(blocks):
    """``H = sum J^T W J`` and ``b = sum J^T W r`` in block order."""
    H = np.zeros((6, 6))
    b = np.zeros(6)
    for block in blocks:
        scale, _ = _robust_scale(block)
        W = block.W if scale is None else block.W * scale[:, None, None]
        JtW = np.einsum("nki,nkl->nil", block.J, W)
        H += np.einsum("nil,nlj->ij", JtW, block.J)
        b += np.einsum("nil,nl->i", JtW, block.r)
    return H, b


def damped_step(H, b, lam):
    """Solve ``(H + lam diag(H)) delta = -b``; ``None`` if not positive definite."""
    A = H + lam * np.diag(np.diag(H))
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None
    delta = -np.linalg.solve(L.T, np.linalg.solve(L, b))
    if not np.all(np.isfinite(delta)):
        return None
    return delta


def lm_step(blocks, xi, lam, retract=compose_left):
    """One damped Gauss-Newton proposal at ``xi``.

    Returns ``(xi_candidate, delta)``, or ``(None, None)`` when the damped
    system is not positive definite.
    """
    H, b = normal_equations(blocks)
    delta = damped_step(H, b, lam)
    if delta is None:
        return None, None
    return retract(xi, delta), delta


def solve(blocks_builder, xi0, cfg=None, retract=compose_left):
    """Minimize the cost of ``blocks_builder(xi)`` starting at ``xi0``.

    ``blocks_builder`` returns the list of residual blocks at a twist. Steps
    are applied on the left (``retract``). A step is accepted only if it
    strictly lowers the cost. Reasons: ``cost_tol``, ``step_tol``,
    ``max_iters``, ``insufficient_constraints``, ``singular`` and
    ``max_failures`` (no decreasing step found after repeated damping).
    """
    cfg = cfg or SolverConfig()
    xi = np.array(xi0, dtype=float).reshape(6)
    blocks = blocks_builder(xi)
    rows = total_rows(blocks)
    cost = total_cost(blocks)
    report = SolveReport(xi.copy(), cost, cost, 0, False, "", [cost], rows)
    if rows < cfg.min_constraints:
        report.reason = "insufficient_constraints"
        return report

    lam = cfg.lambda0
    iters = 0
    while iters < cfg.max_iters:
        H, b = normal_equations(blocks)
        failures = 0
        singular = 0
        while True:
            delta = damped_step(H, b, lam)
            if delta is None:
                singular += 1
                failures += 1
                lam *= cfg.lambda_factor
            else:
                if np.linalg.norm(delta) < cfg.step_tol:
                    report.xi_opt, report.final_cost, report.iterations = xi, cost, iters
                    report.converged, report.reason = True, "step_tol"
                    return report
                xi_new = retract(xi, delta)
                new_blocks = blocks_builder(xi_new)
                new_cost = total_cost(new_blocks)
                if np.isfinite(new_cost) and new_cost < cost and total_rows(new_blocks) >= cfg.min_constraints:
                    break
                failures += 1
                lam *= cfg.lambda_factor
            if failures >= cfg.max_failures:
                report.xi_opt, report.final_cost, report.iterations = xi, cost, iters
                report.reason = "singular" if singular == failures else "max_failures"
                report.converged = report.reason == "max_failures" and iters > 0
                return report

        iters += 1
        lam = max(lam / cfg.lambda_factor, 1e-12)
        rel = (cost - new_cost) / cost if cost > 0 else 0.0
        xi, blocks, cost = xi_new, new_blocks, new_cost
        report.cost_history.append(cost)
        if rel < cfg.cost_tol:
            report.xi_opt, report.final_cost, report.iterations = xi, cost, iters
            report.converged, report.reason = True, "cost_tol"
            return report
        if np.linalg.norm(delta) < cfg.step_tol:
            report.xi_opt, report.final_cost, report.iterations = xi, cost, iters
            report.converged, report.reason = True, "step_tol"
            return report

    report.xi_opt, report.final_cost, report.iterations = xi, cost, iters
    report.reason = "max_iters"
    return report
