"""
Multitask Dantzig selector for the noiseless regime where tasks may have
fewer samples than features.

Solves::

    min  sum_m |v_m|_1
    s.t. X_m' (X_m (v_star + v_m) - y_m) = 0   for every task m

The normal-equation constraints of task ``m`` are equivalent to
``V_m' z = S_m^{-1} U_m' y_m`` with ``X_m = U_m S_m V_m'`` the thin SVD
restricted to its numerical rank, which is what the solver works with.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels
from .core import TaskDataset
from .exceptions import EmptyInput, NoConvergenceWarning, ShapeMismatch


@dataclass
class RecoveryProblem:
    tasks: Sequence[TaskDataset]
    solver_tolerance: float = 1e-8
    max_iterations: int = 50_000
    step: float = 1.0
    relaxation: float = 1.5
    polish: bool = True

    def __post_init__(self):
        if not self.tasks:
            raise EmptyInput("no tasks given")
        d = self.tasks[0].d
        if any(t.d != d for t in self.tasks):
            raise ShapeMismatch("all tasks must share the feature dimension")
        if self.solver_tolerance <= 0 or self.max_iterations < 1 or self.step <= 0:
            raise ValueError("tolerance, iteration cap and step must be positive")
        if not 0 < self.relaxation < 2:
            raise ValueError("relaxation must lie in (0, 2)")


@dataclass
class RecoveryResult:
    global_estimate: np.ndarray  # v_star
    deltas: List[np.ndarray]  # v_m
    objective: float
    max_constraint_violation: float
    converged: bool
    iterations: int = 0
    polished: bool = False

    @property
    def task_estimates(self) -> List[np.ndarray]:
        return [self.global_estimate + v for v in self.deltas]


def constraint_violation(tasks: Sequence[TaskDataset], v_star, deltas) -> float:
    """``max_m |X_m'(X_m(v_star + v_m) - y_m)|_inf``."""
    worst = 0.0
    for t, v in zip(tasks, deltas):
        g = t.features.T @ (t.features @ (v_star + v) - t.responses)
        worst = max(worst, float(np.max(np.abs(g))))
    return worst


def _reduced_constraints(tasks, rank_rtol=1e-10):
    rows, rhs = [], []
    for t in tasks:
        U, S, Vt = np.linalg.svd(t.features, full_matrices=False)
        if S.size == 0 or S[0] == 0.0:
            rows.append(np.zeros((0, t.d)))
            rhs.append(np.zeros(0))
            continue
        r = int(np.sum(S > S[0] * rank_rtol))
        rows.append(Vt[:r])
        rhs.append((U[:, :r].T @ t.responses) / S[:r])
    return rows, rhs


def _assemble(rows, d):
    M = len(rows)
    total = sum(r.shape[0] for r in rows)
    B = np.zeros((total, (M + 1) * d))
    at = 0
    for m, C in enumerate(rows):
        r = C.shape[0]
        B[at : at + r, :d] = C
        B[at : at + r, (m + 1) * d : (m + 2) * d] = C
        at += r
    return B


def _split(z, M, d):
    return z[:d].copy(), [z[(m + 1) * d : (m + 2) * d].copy() for m in range(M)]


def _polish(B, c, z, M, d):
    """Least-norm solve restricted to the support found by ADMM."""
    scale = max(1.0, float(np.max(np.abs(z[d:]))) if z.size > d else 1.0)
    keep = np.ones(z.size, dtype=bool)
    keep[d:] = np.abs(z[d:]) > 1e-6 * scale
    sol, *_ = np.linalg.lstsq(B[:, keep], c, rcond=None)
    out = np.zeros_like(z)
    out[keep] = sol
    return out


def multitask_dantzig(problem: RecoveryProblem) -> RecoveryResult:
    """Approximate minimizer of the multitask Dantzig program via over-relaxed ADMM.

    The ADMM alternates an exact projection onto the constraint set (a
    least-squares step in all variables), soft thresholding of the
    per-task deltas, and a scaled dual update. When ``polish`` is set the
    support of the final iterate is refit exactly and kept if it is
    feasible and does not increase the objective.
    """
    tasks = list(problem.tasks)
    M, d = len(tasks), tasks[0].d
    rows, rhs = _reduced_constraints(tasks)
    B = _assemble(rows, d)
    c = np.concatenate(rhs) if rhs else np.zeros(0)
    n_var = (M + 1) * d
    pen_mask = np.ones(n_var, dtype=bool)
    pen_mask[:d] = False

    if B.shape[0] == 0:
        z = np.zeros(n_var)
        v_star, deltas = _split(z, M, d)
        return RecoveryResult(v_star, deltas, 0.0, constraint_violation(tasks, v_star, deltas), True)

    # B B' has the identity contributed by the delta blocks, so it is well conditioned
    fac = cho_factor(B @ B.T)
    BtK = cho_solve(fac, B).T
    x, z, u, iters, admm_ok = kernels.admm_l1(
        B, BtK, c, pen_mask, np.zeros(n_var), np.zeros(n_var),
        1.0 / problem.step, problem.relaxation, problem.solver_tolerance, problem.max_iterations,
    )
    v_star, deltas = _split(x, M, d)
    best_obj = float(sum(np.abs(v).sum() for v in deltas))
    best_viol = constraint_violation(tasks, v_star, deltas)
    polished = False
    if problem.polish:
        zp = _polish(B, c, z, M, d)
        ps, pd = _split(zp, M, d)
        p_obj = float(sum(np.abs(v).sum() for v in pd))
        p_viol = constraint_violation(tasks, ps, pd)
        if p_viol <= max(best_viol, problem.solver_tolerance) and p_obj <= best_obj + problem.solver_tolerance:
            v_star, deltas, best_obj, best_viol, polished = ps, pd, p_obj, p_viol, True

    converged = bool(admm_ok) and best_viol <= problem.solver_tolerance
    if not converged:
        warnings.warn(
            f"multitask Dantzig solver stopped after {iters} iterations "
            f"(constraint violation {best_viol:.2e})",
            NoConvergenceWarning,
            stacklevel=2,
        )
    return RecoveryResult(
        global_estimate=v_star,
        deltas=deltas,
        objective=best_obj,
        max_constraint_violation=best_viol,
        converged=converged,
        iterations=int(iters),
        polished=polished,
    )


def project_unit_ball(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    return v if norm <= 1.0 else v / norm
