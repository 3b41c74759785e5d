"""
Dense numerical primitives: least squares, Lasso, coordinate-wise
median, trimmed mean and soft thresholding.

Everything here is a pure function of its arguments.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from .exceptions import EmptyInput, InvalidTrim, NoConvergenceWarning, ShapeMismatch, SingularDesign

DEFAULT_RANK_TOL = 1e-10


@dataclass
class TaskDataset:
    """One task: an ``n x d`` design (rows are observations) and its responses."""

    task_id: int
    features: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.responses, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or y.ndim != 1:
            raise ShapeMismatch("features must be 2-d and responses 1-d")
        if X.shape[0] != y.shape[0]:
            raise ShapeMismatch(
                f"task {self.task_id}: {X.shape[0]} feature rows but {y.shape[0]} responses"
            )
        if X.shape[0] < 1:
            raise EmptyInput(f"task {self.task_id} has no observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError(f"task {self.task_id} contains non-finite values")
        self.features = X
        self.responses = y

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass
class OlsFit:
    coefficients: np.ndarray
    leverage_diag: np.ndarray  # diag of (X'X)^{-1}
    sample_size: int
    residual_ss: float = 0.0


@dataclass
class LassoConfig:
    penalty: float = 0.0
    tolerance: float = 1e-7
    max_iterations: int = 10_000
    center_offset: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.penalty < 0:
            raise ValueError("penalty must be nonnegative")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


def ols_fit(data: TaskDataset, rank_tol: float = DEFAULT_RANK_TOL) -> OlsFit:
    """Ordinary least squares through a thin QR of the design.

    Raises
    ------
    SingularDesign
        If ``n < d`` or ``lambda_min(X'X) / lambda_max(X'X) < rank_tol``.
    """
    X, y = data.features, data.responses
    n, d = X.shape
    if n < d:
        raise SingularDesign(f"task {data.task_id}: n={n} < d={d}", task_id=data.task_id)
    Q, R = np.linalg.qr(X, mode="reduced")
    sv = np.linalg.svd(R, compute_uv=False)
    if sv[0] == 0.0 or (sv[-1] / sv[0]) ** 2 < rank_tol:
        raise SingularDesign(
            f"task {data.task_id}: Gram matrix is numerically singular", task_id=data.task_id
        )
    coef = solve_triangular(R, Q.T @ y)
    R_inv = solve_triangular(R, np.eye(d))
    # (X'X)^{-1} = R^{-1} R^{-T}
    leverage = np.einsum("ij,ij->i", R_inv, R_inv)
    resid = y - X @ coef
    return OlsFit(coefficients=coef, leverage_diag=leverage, sample_size=n, residual_ss=float(resid @ resid))


def lasso_fit(
    data: TaskDataset,
    config: LassoConfig,
    warm_start: Optional[np.ndarray] = None,
    return_info: bool = False,
):
    """Minimize ``(1/2n)|y - X b|^2 + penalty * |b - center_offset|_1``.

    Solved by cyclic coordinate descent on the Gram matrix; stops when the
    largest coefficient change in a sweep falls below ``config.tolerance``.
    If the sweep cap is hit a :class:`NoConvergenceWarning` is emitted and
    the last iterate is returned.

    With ``return_info=True`` also returns a dict holding ``sweeps``,
    ``converged`` and the per-sweep ``objective_history``.
    """
    X, y = data.features, data.responses
    n, d = X.shape
    center = np.zeros(d) if config.center_offset is None else np.asarray(config.center_offset, float)
    if center.shape != (d,):
        raise ShapeMismatch(f"center_offset has shape {center.shape}, expected ({d},)")
    resid0 = y - X @ center
    G = X.T @ X / n
    q = X.T @ resid0 / n
    theta0 = np.zeros(d) if warm_start is None else np.asarray(warm_start, float) - center
    theta, sweeps, converged, history = kernels.lasso_cd(
        G, q, config.penalty, theta0, config.tolerance, config.max_iterations
    )
    if not converged:
        warnings.warn(
            f"lasso on task {data.task_id} did not converge in {config.max_iterations} sweeps",
            NoConvergenceWarning,
            stacklevel=2,
        )
    beta = center + theta
    if return_info:
        # shift back to the full objective so values are comparable across calls
        const = 0.5 * (resid0 @ resid0) / n
        info = {
            "sweeps": int(sweeps),
            "converged": bool(converged),
            "objective_history": np.asarray(history) + const,
        }
        return beta, info
    return beta


def lasso_objective(data: TaskDataset, beta, penalty, center_offset=None):
    X, y = data.features, data.responses
    r = y - X @ beta
    c = 0.0 if center_offset is None else np.asarray(center_offset)
    return 0.5 * (r @ r) / data.n + penalty * np.abs(beta - c).sum()


def _stack(vectors) -> np.ndarray:
    if vectors is None or len(vectors) == 0:
        raise EmptyInput("need at least one vector")
    try:
        arr = np.asarray([np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in vectors])
    except ValueError as exc:
        raise ShapeMismatch("all vectors must have the same length") from exc
    if arr.ndim != 2:
        raise ShapeMismatch("all vectors must have the same length")
    return arr


def coordinatewise_median(estimates: Sequence) -> np.ndarray:
    """Per-coordinate sample median; even counts take the midpoint of the middle pair."""
    return np.median(_stack(estimates), axis=0)


def trim_count(m: int, trim_fraction: float) -> int:
    """Number of values dropped from each side: ceil(trim_fraction * m)."""
    if not 0.0 <= trim_fraction < 0.5:
        raise InvalidTrim(f"trim_fraction must lie in [0, 0.5), got {trim_fraction}")
    # guard against 0.1 * 30 == 3.0000000000000004
    return int(math.ceil(trim_fraction * m - 1e-9))


def trimmed_mean(values: Sequence, trim_fraction: float) -> np.ndarray:
    """Coordinate-wise mean after removing the ``ceil(trim_fraction*M)`` largest and smallest values."""
    arr = _stack(values)
    m = arr.shape[0]
    g = trim_count(m, trim_fraction)
    if 2 * g >= m:
        raise InvalidTrim(f"trimming {g} per side leaves nothing out of {m}")
    if g == 0:
        return arr.mean(axis=0)
    return np.sort(arr, axis=0)[g : m - g].mean(axis=0)


def soft_shrink(x, lam):
    """``sign(x) * max(|x| - lam, 0)``; works on scalars and arrays."""
    if np.any(np.asarray(lam) < 0):
        raise ValueError("lambda must be nonnegative")
    out = np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)
    if np.ndim(out) == 0:
        return float(out)
    return out


def gram_min_eig_ratio(X) -> float:
    """``lambda_min(X'X) / n`` for an ``n x d`` design (0 for an empty one)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    if n == 0:
        return 0.0
    ev = np.linalg.eigvalsh(X.T @ X)
    if ev[-1] <= 0.0 or ev[0] <= 1e-12 * ev[-1]:
        return 0.0
    return float(ev[0]) / n
