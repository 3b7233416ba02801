"""Dense direct solves and a preconditioned conjugate gradient engine."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla


class SolverError(RuntimeError):
    """A subproblem solve failed (breakdown, non-PD pivot, singular matrix)."""


@dataclass(frozen=True)
class LinearOperator:
    """A square operator given only by its action on vectors."""

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)

    @classmethod
    def from_matrix(cls, a: np.ndarray) -> "LinearOperator":
        a = np.asarray(a, dtype=np.float64)
        return cls(a.shape[0], lambda x: a @ x)

    @classmethod
    def identity(cls, dim: int) -> "LinearOperator":
        return cls(dim, lambda x: x.copy())

    @classmethod
    def diagonal(cls, diag: np.ndarray) -> "LinearOperator":
        diag = np.asarray(diag, dtype=np.float64)
        return cls(diag.size, lambda x: diag * x)


@dataclass(frozen=True)
class PcgConfig:
    tol: float = 1e-6
    max_iter: int = 75
    record_history: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class SolveReport:
    """Outcome of one subproblem solve.

    ``residual`` is ``||b - A x|| / ||b||`` on the unpreconditioned system.
    ``iterations`` is 0 for direct methods. ``cond_estimate`` is the
    reciprocal-condition-based estimate from LU, when one was computed.
    """

    method: str
    iterations: int = 0
    residual: float = 0.0
    wall_time: float = 0.0
    converged: bool = True
    cond_estimate: float | None = None
    history: list[float] = field(default_factory=list)


def pcg(a: LinearOperator, m_inv: LinearOperator, b: np.ndarray,
        cfg: PcgConfig = PcgConfig(), x0: np.ndarray | None = None):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Textbook preconditioned CG. Stops once ``||b - A x|| / ||b|| <= cfg.tol``
    or after ``cfg.max_iter`` iterations; in the latter case the iterate with
    the smallest residual seen is returned and the report is marked
    unconverged.

    Raises
    ------
    SolverError
        On a non-finite value or a nonpositive curvature ``p.T A p``.
    """
    start = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    if a.dim != b.size or m_inv.dim != b.size:
        raise ValueError("operator dimensions do not match right-hand side")
    if not np.all(np.isfinite(b)):
        raise SolverError("right-hand side is not finite")

    bnorm = np.linalg.norm(b)
    report = SolveReport("pcg")
    if bnorm == 0.0:
        report.wall_time = time.perf_counter() - start
        return np.zeros_like(b), report

    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=np.float64)
        r = b - a(x)
    rel = np.linalg.norm(r) / bnorm
    best_x, best_rel = x.copy(), rel
    if cfg.record_history:
        report.history.append(rel)

    it = 0
    if rel > cfg.tol:
        z = m_inv(r)
        p = z.copy()
        rz = r @ z
        while it < cfg.max_iter:
            ap = a(p)
            curv = p @ ap
            if not np.isfinite(curv) or curv <= 0:
                raise SolverError(
                    f"PCG breakdown at iteration {it}: p'Ap = {curv:.3e}; "
                    "operator is not positive definite (is rho > 0?)")
            alpha = rz / curv
            x += alpha * p
            r -= alpha * ap
            it += 1
            rel = math.sqrt(r @ r) / bnorm
            if not np.isfinite(rel):
                raise SolverError(f"PCG produced non-finite residual at iteration {it}")
            if cfg.record_history:
                report.history.append(rel)
            if rel < best_rel:
                best_x, best_rel = x.copy(), rel
            if rel <= cfg.tol:
                break
            z = m_inv(r)
            rz_new = r @ z
            if not np.isfinite(rz_new) or rz_new <= 0:
                raise SolverError(
                    f"preconditioner is not positive definite (r'z = {rz_new:.3e})")
            p = z + (rz_new / rz) * p
            rz = rz_new

    report.iterations = it
    report.residual = float(best_rel)
    report.converged = best_rel <= cfg.tol
    report.wall_time = time.perf_counter() - start
    return best_x, report


def cholesky_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive definite ``A``."""
    try:
        factor = sla.cho_factor(a, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            f"Cholesky failed ({exc}); matrix is not positive definite, "
            "check lambda/rho") from None
    return sla.cho_solve(factor, b)


def lu_solve(a: np.ndarray, b: np.ndarray, return_cond: bool = False):
    """Solve the square system ``A x = b`` by partial-pivoting LU.

    With ``return_cond`` also returns a 1-norm condition number estimate
    (from LAPACK ``gecon``), ``inf`` for a numerically singular matrix.
    """
    a = np.asarray(a, dtype=np.float64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, check_finite=True)
    if np.any(np.diag(lu) == 0):
        raise SolverError("matrix is singular")
    x = sla.lu_solve((lu, piv), b)
    if not return_cond:
        return x
    anorm = np.linalg.norm(a, 1)
    rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    return x, float(cond)
