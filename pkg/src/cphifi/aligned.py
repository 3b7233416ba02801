"""Solvers for the aligned infinite-mode subproblem

    (V kron K + lam I) vec(W) = vec(B),   B = T_(k) Z,  V = Z'Z.

``W`` and ``B`` are n x r; vec is column-major, so ``(V kron K) vec(X)``
equals ``vec(K X V)`` (V is symmetric).
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .kernels import RkhsMode, sym_eig
from .linear_solvers import (LinearOperator, PcgConfig, SolveReport,
                             SolverError, cholesky_solve, pcg)

DIRECT_SIZE_CAP = 6000


@dataclass
class AlignedSubproblem:
    """One mode-k solve. ``lam`` defaults to the mode's own lambda."""

    B: np.ndarray
    V: np.ndarray
    mode: RkhsMode
    lam: float | None = None

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=np.float64)
        self.V = np.asarray(self.V, dtype=np.float64)
        if self.lam is None:
            self.lam = self.mode.lam
        n, r = self.B.shape
        if self.V.shape != (r, r) or self.mode.n != n:
            raise ValueError("B, V and kernel sizes do not conform")

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def r(self) -> int:
        return self.B.shape[1]


def aligned_residual(p: AlignedSubproblem, w: np.ndarray) -> float:
    """``||vec(K W V + lam W) - vec(B)|| / ||B||`` without Kronecker products."""
    res = p.mode.kernel @ w @ p.V + p.lam * w - p.B
    bnorm = np.linalg.norm(p.B)
    return float(np.linalg.norm(res) / (bnorm if bnorm > 0 else 1.0))


def solve_aligned_direct(p: AlignedSubproblem, cap: int = DIRECT_SIZE_CAP):
    """Baseline: form the rn x rn matrix and Cholesky-factor it."""
    start = time.perf_counter()
    n, r = p.n, p.r
    if n * r > cap:
        raise MemoryError(f"direct aligned solve of size {n * r} exceeds cap {cap}")
    a = np.kron(p.V, p.mode.kernel)
    a[np.diag_indices_from(a)] += p.lam
    x = cholesky_solve(a, p.B.ravel(order="F"))
    w = x.reshape(n, r, order="F")
    report = SolveReport("aligned-direct", residual=aligned_residual(p, w),
                         wall_time=time.perf_counter() - start)
    return w, report


def solve_aligned_decoupled(p: AlignedSubproblem):
    """Closed-form solve in the joint eigenbasis of K and V.

    ``W = U_K ((U_K' B U_V) * D) U_V'`` with
    ``D[i, j] = 1 / (d_K[i] d_V[j] + lam)``.
    """
    start = time.perf_counter()
    uk, dk = p.mode.eig
    uv, dv = sym_eig(p.V, sym_tol=1e-10)
    denom = np.outer(dk, dv) + p.lam
    if np.any(denom <= 0):
        raise SolverError("zero eigenvalue with lam = 0; use lam > 0")
    w = uk @ (((uk.T @ p.B) @ uv) / denom) @ uv.T
    report = SolveReport("aligned-decoupled", residual=aligned_residual(p, w),
                         wall_time=time.perf_counter() - start)
    return w, report


def aligned_matvec(x: np.ndarray, dk: np.ndarray, v: np.ndarray,
                   lam: float) -> np.ndarray:
    """``(V kron diag(dk) + lam I) x`` computed as ``vec(diag(dk) X V + lam X)``."""
    n = dk.size
    xm = x.reshape(n, -1, order="F")
    return (dk[:, None] * (xm @ v) + lam * xm).ravel(order="F")


def solve_aligned_pcg(p: AlignedSubproblem, cfg: PcgConfig = PcgConfig(),
                      w0: np.ndarray | None = None):
    """PCG on the system rotated by ``I kron U_K'``, with a diagonal preconditioner.

    The rotated operator is ``V kron D_K + lam I``; the preconditioner keeps
    only ``diag(V)``. Since the rotation is orthogonal, the residual of the
    rotated system equals the residual of the original one.
    """
    start = time.perf_counter()
    uk, dk = p.mode.eig
    n, r = p.n, p.r
    bbar = (uk.T @ p.B).ravel(order="F")
    op = LinearOperator(n * r, lambda x: aligned_matvec(x, dk, p.V, p.lam))
    precond = np.outer(dk, np.diag(p.V)).ravel(order="F") + p.lam
    if np.any(precond <= 0):
        raise SolverError("diagonal preconditioner has a nonpositive entry; use lam > 0")
    m_inv = LinearOperator.diagonal(1.0 / precond)
    x0 = None if w0 is None else (uk.T @ w0).ravel(order="F")
    xbar, report = pcg(op, m_inv, bbar, cfg, x0=x0)
    w = uk @ xbar.reshape(n, r, order="F")
    report.method = "aligned-pcg"
    report.residual = aligned_residual(p, w)
    report.wall_time = time.perf_counter() - start
    return w, report
