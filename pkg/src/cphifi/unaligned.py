"""Solvers for the unaligned infinite-mode subproblem.

With F = S'(Z kron K) (the rows of Z kron K at the observed entries) the
rho-shifted symmetric system is

    (F'F + lam (I kron K) + rho I) vec(W) = vec(K B),

and the nonsymmetric system obtained by factoring out (I kron K) is

    (G'F + lam I) vec(W) = vec(B),   G = S'(Z kron I).

The PCG path never forms F: each matvec is a kernel multiply, a gather over
the q observations, a scatter back to the mode-k rows and a second kernel
multiply.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .kernels import RkhsMode, sym_eig
from .linear_solvers import (LinearOperator, PcgConfig, SolveReport,
                             SolverError, cholesky_solve, lu_solve, pcg)
from .sampled import ObservationSet, build_khat, gather_scatter, sampled_mttkrp

DENSE_ENTRY_CAP = 2 * 10**8


@dataclass
class UnalignedSubproblem:
    """One unaligned mode-k solve.

    ``B`` is the sampled MTTKRP and ``V`` the full Gram ``Z'Z`` (used only
    by the preconditioner). ``gamma`` defaults to the observation density.
    """

    obs: ObservationSet
    k: int
    zhat: np.ndarray
    mode: RkhsMode
    B: np.ndarray
    V: np.ndarray
    rho: float = 1e-6
    lam: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.lam is None:
            self.lam = self.mode.lam
        if self.gamma is None:
            self.gamma = self.obs.density
        if self.zhat.shape[0] != len(self.obs):
            raise ValueError("zhat needs one row per observation")
        if self.B.shape != (self.mode.n, self.zhat.shape[1]):
            raise ValueError("B must be n x r")
        if not 0 < self.gamma <= 1 and len(self.obs):
            raise ValueError("gamma must lie in (0, 1]")

    @classmethod
    def from_model(cls, obs: ObservationSet, k: int, zhat: np.ndarray,
                   mode: RkhsMode, V: np.ndarray, **kw) -> "UnalignedSubproblem":
        return cls(obs, k, zhat, mode, sampled_mttkrp(obs, zhat, k), V, **kw)

    @property
    def n(self) -> int:
        return self.mode.n

    @property
    def r(self) -> int:
        return self.zhat.shape[1]


def _check_dense(p: UnalignedSubproblem, rows: int) -> None:
    if rows * p.n * p.r > DENSE_ENTRY_CAP:
        raise MemoryError(
            f"dense {rows} x {p.n * p.r} matrix exceeds the entry cap {DENSE_ENTRY_CAP}")


def _rowwise_kron(zhat: np.ndarray, right: np.ndarray) -> np.ndarray:
    # row l is kron(zhat[l], right[l]); column index j*n + i matches vec(W)
    q, r = zhat.shape
    return (zhat[:, :, None] * right[:, None, :]).reshape(q, r * right.shape[1])


def build_F(p: UnalignedSubproblem) -> np.ndarray:
    _check_dense(p, len(p.obs))
    return _rowwise_kron(p.zhat, build_khat(p.mode.kernel, p.k, p.obs))


def build_G(p: UnalignedSubproblem) -> np.ndarray:
    _check_dense(p, len(p.obs))
    ihat = np.zeros((len(p.obs), p.n))
    ihat[np.arange(len(p.obs)), p.obs.indices[:, p.k]] = 1.0
    return _rowwise_kron(p.zhat, ihat)


def solve_unaligned_direct_nonsym(p: UnalignedSubproblem):
    """Baseline: form G'F + lam I densely and LU-solve it."""
    start = time.perf_counter()
    n, r = p.n, p.r
    _check_dense(p, n * r)
    a = build_G(p).T @ build_F(p)
    a[np.diag_indices_from(a)] += p.lam
    b = p.B.ravel(order="F")
    x, cond = lu_solve(a, b, return_cond=True)
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(a @ x - b) / (bnorm if bnorm > 0 else 1.0)
    w = x.reshape(n, r, order="F")
    report = SolveReport("unaligned-direct", residual=float(res),
                         cond_estimate=cond, wall_time=time.perf_counter() - start)
    return w, report


def unaligned_matvec(p: UnalignedSubproblem, x: np.ndarray) -> np.ndarray:
    """``(F'F + lam (I kron K) + rho I) x`` in O(n^2 r + q r)."""
    kern = p.mode.kernel
    xm = x.reshape(p.n, p.r, order="F")
    xhat = kern @ xm
    yhat = gather_scatter(xhat, p.zhat, p.obs, p.k)
    y = kern @ yhat + p.lam * xhat + p.rho * xm
    return y.ravel(order="F")


def build_preconditioner(p: UnalignedSubproblem) -> LinearOperator:
    """Inverse of ``gamma (V kron K^2) + lam (I kron K) + rho I``.

    Uses SS' ~ gamma I. Applied in the eigenbases of K and V:
    ``M^{-1} x = U_K ((U_K' X U_V) * D) U_V'``.
    """
    uk, dk = p.mode.eig
    uv, dv = sym_eig(p.V, sym_tol=1e-10)
    denom = p.gamma * np.outer(dk * dk, dv) + p.lam * dk[:, None] + p.rho
    if np.any(denom <= 0):
        raise SolverError("preconditioner is singular; rho must be positive")
    scale = 1.0 / denom
    n, r = p.n, p.r

    def apply(x):
        xm = x.reshape(n, r, order="F")
        return (uk @ (((uk.T @ xm) @ uv) * scale) @ uv.T).ravel(order="F")

    return LinearOperator(n * r, apply)


def unaligned_sym_residual(p: UnalignedSubproblem, w: np.ndarray) -> float:
    b = (p.mode.kernel @ p.B).ravel(order="F")
    res = unaligned_matvec(p, w.ravel(order="F")) - b
    bnorm = np.linalg.norm(b)
    return float(np.linalg.norm(res) / (bnorm if bnorm > 0 else 1.0))


def solve_unaligned_pcg(p: UnalignedSubproblem, cfg: PcgConfig = PcgConfig(),
                        w0: np.ndarray | None = None):
    """PCG on the rho-shifted symmetric system with the Kronecker preconditioner."""
    start = time.perf_counter()
    if not p.rho > 0:
        raise ValueError("the symmetric unaligned system needs rho > 0")
    n, r = p.n, p.r
    b = (p.mode.kernel @ p.B).ravel(order="F")
    op = LinearOperator(n * r, lambda x: unaligned_matvec(p, x))
    x0 = None if w0 is None else np.asarray(w0).ravel(order="F")
    x, report = pcg(op, build_preconditioner(p), b, cfg, x0=x0)
    report.method = "unaligned-pcg"
    report.wall_time = time.perf_counter() - start
    return x.reshape(n, r, order="F"), report


def assemble_unaligned_sym_dense(p: UnalignedSubproblem):
    """Dense ``F'F + lam (I kron K) + rho I`` and ``vec(K B)``; a test oracle."""
    _check_dense(p, p.n * p.r)
    f = build_F(p)
    a = f.T @ f + p.lam * np.kron(np.eye(p.r), p.mode.kernel)
    a[np.diag_indices_from(a)] += p.rho
    return a, (p.mode.kernel @ p.B).ravel(order="F")


def solve_unaligned_direct_sym(p: UnalignedSubproblem) -> np.ndarray:
    """Cholesky solve of the dense symmetric system (oracle only)."""
    a, b = assemble_unaligned_sym_dense(p)
    return cholesky_solve(a, b).reshape(p.n, p.r, order="F")
