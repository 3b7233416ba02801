"""Kernel matrices for RKHS modes and their cached eigendecomposition."""
from __future__ import annotations

import threading
from typing import Callable

import numpy as np


def gaussian_kernel(points, sigma: float) -> np.ndarray:
    """Squared-exponential kernel ``exp(-(x_i - x_j)**2 / (2 sigma**2))``."""
    if not sigma > 0:
        raise ValueError(f"bandwidth must be positive, got {sigma}")
    x = np.asarray(points, dtype=np.float64).ravel()
    diff = x[:, None] - x[None, :]
    return np.exp(-(diff * diff) / (2.0 * sigma * sigma))


KERNELS: dict[str, Callable[..., np.ndarray]] = {"gaussian": gaussian_kernel}


def sym_eig(k: np.ndarray, sym_tol: float = 1e-12):
    """Eigendecomposition ``K = U diag(d) U.T`` of a symmetric PSD matrix.

    Roundoff-negative eigenvalues are clamped to zero.

    Returns
    -------
    u : ndarray (n, n)
        Orthogonal eigenvectors.
    d : ndarray (n,)
        Nonnegative eigenvalues, ascending.
    """
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(np.abs(k).max(), 1.0) if k.size else 1.0
    if np.abs(k - k.T).max(initial=0.0) > sym_tol * scale:
        raise ValueError("matrix is not symmetric")
    d, u = np.linalg.eigh(k)
    return u, np.maximum(d, 0.0)


class RkhsMode:
    """An infinite-dimensional mode: design points, kernel and its eigenpairs.

    The eigendecomposition is computed on first use and then reused for the
    lifetime of the object; ``factorization_count`` records how many times it
    actually ran (at most once).
    """

    def __init__(self, points, sigma: float, lam: float = 0.1,
                 kernel: str = "gaussian"):
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        self.points = np.asarray(points, dtype=np.float64).ravel()
        self.sigma = float(sigma)
        self.lam = float(lam)
        self.kind = kernel
        try:
            self.kernel = KERNELS[kernel](self.points, self.sigma)
        except KeyError:
            raise ValueError(f"unknown kernel {kernel!r}; known: {sorted(KERNELS)}")
        self.kernel.setflags(write=False)
        self.factorization_count = 0
        self._eig = None
        self._lock = threading.Lock()

    @classmethod
    def from_matrix(cls, kernel, lam: float = 0.1) -> "RkhsMode":
        """Wrap a precomputed symmetric PSD kernel matrix (points are 0..n-1)."""
        kernel = np.array(kernel, dtype=np.float64)
        if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
            raise ValueError("kernel matrix must be square")
        if not np.allclose(kernel, kernel.T, atol=1e-12):
            raise ValueError("kernel matrix must be symmetric")
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        mode = object.__new__(cls)
        mode.points = np.arange(kernel.shape[0], dtype=np.float64)
        mode.sigma = float("nan")
        mode.lam = float(lam)
        mode.kind = "matrix"
        mode.kernel = kernel
        mode.kernel.setflags(write=False)
        mode.factorization_count = 0
        mode._eig = None
        mode._lock = threading.Lock()
        return mode

    @classmethod
    def on_grid(cls, n: int, sigma: float, lam: float = 0.1) -> "RkhsMode":
        """Design points 1..n, the default for a mode of size n."""
        return cls(np.arange(1, n + 1), sigma, lam)

    @property
    def n(self) -> int:
        return self.points.size

    @property
    def eig(self):
        if self._eig is None:
            with self._lock:
                if self._eig is None:
                    u, d = sym_eig(self.kernel)
                    u.setflags(write=False)
                    d.setflags(write=False)
                    self.factorization_count += 1
                    self._eig = (u, d)
        return self._eig

    def with_lambda(self, lam: float) -> "RkhsMode":
        """Same kernel and (shared) eigendecomposition, different lambda."""
        other = object.__new__(RkhsMode)
        other.__dict__.update(self.__dict__)
        other.lam = float(lam)
        other._lock = self._lock
        self.eig  # factor once, share with the copy
        other._eig = self._eig
        return other

    def __repr__(self) -> str:
        return f"RkhsMode(n={self.n}, sigma={self.sigma}, lam={self.lam})"
