"""Dense tensors, unfoldings and the Kronecker/Khatri-Rao product algebra.

Storage is column-major (first index fastest), so ``vec(T)`` is simply the
stored data and the mode-k unfolding orders its columns with the lowest
remaining mode varying fastest. That ordering is what makes

    unfold(full(A_1, ..., A_d), k) == A_k @ Z_k.T

hold with ``Z_k = A_d (kr) ... (kr) A_{k+1} (kr) A_{k-1} (kr) ... (kr) A_1``.

Modes are 0-based throughout the library.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

MAX_ORDER = 8


@dataclass(frozen=True)
class DenseTensor:
    """A d-way real tensor stored in column-major order.

    Parameters
    ----------
    shape : tuple of int
        Mode sizes ``(n_1, ..., n_d)``.
    data : ndarray
        Flat float64 array of length ``prod(shape)``; this *is* ``vec(T)``.
    """

    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if not shape or any(s < 1 for s in shape):
            raise ValueError(f"mode sizes must be positive, got {shape}")
        if len(shape) > MAX_ORDER:
            raise ValueError(f"tensors of order > {MAX_ORDER} are not supported")
        data = np.ascontiguousarray(self.data, dtype=np.float64).ravel()
        if data.size != int(np.prod(shape)):
            raise ValueError(
                f"data length {data.size} does not match shape {shape}")
        data.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array) -> "DenseTensor":
        array = np.asarray(array, dtype=np.float64)
        return cls(array.shape, array.ravel(order="F"))

    @classmethod
    def zeros(cls, shape) -> "DenseTensor":
        return cls(tuple(shape), np.zeros(int(np.prod(shape))))

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return self.data.size

    def to_array(self) -> np.ndarray:
        """Return a read-only ndarray view with the tensor's shape."""
        return self.data.reshape(self.shape, order="F")

    def vec(self) -> np.ndarray:
        return self.data

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def unfold(self, k: int) -> np.ndarray:
        return unfold(self, k)


@dataclass
class KruskalModel:
    """Rank-r CP model stored as its factor matrices.

    ``kernel_weights[k]`` holds ``W_k`` for modes represented in an RKHS
    (where ``factors[k] == K_k @ W_k``) and is ``None`` for finite modes.
    """

    factors: list[np.ndarray]
    kernel_weights: list[np.ndarray | None] = field(default_factory=list)

    def __post_init__(self):
        self.factors = [np.asarray(f, dtype=np.float64) for f in self.factors]
        if not self.factors:
            raise ValueError("a Kruskal model needs at least one factor")
        ranks = {f.shape[1] for f in self.factors if f.ndim == 2}
        if any(f.ndim != 2 for f in self.factors) or len(ranks) != 1:
            raise ValueError("factors must be 2-D and share a column count")
        if not self.kernel_weights:
            self.kernel_weights = [None] * len(self.factors)
        if len(self.kernel_weights) != len(self.factors):
            raise ValueError("kernel_weights must have one entry per mode")

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def ndim(self) -> int:
        return len(self.factors)

    def full(self) -> DenseTensor:
        return kruskal_full(self)

    def copy(self) -> "KruskalModel":
        return KruskalModel(
            [f.copy() for f in self.factors],
            [None if w is None else w.copy() for w in self.kernel_weights])


def _check_mode(k: int, d: int) -> None:
    if not 0 <= k < d:
        raise IndexError(f"mode {k} out of range for a {d}-way tensor")


def unfold(t: DenseTensor, k: int) -> np.ndarray:
    """Mode-k unfolding ``T_(k)`` of shape ``(n_k, N / n_k)``."""
    _check_mode(k, t.ndim)
    arr = np.moveaxis(t.to_array(), k, 0)
    return arr.reshape(t.shape[k], -1, order="F")


def fold(mat: np.ndarray, k: int, shape: Sequence[int]) -> DenseTensor:
    """Inverse of :func:`unfold`."""
    shape = tuple(shape)
    _check_mode(k, len(shape))
    rest = shape[:k] + shape[k + 1:]
    arr = np.asarray(mat, dtype=np.float64).reshape((shape[k],) + rest, order="F")
    return DenseTensor.from_array(np.moveaxis(arr, 0, k))


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product; block (i, j) of the result is ``a[i, j] * b``."""
    return np.kron(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def khatri_rao(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Columnwise Kronecker product of ``mats`` in the given order.

    Column j of the result is ``kron(mats[0][:, j], mats[1][:, j], ...)``,
    so the last matrix's row index varies fastest.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    if not mats:
        raise ValueError("khatri_rao needs at least one matrix")
    r = mats[0].shape[1]
    if any(m.ndim != 2 or m.shape[1] != r for m in mats):
        raise ValueError("all Khatri-Rao inputs must share a column count")

    def step(acc, m):
        return (acc[:, None, :] * m[None, :, :]).reshape(-1, r)

    return reduce(step, mats[1:], mats[0])


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a * b


def other_factors(factors: Sequence[np.ndarray], k: int) -> list[np.ndarray]:
    """Factors in Z_k order: ``A_d, ..., A_{k+1}, A_{k-1}, ..., A_1``."""
    return [factors[i] for i in reversed(range(len(factors))) if i != k]


def khatri_rao_except(factors: Sequence[np.ndarray], k: int) -> np.ndarray:
    """Materialize ``Z_k``; only used by the dense MTTKRP and test oracles."""
    return khatri_rao(other_factors(factors, k))


def _factors_of(model) -> list[np.ndarray]:
    return model.factors if isinstance(model, KruskalModel) else list(model)


def mttkrp(t: DenseTensor, model, k: int) -> np.ndarray:
    """Matricized tensor times Khatri-Rao product ``T_(k) @ Z_k``."""
    factors = _factors_of(model)
    if len(factors) != t.ndim:
        raise ValueError("model order does not match tensor order")
    for i, f in enumerate(factors):
        if i != k and f.shape[0] != t.shape[i]:
            raise ValueError(
                f"factor {i} has {f.shape[0]} rows, tensor mode has {t.shape[i]}")
    _check_mode(k, t.ndim)
    return unfold(t, k) @ khatri_rao_except(factors, k)


def gram_khatri_rao(model, k: int) -> np.ndarray:
    """``Z_k.T @ Z_k`` as the Hadamard product of the per-mode Grams."""
    factors = _factors_of(model)
    r = factors[0].shape[1]
    v = np.ones((r, r))
    for i, f in enumerate(factors):
        if i != k:
            v *= f.T @ f
    return v


def kruskal_full(model) -> DenseTensor:
    """Reconstruct the dense tensor ``sum_j A_1[:, j] o ... o A_d[:, j]``."""
    factors = _factors_of(model)
    shape = tuple(f.shape[0] for f in factors)
    if len(factors) == 1:
        return DenseTensor(shape, factors[0].sum(axis=1))
    # (Z_1 A_1')' is T_(1); its C-order ravel is vec(T) in column-major order
    return DenseTensor(shape, (khatri_rao_except(factors, 0) @ factors[0].T).ravel())
