"""Observed-entry sets and the sampled kernels built on them.

The selection matrix S is never formed. An :class:`ObservationSet` keeps the
q observed multi-indices, and per-mode bucket structures (which entries share
a given mode-k index) are built lazily and cached, since the scatter step runs
once per PCG iteration.
"""
from __future__ import annotations

import threading
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .tensor_core import DenseTensor


CHUNK_ROWS = 16384


class ObservationSet:
    """The set Omega of known entries of a d-way tensor.

    Parameters
    ----------
    shape : sequence of int
        Mode sizes of the full tensor.
    indices : array_like of int, shape (q, d)
        0-based multi-indices of the observed entries, pairwise distinct.
    values : array_like of float, shape (q,)
        Observed values, in the same order as ``indices``.
    """

    def __init__(self, shape: Sequence[int], indices, values):
        self.shape = tuple(int(s) for s in shape)
        d = len(self.shape)
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            idx = idx.reshape(0, d)
        if idx.ndim != 2 or idx.shape[1] != d:
            raise ValueError(f"indices must have shape (q, {d})")
        vals = np.asarray(values, dtype=np.float64).ravel()
        if vals.size != idx.shape[0]:
            raise ValueError("need exactly one value per multi-index")
        if np.any(idx < 0) or np.any(idx >= np.array(self.shape)):
            raise ValueError("observation index outside tensor shape")
        lin = np.ravel_multi_index(idx.T, self.shape, order="F") if idx.size else idx[:, 0]
        if np.unique(lin).size != lin.size:
            raise ValueError("duplicate multi-index in observation set")
        idx.setflags(write=False)
        vals.setflags(write=False)
        self.indices = idx
        self.values = vals
        self._linear = lin
        self._selectors: dict[int, sp.csr_matrix] = {}
        self._chunks: dict[int, list] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self.indices.shape[0]

    def __repr__(self) -> str:
        return f"ObservationSet(shape={self.shape}, q={len(self)})"

    @property
    def q(self) -> int:
        return len(self)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def density(self) -> float:
        """gamma = q / N."""
        return len(self) / float(np.prod(self.shape))

    @property
    def is_aligned(self) -> bool:
        return len(self) == int(np.prod(self.shape))

    def linear_indices(self) -> np.ndarray:
        """Column-major linear index of each observation into vec(T)."""
        return self._linear

    def selector(self, k: int) -> sp.csr_matrix:
        """Sparse n_k x q 0/1 matrix with a one at (i_k^(l), l).

        Multiplying by it sums over each mode-k bucket; it is the scatter
        half of S restricted to mode k.
        """
        sel = self._selectors.get(k)
        if sel is None:
            with self._lock:
                sel = self._selectors.get(k)
                if sel is None:
                    q = len(self)
                    sel = sp.csr_matrix(
                        (np.ones(q), (self.indices[:, k], np.arange(q))),
                        shape=(self.shape[k], q))
                    sel.sort_indices()
                    self._selectors[k] = sel
        return sel

    def chunks(self, k: int) -> list[tuple[int, int, np.ndarray, sp.csr_matrix]]:
        """Blocks of CHUNK_ROWS consecutive entries: ``(start, stop, i_k, selector)``.

        Used by :func:`gather_scatter` so each block of ``zhat`` is read once
        while it is still in cache.
        """
        blocks = self._chunks.get(k)
        if blocks is None:
            with self._lock:
                blocks = self._chunks.get(k)
                if blocks is None:
                    blocks = []
                    ik = np.ascontiguousarray(self.indices[:, k])
                    for start in range(0, len(self), CHUNK_ROWS):
                        stop = min(len(self), start + CHUNK_ROWS)
                        rows = ik[start:stop]
                        sel = sp.csr_matrix(
                            (np.ones(rows.size), (rows, np.arange(rows.size))),
                            shape=(self.shape[k], rows.size))
                        blocks.append((start, stop, rows, sel))
                    self._chunks[k] = blocks
        return blocks

    def buckets(self, k: int) -> list[np.ndarray]:
        """For each i in [n_k], the entry numbers l with i_k^(l) = i."""
        sel = self.selector(k)
        return [sel.indices[sel.indptr[i]:sel.indptr[i + 1]]
                for i in range(self.shape[k])]

    @classmethod
    def full(cls, t: DenseTensor) -> "ObservationSet":
        """Aligned observation set containing every entry of ``t``."""
        idx = np.array(np.unravel_index(np.arange(t.size), t.shape, order="F")).T
        return cls(t.shape, idx, t.data)

    def permuted(self, perm) -> "ObservationSet":
        perm = np.asarray(perm)
        return ObservationSet(self.shape, self.indices[perm], self.values[perm])

    def to_dense(self) -> DenseTensor:
        """Dense tensor with zeros at unobserved entries."""
        data = np.zeros(int(np.prod(self.shape)))
        data[self._linear] = self.values
        return DenseTensor(self.shape, data)


def omega_norm(obs: ObservationSet) -> float:
    return float(np.linalg.norm(obs.values))


def sample_uniform(source: DenseTensor, q: int, seed=None) -> ObservationSet:
    """Draw q distinct entries of ``source`` uniformly without replacement."""
    n = source.size
    if q > n:
        raise ValueError(f"cannot sample q={q} entries from a tensor with {n}")
    if q < 0:
        raise ValueError("q must be nonnegative")
    rng = np.random.default_rng(seed)
    lin = np.sort(rng.choice(n, size=q, replace=False))
    idx = np.array(np.unravel_index(lin, source.shape, order="F")).T.reshape(q, -1)
    return ObservationSet(source.shape, idx, source.data[lin])


def build_zhat(model, k: int, obs: ObservationSet) -> np.ndarray:
    """Rows of Z_k at the observed entries, shape (q, r).

    Row l is the Hadamard product of ``A_i[i_i^(l), :]`` over i != k.
    """
    factors = model.factors if hasattr(model, "factors") else list(model)
    if len(factors) != obs.ndim:
        raise ValueError("model order does not match observation set")
    for i, f in enumerate(factors):
        if i != k and f.shape[0] != obs.shape[i]:
            raise ValueError(f"factor {i} does not match mode size {obs.shape[i]}")
    r = factors[0].shape[1]
    zhat = np.ones((len(obs), r))
    order = [i for i in reversed(range(len(factors))) if i != k]
    for i in order:
        zhat *= factors[i][obs.indices[:, i], :]
    return zhat


def build_khat(kernel: np.ndarray, k: int, obs: ObservationSet) -> np.ndarray:
    """Row l is ``kernel[i_k^(l), :]``."""
    kernel = np.asarray(kernel)
    if kernel.shape[0] != obs.shape[k]:
        raise IndexError("kernel size does not match mode size")
    return kernel[obs.indices[:, k], :]


def sampled_mttkrp(obs: ObservationSet, zhat: np.ndarray, k: int,
                   weights=None) -> np.ndarray:
    """Scatter ``weights[l] * zhat[l, :]`` into row i_k^(l); shape (n_k, r).

    With ``weights`` omitted the observed values are used, which gives the
    MTTKRP ``B = T_(k) Z_k`` of the zero-filled tensor.
    """
    w = obs.values if weights is None else np.asarray(weights, dtype=np.float64)
    if zhat.shape[0] != len(obs) or w.shape[0] != len(obs):
        raise ValueError("zhat and weights need one row per observation")
    return obs.selector(k) @ (w[:, None] * zhat)


def gather_rows(xhat: np.ndarray, zhat: np.ndarray, obs: ObservationSet,
                k: int) -> np.ndarray:
    """``xbar[l] = xhat[i_k^(l), :] . zhat[l, :]`` for every observation."""
    if xhat.shape[1] != zhat.shape[1] or zhat.shape[0] != len(obs):
        raise ValueError("xhat/zhat shapes do not conform")
    return np.einsum("lj,lj->l", xhat[obs.indices[:, k]], zhat)


def gather_scatter(xhat: np.ndarray, zhat: np.ndarray, obs: ObservationSet,
                   k: int) -> np.ndarray:
    """``sampled_mttkrp(obs, zhat, k, gather_rows(xhat, zhat, obs, k))``, fused.

    Works through the observations in blocks so the q x r temporaries never
    leave cache; for large q this halves the memory traffic.
    """
    if xhat.shape[1] != zhat.shape[1] or zhat.shape[0] != len(obs):
        raise ValueError("xhat/zhat shapes do not conform")
    out = None
    for start, stop, rows, sel in obs.chunks(k):
        z = zhat[start:stop]
        xbar = np.einsum("lj,lj->l", xhat[rows], z)
        part = sel @ (xbar[:, None] * z)
        out = part if out is None else out + part
    return np.zeros((obs.shape[k], zhat.shape[1])) if out is None else out


def model_values(model, obs: ObservationSet) -> np.ndarray:
    """Evaluate a Kruskal model at every observed multi-index."""
    factors = model.factors if hasattr(model, "factors") else list(model)
    zhat = build_zhat(factors, 0, obs)
    return gather_rows(factors[0], zhat, obs, 0)


__all__ = [
    "ObservationSet", "omega_norm", "sample_uniform", "build_zhat",
    "build_khat", "sampled_mttkrp", "gather_rows", "gather_scatter", "model_values",
]
