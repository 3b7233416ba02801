"""Alternating optimization for CP-HIFI.

Each outer sweep updates the modes in order 0..d-1. Finite modes get the
usual CP-ALS least-squares update; RKHS modes solve for ``W_k`` with the
configured subproblem solver and set ``A_k = K_k W_k``.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import aligned, unaligned
from .kernels import RkhsMode
from .linear_solvers import PcgConfig, SolveReport, SolverError
from .sampled import (ObservationSet, build_zhat, model_values, omega_norm,
                      sampled_mttkrp)
from .tensor_core import DenseTensor, KruskalModel, gram_khatri_rao, kruskal_full, mttkrp

log = logging.getLogger(__name__)

ALIGNED_METHODS = ("aligned-direct", "aligned-decoupled", "aligned-pcg")
UNALIGNED_METHODS = ("unaligned-direct", "unaligned-pcg")
METHODS = ALIGNED_METHODS + UNALIGNED_METHODS
INIT_LAMBDA = 1e-8


@dataclass
class CpHifiConfig:
    """Settings for one CP-HIFI fit.

    ``modes[k]`` is an :class:`RkhsMode` for an infinite-dimensional mode and
    ``None`` for a finite one. ``lam``, when given, overrides every RKHS
    mode's own lambda.
    """

    rank: int
    modes: list
    method: str = "aligned-decoupled"
    lam: float | None = None
    rho: float = 1e-6
    max_outer: int = 50
    outer_tol: float = 1e-6
    inner: PcgConfig = field(default_factory=PcgConfig)
    restarts: int = 3
    seed: int = 0
    warm_start: bool = False
    jobs: int = 1
    track_mode_objective: bool = False

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.restarts < 1:
            raise ValueError("need at least one restart")
        if self.max_outer < 0:
            raise ValueError("max_outer must be nonnegative")
        if self.method == "unaligned-pcg" and not self.rho > 0:
            raise ValueError("unaligned-pcg needs rho > 0")
        if self.lam is not None:
            self.modes = [m if m is None else m.with_lambda(self.lam)
                          for m in self.modes]

    @property
    def is_aligned(self) -> bool:
        return self.method in ALIGNED_METHODS


@dataclass
class FitTrace:
    """Per-outer-iteration history of one restart."""

    restart: int
    initial_error: float = float("nan")
    initial_objective: float = float("nan")
    errors: list[float] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    reports: list[list[SolveReport]] = field(default_factory=list)
    mode_objectives: list[list[float]] = field(default_factory=list)
    total_time: float = 0.0
    failure: str | None = None
    restart_errors: list[float] = field(default_factory=list)

    @property
    def outer_iterations(self) -> int:
        return len(self.errors)

    @property
    def final_error(self) -> float:
        if self.failure is not None:
            return float("nan")
        return self.errors[-1] if self.errors else self.initial_error

    @property
    def mean_inner_iterations(self) -> float:
        its = [rep.iterations for sweep in self.reports for rep in sweep
               if rep.method.endswith("pcg")]
        return float(np.mean(its)) if its else 0.0


class AlsState:
    """Data, factors and configuration for one restart."""

    def __init__(self, data, cfg: CpHifiConfig, model: KruskalModel):
        if isinstance(data, ObservationSet):
            if cfg.is_aligned:
                if not data.is_aligned:
                    raise ValueError(f"{cfg.method} needs fully observed data")
                data = data.to_dense()
        elif isinstance(data, DenseTensor):
            if not cfg.is_aligned:
                data = ObservationSet.full(data)
        else:
            raise TypeError("data must be a DenseTensor or an ObservationSet")
        if len(cfg.modes) != len(data.shape):
            raise ValueError("need one mode kind per tensor mode")
        for k, m in enumerate(cfg.modes):
            if m is not None and m.n != data.shape[k]:
                raise ValueError(f"mode {k}: kernel size {m.n} != {data.shape[k]}")
        if model.shape != tuple(data.shape):
            raise ValueError("model shape does not match data")
        self.data = data
        self.cfg = cfg
        self.model = model
        self.data_norm = (data.norm() if isinstance(data, DenseTensor)
                          else omega_norm(data))

    @property
    def aligned(self) -> bool:
        return isinstance(self.data, DenseTensor)


def random_init(shape, cfg: CpHifiConfig, rng: np.random.Generator) -> KruskalModel:
    """Uniform(0, 1) factors; RKHS modes are projected to ``A = K W``."""
    factors, weights = [], []
    for n, mode in zip(shape, cfg.modes):
        a = rng.random((n, cfg.rank))
        w = None
        if mode is not None:
            uk, dk = mode.eig
            w = uk @ ((uk.T @ a) / (dk + INIT_LAMBDA)[:, None])
            a = mode.kernel @ w
        factors.append(a)
        weights.append(w)
    return KruskalModel(factors, weights)


def fit_residual_sq(state: AlsState) -> float:
    if state.aligned:
        diff = state.data.data - kruskal_full(state.model).data
    else:
        diff = state.data.values - model_values(state.model, state.data)
    return float(diff @ diff)


def relative_error(state: AlsState) -> float:
    """Fit-only relative error, restricted to Omega for unaligned data."""
    if state.data_norm == 0:
        raise ValueError("relative error undefined for all-zero data")
    return float(np.sqrt(fit_residual_sq(state)) / state.data_norm)


def regularization(state: AlsState) -> float:
    total = 0.0
    for mode, w in zip(state.cfg.modes, state.model.kernel_weights):
        if mode is not None and w is not None:
            total += mode.lam * float(np.sum(w * (mode.kernel @ w)))
    return total


def objective(state: AlsState) -> float:
    """Fit term plus ``sum_k lam_k trace(W_k' K_k W_k)`` over RKHS modes."""
    return fit_residual_sq(state) + regularization(state)


def _error_and_objective(state: AlsState) -> tuple[float, float]:
    fit = fit_residual_sq(state)
    if state.data_norm == 0:
        raise ValueError("relative error undefined for all-zero data")
    return float(np.sqrt(fit) / state.data_norm), fit + regularization(state)


def update_finite_mode(state: AlsState, k: int) -> np.ndarray:
    model = state.model
    if state.aligned:
        b = mttkrp(state.data, model, k)
        v = gram_khatri_rao(model, k)
        a = b @ np.linalg.pinv(v, hermitian=True)
    else:
        obs = state.data
        zhat = build_zhat(model, k, obs)
        r = zhat.shape[1]
        b = sampled_mttkrp(obs, zhat, k)
        outer = (zhat[:, :, None] * zhat[:, None, :]).reshape(len(obs), r * r)
        grams = np.asarray(obs.selector(k) @ outer).reshape(-1, r, r)
        # minimum-norm least squares per row; empty rows give zero
        a = np.einsum("irs,is->ir", np.linalg.pinv(grams, hermitian=True), b)
    model.factors[k] = a
    model.kernel_weights[k] = None
    return a


def update_infinite_mode(state: AlsState, k: int) -> tuple[np.ndarray, SolveReport]:
    cfg, model = state.cfg, state.model
    mode = cfg.modes[k]
    v = gram_khatri_rao(model, k)
    w0 = model.kernel_weights[k] if cfg.warm_start else None
    method = cfg.method
    if state.aligned:
        p = aligned.AlignedSubproblem(mttkrp(state.data, model, k), v, mode)
        if method == "aligned-direct":
            w, rep = aligned.solve_aligned_direct(p)
        elif method == "aligned-decoupled":
            w, rep = aligned.solve_aligned_decoupled(p)
        else:
            w, rep = aligned.solve_aligned_pcg(p, cfg.inner, w0=w0)
    else:
        zhat = build_zhat(model, k, state.data)
        p = unaligned.UnalignedSubproblem.from_model(
            state.data, k, zhat, mode, v, rho=cfg.rho)
        if method == "unaligned-direct":
            w, rep = unaligned.solve_unaligned_direct_nonsym(p)
        else:
            w, rep = unaligned.solve_unaligned_pcg(p, cfg.inner, w0=w0)
    model.kernel_weights[k] = w
    model.factors[k] = mode.kernel @ w
    return w, rep


def run_restart(data, cfg: CpHifiConfig, restart: int,
                model: KruskalModel | None = None):
    """One alternating-optimization run from the restart's seeded init."""
    rng = np.random.default_rng([cfg.seed, restart])
    if model is None:
        model = random_init(data.shape, cfg, rng)
    state = AlsState(data, cfg, model)
    trace = FitTrace(restart=restart)
    trace.initial_error, trace.initial_objective = _error_and_objective(state)
    prev = trace.initial_error
    start = time.perf_counter()
    try:
        for _ in range(cfg.max_outer):
            sweep, mode_obj = [], []
            for k, mode in enumerate(cfg.modes):
                if mode is None:
                    update_finite_mode(state, k)
                else:
                    sweep.append(update_infinite_mode(state, k)[1])
                if cfg.track_mode_objective:
                    mode_obj.append(objective(state))
            err, obj = _error_and_objective(state)
            trace.errors.append(err)
            trace.objectives.append(obj)
            trace.times.append(time.perf_counter() - start)
            trace.reports.append(sweep)
            trace.mode_objectives.append(mode_obj)
            if abs(err - prev) <= cfg.outer_tol:
                break
            prev = err
    except (SolverError, MemoryError, np.linalg.LinAlgError) as exc:
        trace.failure = f"{type(exc).__name__}: {exc}"
        log.warning("restart %d failed: %s", restart, trace.failure)
    trace.total_time = time.perf_counter() - start
    return state.model, trace


def cp_hifi(data, cfg: CpHifiConfig):
    """Fit a CP-HIFI model, keeping the restart with the lowest final error.

    Returns
    -------
    model : KruskalModel
        Factors, with ``kernel_weights[k] = W_k`` for RKHS modes.
    trace : FitTrace
        History of the winning restart; ``restart_errors`` lists the final
        error of every restart.
    """
    restarts = range(cfg.restarts)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(lambda i: run_restart(data, cfg, i), restarts))
    else:
        results = [run_restart(data, cfg, i) for i in restarts]
    errors = [tr.final_error for _, tr in results]
    ok = [i for i, e in enumerate(errors) if np.isfinite(e)]
    if not ok:
        raise SolverError("every restart failed: "
                          + "; ".join(tr.failure or "?" for _, tr in results))
    best = min(ok, key=lambda i: errors[i])
    model, trace = results[best]
    trace.restart_errors = errors
    return model, trace
