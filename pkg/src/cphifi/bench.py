"""Synthetic smooth tensors and rank/solver sweeps written to CSV."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .als import ALIGNED_METHODS, METHODS, CpHifiConfig, cp_hifi
from .kernels import RkhsMode
from .linear_solvers import PcgConfig
from .sampled import sample_uniform
from .tensor_core import DenseTensor, KruskalModel, kruskal_full

CSV_COLUMNS = ("rank", "solver", "rel_error", "total_time_s", "outer_iters",
               "mean_inner_iters", "speedup_vs_direct", "note")
DIRECT_OF = {"aligned": "aligned-direct", "unaligned": "unaligned-direct"}


def synth_smooth_model(shape, rank: int, width: float | None = None,
                       seed=None) -> KruskalModel:
    """Kruskal model whose factor columns are Gaussian bumps on the grid 1..n.

    Bump centers are stratified across each mode (then shuffled per mode) so
    the components stay well separated. ``width`` defaults to ``n / (2 rank)``
    per mode, at least 1.
    """
    if rank < 1:
        raise ValueError("rank must be at least 1")
    rng = np.random.default_rng(seed)
    factors = []
    for n in shape:
        x = np.arange(1, n + 1, dtype=np.float64)
        w = width if width is not None else max(n / (2.0 * rank), 1.0)
        slots = (np.arange(rank) + 0.5) * n / rank + 0.5
        centers = rng.permutation(slots + rng.uniform(-0.25, 0.25, rank) * n / rank)
        amps = rng.uniform(0.5, 1.5, rank)
        factors.append(amps * np.exp(-(x[:, None] - centers) ** 2 / (2 * w * w)))
    return KruskalModel(factors)


def synth_smooth_tensor(shape, rank: int, width: float | None = None,
                        noise: float = 0.0, seed=None) -> DenseTensor:
    """Sum of ``rank`` smooth separable bumps plus optional Gaussian noise.

    ``noise`` is relative: the added noise has norm ``noise * ||X||``.
    """
    model = synth_smooth_model(shape, rank, width, seed)
    t = kruskal_full(model)
    if noise > 0:
        rng = np.random.default_rng([0 if seed is None else seed, 1])
        e = rng.standard_normal(t.size)
        t = DenseTensor(t.shape, t.data + noise * t.norm() * e / np.linalg.norm(e))
    return t


@dataclass
class ExperimentSpec:
    """One sweep: every (rank, solver) cell is a full multi-restart fit."""

    tensor: DenseTensor
    name: str = "synthetic"
    sigmas: dict[int, float] = field(default_factory=dict)
    default_sigma: float = 2.0
    finite_modes: tuple[int, ...] = ()
    points: dict[int, np.ndarray] = field(default_factory=dict)
    lam: float = 0.1
    rho: float = 1e-6
    ranks: tuple[int, ...] = (5,)
    solvers: tuple[str, ...] = ("aligned-direct", "aligned-decoupled")
    q: int | None = None
    restarts: int = 3
    seed: int = 0
    max_outer: int = 50
    outer_tol: float = 1e-6
    inner: PcgConfig = field(default_factory=PcgConfig)
    warm_start: bool = False
    out_dir: str = "."
    jobs: int = 1

    def __post_init__(self):
        if not self.ranks or not self.solvers:
            raise ValueError("need at least one rank and one solver")
        bad = [s for s in self.solvers if s not in METHODS]
        if bad:
            raise ValueError(f"unknown solvers {bad}")
        if any(s not in ALIGNED_METHODS for s in self.solvers):
            if self.q is None:
                raise ValueError("unaligned solvers need q")
            if not 0 < self.q <= self.tensor.size:
                raise ValueError(f"q must lie in (0, {self.tensor.size}]")

    def modes(self) -> list:
        modes = []
        for k, n in enumerate(self.tensor.shape):
            if k in self.finite_modes:
                modes.append(None)
                continue
            pts = self.points.get(k, np.arange(1, n + 1))
            modes.append(RkhsMode(pts, self.sigmas.get(k, self.default_sigma), self.lam))
        return modes


def _run_cell(spec: ExperimentSpec, modes, data, rank: int, solver: str) -> dict:
    cfg = CpHifiConfig(rank=rank, modes=modes, method=solver, rho=spec.rho,
                       max_outer=spec.max_outer, outer_tol=spec.outer_tol,
                       inner=spec.inner, restarts=spec.restarts, seed=spec.seed,
                       warm_start=spec.warm_start)
    row = {"rank": rank, "solver": solver, "note": ""}
    try:
        _, trace = cp_hifi(data, cfg)
    except Exception as exc:  # recorded per cell; the sweep continues
        row.update(rel_error=math.nan, total_time_s=math.nan, outer_iters=0,
                   mean_inner_iters=math.nan, note=f"{type(exc).__name__}: {exc}")
        return row
    row.update(rel_error=trace.final_error, total_time_s=trace.total_time,
               outer_iters=trace.outer_iterations,
               mean_inner_iters=trace.mean_inner_iterations)
    failed = sum(not math.isfinite(e) for e in trace.restart_errors)
    if failed:
        row["note"] = f"{failed} restart(s) failed"
    return row


def run_experiment(spec: ExperimentSpec) -> dict[str, str]:
    """Run the sweep; returns ``{alignment: csv_path}``.

    Rows are ordered by rank, then by the order solvers were given. The
    reported time is the alternating-loop wall time of the winning restart.
    """
    os.makedirs(spec.out_dir, exist_ok=True)
    modes = spec.modes()
    groups = {"aligned": [s for s in spec.solvers if s in ALIGNED_METHODS],
              "unaligned": [s for s in spec.solvers if s not in ALIGNED_METHODS]}
    datasets = {"aligned": spec.tensor}
    if groups["unaligned"]:
        datasets["unaligned"] = sample_uniform(spec.tensor, spec.q, spec.seed)

    paths = {}
    for alignment, solvers in groups.items():
        if not solvers:
            continue
        cells = [(r, s) for r in spec.ranks for s in solvers]
        data = datasets[alignment]
        if spec.jobs > 1:
            with ThreadPoolExecutor(max_workers=spec.jobs) as pool:
                rows = list(pool.map(
                    lambda c: _run_cell(spec, modes, data, *c), cells))
        else:
            rows = [_run_cell(spec, modes, data, *c) for c in cells]
        direct = DIRECT_OF[alignment]
        base = {row["rank"]: row["total_time_s"] for row in rows if row["solver"] == direct}
        for row in rows:
            t0 = base.get(row["rank"], math.nan)
            row["speedup_vs_direct"] = t0 / row["total_time_s"] if row["total_time_s"] else math.nan
        path = os.path.join(spec.out_dir, f"{spec.name}_{alignment}.csv")
        write_rows(path, rows, spec.jobs)
        paths[alignment] = path
    return paths


def write_rows(path, rows, jobs: int = 1) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# jobs={jobs}; time columns are comparable only across runs "
                 "with equal jobs\n")
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in CSV_COLUMNS})


def read_rows(path) -> list[dict]:
    """Parse a sweep CSV back into typed rows."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        out.append({
            "rank": int(row["rank"]), "solver": row["solver"],
            "rel_error": float(row["rel_error"]),
            "total_time_s": float(row["total_time_s"]),
            "outer_iters": int(row["outer_iters"]),
            "mean_inner_iters": float(row["mean_inner_iters"]),
            "speedup_vs_direct": float(row["speedup_vs_direct"]),
            "note": row["note"],
        })
    return out


def _fmt(value):
    if isinstance(value, float):
        return "NaN" if math.isnan(value) else repr(float(value))
    return value


__all__ = ["CSV_COLUMNS", "ExperimentSpec", "read_rows", "run_experiment",
           "synth_smooth_model", "synth_smooth_tensor", "write_rows"]
