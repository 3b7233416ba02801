"""Command-line entry point: ``cphifi {synth,sample,decompose,bench}``."""
from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import sys

import numpy as np

from . import fileio
from .als import METHODS, CpHifiConfig, cp_hifi
from .bench import ExperimentSpec, run_experiment, synth_smooth_tensor
from .kernels import RkhsMode
from .linear_solvers import PcgConfig
from .sampled import sample_uniform

log = logging.getLogger("cphifi")


def _mode_value(text: str) -> tuple[int, str]:
    key, sep, val = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected k=value, got {text!r}")
    try:
        k = int(key)
    except ValueError:
        raise argparse.ArgumentTypeError(f"mode must be an integer in {text!r}")
    if k < 1:
        raise argparse.ArgumentTypeError("modes are numbered from 1")
    return k - 1, val


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tensor", help="dense tensor file (header+blob or raw .f64)")
    p.add_argument("--obs", help="observation file for unaligned data")
    p.add_argument("--shape", type=int, nargs="+", help="shape of a raw .f64 tensor")
    p.add_argument("--sigma", type=_mode_value, action="append", default=[],
                   metavar="K=SIGMA", help="kernel bandwidth for mode K (1-based)")
    p.add_argument("--default-sigma", type=float, default=2.0)
    p.add_argument("--points", type=_mode_value, action="append", default=[],
                   metavar="K=FILE", help="design-point file for mode K")
    p.add_argument("--finite", type=int, action="append", default=[], metavar="K",
                   help="treat mode K (1-based) as finite-dimensional")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--rho", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--max-outer", type=int, default=50)
    p.add_argument("--outer-tol", type=float, default=1e-6)
    p.add_argument("--max-inner", type=int, default=75)
    p.add_argument("--inner-tol", type=float, default=1e-6)
    p.add_argument("--warm-start", action="store_true",
                   help="start PCG from the previous outer iteration's W")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="cphifi_out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cphifi", description="Hybrid infinite/finite CP decomposition")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic smooth tensor")
    p.add_argument("--shape", type=int, nargs="+", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--width", type=float, default=None)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="tensor.bin")

    p = sub.add_parser("sample", help="sample q entries of a tensor into an observation file")
    p.add_argument("--tensor", default="tensor.bin")
    p.add_argument("--shape", type=int, nargs="+")
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="obs.txt")

    p = sub.add_parser("decompose", help="fit one CP-HIFI model")
    _add_model_args(p)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--method", choices=METHODS, default=None,
                   help="default: aligned-decoupled for --tensor, unaligned-pcg for --obs")

    p = sub.add_parser("bench", help="rank/solver sweep written as CSV")
    _add_model_args(p)
    p.add_argument("--ranks", "--rank", dest="ranks", type=int, nargs="+", required=True)
    p.add_argument("--method", "--methods", dest="methods", nargs="+",
                   choices=METHODS, default=["aligned-direct", "aligned-decoupled"])
    p.add_argument("--q", type=int, help="sample size for unaligned solvers")
    p.add_argument("--name", default=None, help="dataset name used in CSV file names")
    return parser


def _load_data(args):
    if bool(args.tensor) == bool(args.obs):
        raise SystemExit("error: give exactly one of --tensor or --obs")
    if args.obs:
        return fileio.read_observations(args.obs)
    return fileio.read_tensor(args.tensor, shape=args.shape)


def _modes(args, shape) -> list:
    sigmas = {k: float(v) for k, v in args.sigma}
    points = {k: fileio.read_points(v) for k, v in args.points}
    finite = {k - 1 for k in args.finite}
    for k in list(sigmas) + list(points) + list(finite):
        if not 0 <= k < len(shape):
            raise SystemExit(f"error: mode {k + 1} out of range for a {len(shape)}-way tensor")
    modes = []
    for k, n in enumerate(shape):
        if k in finite:
            modes.append(None)
        else:
            pts = points.get(k, np.arange(1, n + 1))
            modes.append(RkhsMode(pts, sigmas.get(k, args.default_sigma), args.lam))
    return modes


def cmd_synth(args) -> int:
    t = synth_smooth_tensor(args.shape, args.rank, args.width, args.noise, args.seed)
    fileio.write_tensor(args.out, t)
    print(f"wrote {args.out}: shape {' x '.join(map(str, t.shape))}")
    return 0


def cmd_sample(args) -> int:
    t = fileio.read_tensor(args.tensor, shape=args.shape)
    if args.q > t.size:
        raise SystemExit(f"error: q={args.q} exceeds the {t.size} entries of the tensor")
    obs = sample_uniform(t, args.q, args.seed)
    fileio.write_observations(args.out, obs)
    print(f"wrote {args.out}: {len(obs)} observations")
    return 0


def cmd_decompose(args) -> int:
    data = _load_data(args)
    method = args.method or ("unaligned-pcg" if args.obs else "aligned-decoupled")
    cfg = CpHifiConfig(
        rank=args.rank, modes=_modes(args, data.shape), method=method,
        rho=args.rho, max_outer=args.max_outer, outer_tol=args.outer_tol,
        inner=PcgConfig(args.inner_tol, args.max_inner), restarts=args.restarts,
        seed=args.seed, warm_start=args.warm_start, jobs=args.jobs)
    model, trace = cp_hifi(data, cfg)
    out = fileio.ensure_dir(args.out)
    for k, (a, w) in enumerate(zip(model.factors, model.kernel_weights), start=1):
        fileio.write_matrix(os.path.join(out, f"factor_{k}.bin"), a)
        if w is not None:
            fileio.write_matrix(os.path.join(out, f"weights_{k}.bin"), w)
    with open(os.path.join(out, "trace.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "rel_error", "objective", "time_s", "mean_inner_iters"])
        for it, (err, obj, tm, reps) in enumerate(
                zip(trace.errors, trace.objectives, trace.times, trace.reports), start=1):
            its = [r.iterations for r in reps if r.method.endswith("pcg")]
            writer.writerow([it, repr(err), repr(obj), repr(tm),
                             repr(float(np.mean(its))) if its else "0.0"])
    print(f"method={method} rank={args.rank} restart={trace.restart} "
          f"outer_iters={trace.outer_iterations} rel_error={trace.final_error:.6e} "
          f"time_s={trace.total_time:.3f}")
    return 0


def cmd_bench(args) -> int:
    if args.obs:
        raise SystemExit("error: bench samples its own observations; pass --tensor and --q")
    if not args.tensor:
        raise SystemExit("error: bench needs --tensor")
    t = fileio.read_tensor(args.tensor, shape=args.shape)
    name = args.name or os.path.splitext(os.path.basename(args.tensor))[0]
    spec = ExperimentSpec(
        tensor=t, name=name, sigmas={k: float(v) for k, v in args.sigma},
        default_sigma=args.default_sigma, finite_modes=tuple(k - 1 for k in args.finite),
        points={k: fileio.read_points(v) for k, v in args.points},
        lam=args.lam, rho=args.rho, ranks=tuple(args.ranks), solvers=tuple(args.methods),
        q=args.q, restarts=args.restarts, seed=args.seed, max_outer=args.max_outer,
        outer_tol=args.outer_tol, inner=PcgConfig(args.inner_tol, args.max_inner),
        warm_start=args.warm_start, out_dir=args.out, jobs=args.jobs)
    for path in run_experiment(spec).values():
        print(f"wrote {path}")
    return 0


COMMANDS = {"synth": cmd_synth, "sample": cmd_sample,
            "decompose": cmd_decompose, "bench": cmd_bench}


def _deterministic():
    if os.environ.get("CPHIFI_DETERMINISTIC") == "1":
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=1)
    return contextlib.nullcontext()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if os.environ.get("CPHIFI_DETERMINISTIC") == "1" and getattr(args, "jobs", 1) > 1:
        log.info("CPHIFI_DETERMINISTIC=1 forces --jobs 1")
        args.jobs = 1
    try:
        with _deterministic():
            return COMMANDS[args.command](args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
