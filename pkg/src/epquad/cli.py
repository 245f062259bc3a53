"""Command-line interface.

Subcommands::

    simulate       integrate the Burgers' model and write a snapshot archive
    infer          POD-reduce an archive and infer a standard or EP model
    transform      rewrite an energy-preserving H in skew-block form
    check-ep       report the worst energy-preservation residual of H
    verify-counts  compare constraint ranks with their closed forms
    predict        integrate an inferred model and score it
    benchmark      full r-sweep with diagnostics CSVs

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error,
3 numerical failure.
"""

import argparse
import csv
import json
import os
import platform
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .burgers2d import (BurgersConfig, build_operators, load_snapshots,
                        mean_maxnorm_error, save_snapshots, simulate)
from .constraints import (MAX_N, build_system, count_independent_constraints,
                          expected_counts, extract_A1, numerical_rank)
from .errors import (BlowUpError, DimensionError, InferenceError,
                     InternalConsistencyError, NotEnergyPreservingError,
                     UnstableModelError)
from .matrixio import read_matrix, write_matrix
from .opinf import (InferenceConfig, TrainingData, infer, load_model,
                    save_model)
from .quadop import QuadOp, energy_report
from .rom import energy_trace, integrate_rom, pod_reduce, reprojection
from .skewrep import FreeEntrySpec, to_row_skew, to_skew_block

__all__ = ["PipelineConfig", "BenchmarkResult", "run_benchmark", "main"]

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid configuration file or option."""


def versions():
    return {
        "epquad": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class PipelineConfig:
    burgers: BurgersConfig = field(default_factory=BurgersConfig)
    r_list: tuple = (5, 7, 9, 11, 13, 15)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    output_dir: str = "benchmark_out"
    seed: int = 0

    def __post_init__(self):
        r_list = tuple(int(r) for r in self.r_list)
        if not r_list:
            raise ValueError("r_list must not be empty")
        if any(r < 1 for r in r_list):
            raise ValueError("every r in r_list must be at least 1")
        if list(r_list) != sorted(set(r_list)):
            raise ValueError("r_list must be strictly ascending")
        object.__setattr__(self, "r_list", r_list)

    @classmethod
    def from_dict(cls, d):
        known = {"burgers", "r_list", "inference", "output_dir", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        kw = dict(d)
        if "burgers" in kw:
            kw["burgers"] = BurgersConfig.from_dict(kw["burgers"])
        if "inference" in kw:
            kw["inference"] = InferenceConfig.from_dict(kw["inference"])
        return cls(**kw)

    def to_dict(self):
        return {
            "burgers": self.burgers.to_dict(),
            "r_list": list(self.r_list),
            "inference": self.inference.to_dict(),
            "output_dir": self.output_dir,
            "seed": self.seed,
        }


def _load_config(path, kind):
    """Build a config object from an optional JSON file."""
    d = {} if path is None else _read_json(path)
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    try:
        return kind.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def worker_count(n_tasks):
    """Parallel workers for ``n_tasks`` jobs, capped by ``EPQUAD_THREADS``."""
    raw = os.environ.get("EPQUAD_THREADS")
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(f"EPQUAD_THREADS must be an integer, got {raw!r}") from None
        if cap < 1:
            raise ConfigError("EPQUAD_THREADS must be at least 1")
    return max(1, min(cap, n_tasks))


# benchmark ------------------------------------------------------------------

@dataclass
class ModelRun:
    model: object
    sweeps: list
    error: float = float("nan")
    unstable: bool = False
    unstable_time: float = None
    Xhat: np.ndarray = None
    trace: object = None


@dataclass
class RResult:
    r: int
    reprojection_error: float
    reprojection_frobenius: float
    runs: dict  # mode -> ModelRun
    basis: object = None


@dataclass
class BenchmarkResult:
    config: PipelineConfig
    snapshots: object
    results: list
    wall_time: float

    def by_r(self, r):
        for res in self.results:
            if res.r == r:
                return res
        raise KeyError(r)


def relative_frobenius(truth, pred):
    return float(np.linalg.norm(truth - pred) / np.linalg.norm(truth))


def _evaluate_r(r, snap, inference, cfg):
    basis, Xhat, Xdot_hat = pod_reduce(snap.X, r, snap.Xdot)
    data = TrainingData(Xhat, Xdot_hat, include_constant=inference.include_constant)
    X_rep = reprojection(basis, snap.X)
    runs = {}
    for mode in ("standard", "energy_preserving"):
        conf = InferenceConfig(**{**inference.to_dict(), "mode": mode})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model, sweeps = infer(data, conf)
        run = ModelRun(model=model, sweeps=sweeps)
        try:
            times, Xr = integrate_rom(model, basis.V.T @ snap.X[:, 0], cfg.dt, cfg.T)
        except UnstableModelError as exc:
            run.unstable = True
            run.unstable_time = exc.time
        else:
            run.Xhat = Xr
            run.error = mean_maxnorm_error(snap.X, basis.V @ Xr)
            run.trace = energy_trace(model, times, Xr)
        runs[mode] = run
    return RResult(r=r, reprojection_error=mean_maxnorm_error(snap.X, X_rep),
                   reprojection_frobenius=relative_frobenius(snap.X, X_rep),
                   runs=runs, basis=basis)


def run_benchmark(config, snapshots=None):
    """Simulate, then reduce, infer both ways, integrate and score per ``r``."""
    start = time.perf_counter()
    cfg = config.burgers
    snap = simulate(cfg) if snapshots is None else snapshots
    if max(config.r_list) > min(snap.X.shape):
        raise ConfigError(f"r = {max(config.r_list)} exceeds the snapshot rank bound "
                          f"{min(snap.X.shape)}")
    workers = worker_count(len(config.r_list))
    if workers == 1:
        results = [_evaluate_r(r, snap, config.inference, cfg) for r in config.r_list]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: _evaluate_r(r, snap, config.inference, cfg),
                                    config.r_list))
    return BenchmarkResult(config=config, snapshots=snap, results=results,
                           wall_time=time.perf_counter() - start)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_benchmark(result, out_dir):
    """Write the CSV diagnostics, ``summary.json`` and ``meta.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config.burgers

    rows = []
    for res in result.results:
        std, ep = res.runs["standard"], res.runs["energy_preserving"]
        rows.append([res.r, std.error, ep.error, res.reprojection_error,
                     std.unstable, ep.unstable])
    _write_csv(out / "error_vs_r.csv",
               ["r", "error_standard", "error_ep", "error_reprojection",
                "unstable_standard", "unstable_ep"], rows)

    # Energy budget and final-time field at the largest r.
    top = result.results[-1]
    times = result.snapshots.times
    nan = np.full(len(times), np.nan)
    cols = {}
    for key, mode in (("std", "standard"), ("ep", "energy_preserving")):
        tr = top.runs[mode].trace
        cols[f"lin_{key}"] = nan if tr is None else tr.linear
        cols[f"quad_{key}"] = nan if tr is None else tr.quadratic
        cols[f"cum_lin_{key}"] = nan if tr is None else tr.cumulative_linear
        cols[f"cum_quad_{key}"] = nan if tr is None else tr.cumulative_quadratic
        cols[f"energy_{key}"] = nan if tr is None else tr.energy
    header = ["t", "lin_std", "quad_std", "lin_ep", "quad_ep",
              "cum_lin_std", "cum_quad_std", "cum_lin_ep", "cum_quad_ep",
              "energy_std", "energy_ep"]
    _write_csv(out / "energy_trace.csv", header,
               zip(times, *(cols[h] for h in header[1:])))

    ops = build_operators(cfg)
    Xg, Yg = np.meshgrid(ops.x, ops.y)
    ep_run = top.runs["energy_preserving"]
    u_rom = (np.full(cfg.n, np.nan) if ep_run.Xhat is None
             else top.basis.V @ ep_run.Xhat[:, -1])
    _write_csv(out / "prediction_t4.csv", ["x", "y", "u_fom", "u_rom"],
               zip(Xg.ravel(), Yg.ravel(), result.snapshots.X[:, -1], u_rom))

    per_r = []
    for res in result.results:
        entry = {"r": res.r, "error_reprojection": res.reprojection_error}
        for key, mode in (("standard", "standard"), ("ep", "energy_preserving")):
            run = res.runs[mode]
            entry[key] = {
                "error": None if run.unstable else run.error,
                "unstable": run.unstable,
                "unstable_time": run.unstable_time,
                "lambdas": [float(v) for v in run.model.lambdas],
                "lcurve_fallback_rows": [s.row for s in run.sweeps if s.fallback],
            }
        per_r.append(entry)
    summary = {
        "results": per_r,
        "prediction_model": {"mode": "ep", "r": top.r, "t": float(times[-1])},
        "wall_time_s": result.wall_time,
        "config": result.config.to_dict(),
        "versions": versions(),
    }
    _write_json(out / "summary.json", summary)
    _write_json(out / "meta.json", {"config": result.config.to_dict(),
                                    "versions": versions()})


# subcommands -----------------------------------------------------------------

def cmd_simulate(args):
    cfg = _load_config(args.config, BurgersConfig)
    snap = simulate(cfg, fd_derivatives=args.fd_derivatives)
    save_snapshots(snap, args.out)
    _write_json(Path(args.out) / "meta.json",
                {"config": cfg.to_dict(), "fd_derivatives": args.fd_derivatives,
                 "versions": versions()})
    print(f"wrote {snap.n} x {snap.m} snapshots to {args.out}")
    return EXIT_OK


def cmd_infer(args):
    conf = _load_config(args.config, InferenceConfig)
    overrides = {"mode": args.mode}
    if args.shared_lambda:
        overrides["shared_lambda"] = True
    conf = InferenceConfig(**{**conf.to_dict(), **overrides})
    snap = load_snapshots(args.snapshots)
    if not 1 <= args.r <= min(snap.X.shape):
        raise ConfigError(f"r = {args.r} must lie in 1..{min(snap.X.shape)}")
    basis, Xhat, Xdot_hat = pod_reduce(snap.X, args.r, snap.Xdot)
    data = TrainingData(Xhat, Xdot_hat, U=snap.U, include_constant=conf.include_constant)
    model, sweeps = infer(data, conf)
    model = type(model)(model.c_hat, model.A_hat, model.H_hat, model.B_hat,
                        mode=model.mode, lambdas=model.lambdas, V=basis.V)
    save_model(model, args.out, extra_meta={
        "inference": conf.to_dict(),
        "lcurve_fallback_rows": [s.row for s in sweeps if s.fallback],
        "snapshots": str(args.snapshots),
        "versions": versions(),
    })
    print(f"wrote {conf.to_dict()['mode']} model with r = {args.r} to {args.out}")
    return EXIT_OK


def cmd_transform(args):
    H = QuadOp(read_matrix(args.H))
    if args.form == "row-skew":
        if args.free:
            raise ConfigError("--free applies to the skew-block form only")
        Ht = to_row_skew(H, tol=args.tol)
    else:
        free = FreeEntrySpec.from_file(args.free) if args.free else None
        Ht = to_skew_block(H, free=free, tol=args.tol)
    write_matrix(args.out, Ht.entries, comments=[f"quadop n={Ht.n}", f"form {args.form}"])
    print(f"wrote {args.form} operator (n = {Ht.n}) to {args.out}")
    return EXIT_OK


def cmd_check_ep(args):
    H = QuadOp(read_matrix(args.H))
    report = energy_report(H, tol=args.tol)
    i, j, k = report.worst_triple
    print(f"n = {H.n}, conditions = {report.n_conditions}")
    print(f"worst triple ({i}, {j}, {k}) residual {report.worst_residual:.3e} "
          f"threshold {report.threshold:.3e}")
    print("energy-preserving" if report.ok else "NOT energy-preserving")
    return EXIT_OK if report.ok else EXIT_CHECK


def cmd_verify_counts(args):
    ns = [args.n] if args.n is not None else list(range(1, 7))
    ok = True
    print(f"{'n':>3} {'quantity':<12} {'rows':>6} {'rank':>6} {'expected':>8}")
    for n in ns:
        if not 1 <= n <= MAX_N:
            raise ConfigError(f"n must lie in 1..{MAX_N}")
        exp = expected_counts(n)
        system = build_system(n)
        A1 = extract_A1(system)
        table = [
            ("A", system.A_mat, exp["A_rows"]),
            ("B", system.B_mat, exp["B_rows"]),
            ("C", system.C_mat, exp["C_rows"]),
            ("A1", A1, exp["A1_rows"]),
            ("[A1; C]", np.vstack([A1, system.C_mat]), exp["A1C_rank"]),
        ]
        for name, M, want in table:
            rank = numerical_rank(M)
            ok &= rank == want
            print(f"{n:>3} {name:<12} {M.shape[0]:>6} {rank:>6} {want:>8}")
        try:
            total = count_independent_constraints(n)
        except InternalConsistencyError as exc:
            print(f"{n:>3} {'independent':<12} {exc}")
            ok = False
        else:
            print(f"{n:>3} {'independent':<12} {'':>6} {total:>6} {exp['independent']:>8}")
        nullity = n ** 3 - numerical_rank(np.vstack([A1, system.C_mat]))
        ok &= nullity == exp["nullity"]
        print(f"{n:>3} {'nullity':<12} {'':>6} {nullity:>6} {exp['nullity']:>8}")
    print("all counts match" if ok else "MISMATCH")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_predict(args):
    model = load_model(args.model)
    if model.V is None:
        raise ConfigError(f"{args.model} has no basis V.txt")
    snap = load_snapshots(args.snapshots)
    cfg_d = snap.config or {}
    dt = args.dt if args.dt is not None else cfg_d.get("dt")
    T = args.T if args.T is not None else cfg_d.get("T")
    if dt is None or T is None:
        raise ConfigError("dt and T are needed (from the snapshot config or flags)")
    if model.V.shape[0] != snap.n:
        raise ConfigError(f"basis has {model.V.shape[0]} rows, snapshots have {snap.n}")
    times, Xhat = integrate_rom(model, model.V.T @ snap.X[:, 0], dt, T)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "Xhat.txt", Xhat)
    write_matrix(out / "times.txt", times)
    result = {"r": model.r, "mode": model.mode, "dt": dt, "T": T}
    if len(times) == snap.m:
        result["error"] = mean_maxnorm_error(snap.X, model.V @ Xhat)
        print(f"mean max-norm error {result['error']:.4e}")
    _write_json(out / "meta.json", {**result, "versions": versions()})
    print(f"wrote reduced trajectory ({model.r} x {len(times)}) to {out}")
    return EXIT_OK


def cmd_benchmark(args):
    conf = _load_config(args.config, PipelineConfig)
    out = args.out if args.out is not None else conf.output_dir
    result = run_benchmark(conf)
    write_benchmark(result, out)
    for res in result.results:
        std, ep = res.runs["standard"], res.runs["energy_preserving"]
        fmt = lambda run: "unstable" if run.unstable else f"{run.error:.3e}"
        print(f"r = {res.r:>3}  standard {fmt(std):>10}  ep {fmt(ep):>10}  "
              f"reprojection {res.reprojection_error:.3e}")
    print(f"wrote diagnostics to {out} ({result.wall_time:.1f} s)")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="epquad",
        description="Energy-preserving quadratic operators and Operator Inference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate the 2D Burgers' model")
    p.add_argument("--config", help="BurgersConfig JSON (defaults if omitted)")
    p.add_argument("--out", required=True, help="snapshot archive directory")
    p.add_argument("--fd-derivatives", action="store_true",
                   help="finite-difference time derivatives instead of the exact RHS")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", help="infer a reduced model from a snapshot archive")
    p.add_argument("--snapshots", required=True)
    p.add_argument("--mode", choices=("standard", "ep"), default="ep")
    p.add_argument("--r", type=int, required=True, help="reduced dimension")
    p.add_argument("--config", help="inference config JSON")
    p.add_argument("--shared-lambda", action="store_true",
                   help="one regularization value for all rows")
    p.add_argument("--out", required=True, help="model directory")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("transform", help="equivalent skew-structured operator")
    p.add_argument("--H", required=True, help="matrix file with the n x n^2 operator")
    p.add_argument("--free", help="free-entry file, lines 'i j k value'")
    p.add_argument("--form", choices=("skew-block", "row-skew"), default="skew-block")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("check-ep", help="test energy preservation of an operator")
    p.add_argument("--H", required=True)
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_check_ep)

    p = sub.add_parser("verify-counts", help="constraint rank table")
    p.add_argument("--n", type=int, help="single dimension (default 1..6)")
    p.set_defaults(func=cmd_verify_counts)

    p = sub.add_parser("predict", help="integrate an inferred model")
    p.add_argument("--model", required=True)
    p.add_argument("--snapshots", required=True, help="archive providing u0 and truth")
    p.add_argument("--dt", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("benchmark", help="full r-sweep with diagnostics")
    p.add_argument("--config", help="pipeline config JSON (defaults if omitted)")
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DimensionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NotEnergyPreservingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (BlowUpError, InferenceError, InternalConsistencyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
