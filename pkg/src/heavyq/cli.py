"""Command-line front end.

Subcommands:
    validate      check a config against the model conditions
    run           execute the scaling sweep and write results + manifest
    sp-solve      solve the orthant Skorohod problem for a path given as CSV
    limit-sample  draw limit-diffusion marginals and one sample path

Exit codes: 0 success, 1 invalid config or model conditions, 2 runtime
failure (also argparse usage errors).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from typing import Optional

import numpy as np

from . import __version__
from .harness import (
    build_report,
    emit_report,
    limit_spec,
    load_config,
    replication_seed,
    run_scaling_sweep,
    validate_config,
    LIMIT_TAG,
)
from .limits import sample_reflected_marginals, simulate_reflected_diffusion
from .network import ModelConditionError
from .paths import GridPath
from .skorohod import SPConvergenceError, solve_sp

_G = "%.17g"


def _say(msg: str):
    print(msg, file=sys.stderr)


def _load_validated(path: str):
    doc = load_config(path)
    cfg, violations = validate_config(doc)
    return cfg, violations


def _print_violations(violations) -> None:
    for v in violations:
        print(f"violation [{v.condition}] {v.message}")


def _cmd_validate(args) -> int:
    cfg, violations = _load_validated(args.config)
    if violations:
        _print_violations(violations)
        return 1
    print(f"ok: {cfg.topology.size} stations, levels {list(cfg.levels)}, "
          f"engine {cfg.engine}, convention {cfg.convention}")
    return 0


def _cmd_run(args) -> int:
    cfg, violations = _load_validated(args.config)
    if violations:
        _print_violations(violations)
        return 1
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if args.replications is not None:
        cfg.replications = int(args.replications)
    if args.engine is not None:
        cfg.engine = args.engine
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if args.replications is not None and cfg.replications < 100:
        raise ValueError("--replications must be >= 100")
    if args.threads is not None and args.threads < 1:
        raise ValueError("--threads must be >= 1")
    # the event loop is intentionally serial; --threads is accepted for
    # interface stability and currently leaves execution order unchanged
    result = run_scaling_sweep(cfg, progress=_say)
    report = build_report(result)
    files = emit_report(report)
    for row in report.rows:
        flag = "" if row.ks <= row.ks_critical_1pct else "  *above 1% critical*"
        print(f"n={row.n} t={row.t:g} station={row.station + 1} "
              f"mean={row.mean:.6g} var={row.var:.6g} "
              f"ks={row.ks:.6g} crit={row.ks_critical_1pct:.6g}{flag}")
    for name, path in sorted(files.items()):
        print(f"wrote {path}")
    return 0


def _read_psi_csv(path: str) -> GridPath:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        head = first.strip().split(",")[0].strip()
        skip = 0
        try:
            float(head)
        except ValueError:
            skip = 1
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if data.shape[1] < 2:
        raise ValueError("psi CSV needs a time column plus one column per station")
    return GridPath(data[:, 0], data[:, 1:])


def _cmd_sp_solve(args) -> int:
    psi = _read_psi_csv(args.psi)
    if args.config is not None:
        cfg, violations = _load_validated(args.config)
        if violations:
            _print_violations(violations)
            return 1
        P = cfg.topology.routing
        if cfg.topology.size != psi.dim:
            raise ValueError(
                f"psi has {psi.dim} components but the config topology has {cfg.topology.size}")
    else:
        P = np.zeros((psi.dim, psi.dim))
    try:
        sol = solve_sp(psi, P, tol=args.tol)
    except SPConvergenceError as exc:
        _say(f"fixed point did not converge: {exc}")
        return 2
    os.makedirs(args.out_dir, exist_ok=True)
    out_path = os.path.join(args.out_dir, "sp_solution.csv")
    K = psi.dim
    header = ("t," + ",".join(f"phi_{i + 1}" for i in range(K))
              + "," + ",".join(f"eta_{i + 1}" for i in range(K)))
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for k in range(len(psi.grid)):
            row = [psi.grid[k], *sol.phi.values[k], *sol.eta.values[k]]
            fh.write(",".join(_G % v for v in row) + "\n")
    print(f"iterations={sol.iterations} residual={sol.residual:.3e} "
          f"pushed={float(sol.eta.values[-1].sum()):.6g}")
    print(f"wrote {out_path}")
    return 0


def _cmd_limit_sample(args) -> int:
    cfg, violations = _load_validated(args.config)
    if violations:
        _print_violations(violations)
        return 1
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if args.paths is not None:
        cfg.limit_paths = int(args.paths)
    if args.dt is not None:
        cfg.limit_dt = float(args.dt)
    spec = limit_spec(cfg)
    P = cfg.topology.routing
    K = cfg.topology.size
    horizon = max(cfg.eval_times)
    os.makedirs(cfg.out_dir, exist_ok=True)

    _say(f"marginals: {cfg.limit_paths} paths at dt={cfg.limit_dt:g}")
    samples = sample_reflected_marginals(
        spec, P, cfg.eval_times, horizon=horizon, dt=cfg.limit_dt,
        n_paths=cfg.limit_paths, seed=replication_seed(cfg.seed, LIMIT_TAG, 0, 0))
    samples_path = os.path.join(cfg.out_dir, "limit_samples.csv")
    with open(samples_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("path,t,station,value\n")
        for p in range(samples.shape[0]):
            for ti, t in enumerate(cfg.eval_times):
                for i in range(K):
                    fh.write(f"{p},{_G % t},{i + 1},{_G % samples[p, ti, i]}\n")

    path = simulate_reflected_diffusion(
        spec, P, horizon, dt=cfg.limit_dt,
        seed=replication_seed(cfg.seed, LIMIT_TAG, 0, 1))
    grid = np.linspace(0.0, horizon, args.grid_points + 1)
    vals = path.value_at(grid)
    path_path = os.path.join(cfg.out_dir, "limit_path.csv")
    with open(path_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t," + ",".join(f"x_{i + 1}" for i in range(K)) + "\n")
        for k in range(len(grid)):
            fh.write(",".join(_G % v for v in [grid[k], *vals[k]]) + "\n")

    means = samples.mean(axis=0)
    for ti, t in enumerate(cfg.eval_times):
        summary = " ".join(f"E[X_{i + 1}({t:g})]={means[ti, i]:.6g}" for i in range(K))
        print(summary)
    print(f"wrote {samples_path}")
    print(f"wrote {path_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heavyq",
        description="State-dependent open network simulation and heavy-traffic limits.")
    parser.add_argument("--version", action="version", version=f"heavyq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config file against the model conditions")
    p.add_argument("config", help="JSON experiment config")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("run", help="run the scaling sweep described by a config")
    p.add_argument("config", help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    p.add_argument("--replications", type=int, default=None,
                   help="override experiment.replications")
    p.add_argument("--engine", choices=("direct", "uniformized"), default=None,
                   help="override experiment.engine")
    p.add_argument("--out-dir", default=None, help="override output.dir")
    p.add_argument("--threads", type=int, default=None,
                   help="worker count (reserved; execution is serial)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sp-solve", help="solve the Skorohod problem for a CSV path")
    p.add_argument("psi", help="CSV with columns t, psi_0, ..., psi_{K-1}")
    p.add_argument("--config", default=None,
                   help="config supplying the routing matrix (default: zero matrix)")
    p.add_argument("--out-dir", default="out", help="directory for sp_solution.csv")
    p.add_argument("--tol", type=float, default=1e-10, help="fixed-point tolerance")
    p.set_defaults(func=_cmd_sp_solve)

    p = sub.add_parser("limit-sample", help="sample the reflected limit diffusion")
    p.add_argument("config", help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    p.add_argument("--paths", type=int, default=None, help="override output.limit_paths")
    p.add_argument("--dt", type=float, default=None, help="override output.limit_dt")
    p.add_argument("--grid-points", type=int, default=512,
                   help="points in the written sample path")
    p.add_argument("--out-dir", default=None, help="override output.dir")
    p.set_defaults(func=_cmd_limit_sample)
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelConditionError as exc:
        _say(f"invalid model: {exc}")
        return 1
    except ValueError as exc:
        _say(f"invalid input: {exc}")
        return 1
    except OSError as exc:
        _say(f"io error: {exc}")
        return 2
    except RuntimeError as exc:
        _say(f"runtime failure: {exc}")
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
