"""Command line front end.

Exit codes: 0 success, 1 selftest failure, 2 configuration error,
3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, SimulationConfig, load_config
from .grid import SolverError

__all__ = ["main", "build_parser", "selftest_suites"]

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

# command line flag -> SimulationConfig attribute
_OVERRIDES = {
    "alpha": "alpha", "dt": "dt", "T": "T", "nx": "nx", "ny": "ny", "De": "De", "epsilon": "epsilon",
    "kernel_tol": "kernel_tol", "kernel_file": "kernel_file", "output_dir": "output_dir",
    "beta_over_Re": "beta_over_Re", "one_minus_beta_over_Re": "one_minus_beta_over_Re",
    "roughness_blocks": "roughness_blocks", "seed": "seed",
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value file with [grid], [time], ... sections")
    p.add_argument("--alpha", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--De", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--beta-over-Re", dest="beta_over_Re", type=float)
    p.add_argument("--one-minus-beta-over-Re", dest="one_minus_beta_over_Re", type=float)
    p.add_argument("--kernel-tol", dest="kernel_tol", type=float)
    p.add_argument("--kernel-file", dest="kernel_file")
    p.add_argument("--roughness-blocks", dest="roughness_blocks", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", dest="output_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfpolymer", description="Time-fractional polymeric flow solver")
    sub = parser.add_subparsers(dest="command", required=True)

    kernel = sub.add_parser("kernel", help="kernel compression")
    ksub = kernel.add_subparsers(dest="action", required=True)
    fit = ksub.add_parser("fit", help="fit a sum-of-exponentials kernel and write it as CSV")
    fit.add_argument("--alpha", type=float, required=True)
    fit.add_argument("--s-min", type=float, default=1e-1)
    fit.add_argument("--s-max", type=float, default=1e4)
    fit.add_argument("--tol", type=float, default=1e-8)
    fit.add_argument("--output", type=Path, help="CSV path (default: print to stdout)")

    closure = sub.add_parser("closure", help="closure operator")
    csub = closure.add_subparsers(dest="action", required=True)
    dump = csub.add_parser("dump", help="print A(kappa) for one velocity gradient")
    dump.add_argument("--d", type=int, default=2, choices=(2, 3))
    dump.add_argument("--De", type=float, default=1.0)
    dump.add_argument("--a", type=float, default=None, help="Hermite scaling (default 1/sqrt(2))")
    dump.add_argument("--kappa", type=float, nargs="*", default=None, help="row-major du_m/dx_l entries")

    for name, help_text in (("converge-tffp", "temporal order of the decoupled mode equation"),
                            ("converge-coupled", "temporal self-convergence of the coupled system"),
                            ("channel", "forced periodic channel with diagnostics and snapshots")):
        p = sub.add_parser(name, help=help_text)
        _add_run_flags(p)

    sub.add_parser("selftest", help="run the invariant suites and print PASS/FAIL per suite")
    return parser


def _config(args, factory) -> SimulationConfig:
    overrides = {attr: getattr(args, flag) for flag, attr in _OVERRIDES.items() if hasattr(args, flag)}
    cfg = load_config(args.config, overrides, base=factory())
    if args.dt is not None and cfg.dt_list and args.dt not in cfg.dt_list:
        cfg = cfg.replace(dt_list=(args.dt,))
    return cfg


def _cmd_kernel_fit(args) -> int:
    from .kernel import compress_kernel, write_kernel_csv

    if not 0 < args.alpha <= 1 or not 0 < args.s_min < args.s_max or args.tol <= 0:
        raise ConfigError("need 0 < alpha <= 1, 0 < s_min < s_max and tol > 0")
    K = compress_kernel(args.alpha, args.s_min, args.s_max, args.tol)
    if args.output is None:
        print("k,w,lambda")
        for k, (w, lam) in enumerate(zip(K.weights, K.poles)):
            print(f"{k},{float(w)!r},{float(lam)!r}")
    else:
        write_kernel_csv(K, args.output)
        print(f"m = {K.m}, fit error {K.fit_error:.3e}, written to {args.output}")
    return EXIT_OK


def _cmd_closure_dump(args) -> int:
    from .hermite import SQRT_HALF, build_closure

    d = args.d
    kappa = np.zeros((d, d)) if args.kappa is None else np.asarray(args.kappa, dtype=float)
    if kappa.size != d * d:
        raise ConfigError(f"--kappa needs {d * d} entries for d = {d}, got {kappa.size}")
    if args.De <= 0:
        raise ConfigError("De must be positive")
    closure = build_closure(d, args.De, SQRT_HALF if args.a is None else args.a)
    print("modes:", " ".join("".join(map(str, m)) for m in closure.modes))
    with np.printoptions(precision=6, suppress=True, linewidth=120):
        print(closure.assemble(kappa.reshape(d, d)))
    return EXIT_OK


def _write_table(table, cfg, name) -> None:
    print(table.format())
    if cfg.output_dir is not None:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = table.write_csv(out / f"{name}-alpha{cfg.alpha:g}-{cfg.digest()}.csv")
        print(f"table written to {path}")


def _cmd_converge_tffp(args) -> int:
    from .scenarios import run_tffp_convergence, tffp_config

    cfg = _config(args, tffp_config)
    _write_table(run_tffp_convergence(cfg), cfg, "tffp")
    return EXIT_OK


def _cmd_converge_coupled(args) -> int:
    from .scenarios import coupled_config, run_coupled_convergence

    cfg = _config(args, coupled_config)
    if args.dt is not None:
        cfg = cfg.replace(dt_list=(args.dt,), dt=args.dt / 4)
    _write_table(run_coupled_convergence(cfg), cfg, "coupled")
    return EXIT_OK


def _cmd_channel(args) -> int:
    from .scenarios import DiagnosticsRecord, channel_config, run_channel

    cfg = _config(args, channel_config)
    result = run_channel(cfg)
    header = DiagnosticsRecord.header()
    print(" ".join(f"{h:>14}" for h in header[:6]))
    for rec in result.records:
        print(" ".join(f"{v:14.6e}" for v in rec.row()[:6]))
    if result.output_dir is not None:
        print(f"diagnostics and {len(result.snapshots)} snapshots in {result.output_dir}")
    return EXIT_OK


def selftest_suites() -> dict:
    """Named zero-argument checks returning True on success."""
    from .grid import Grid2D, laplacian, solve_poisson_neumann
    from .hermite import (build_closure, configuration_operator_quadrature, gaussian_steady_exponent,
                          hermite_modes_of_gaussian, orthonormality_defect, SQRT_HALF)
    from .kernel import compress_kernel, mittag_leffler
    from .mfp import PolymerState, mfp_step
    from .scenarios import omega_criterion

    rng = np.random.default_rng(0)

    def hermite_orthonormality():
        return all(np.max(np.abs(orthonormality_defect(a, 10))) <= 1e-12 for a in (0.5, SQRT_HALF, 1.0))

    def closure_oracle():
        ok = True
        for d in (2, 3):
            C = 3 * d - 2
            kappa = rng.standard_normal((d, d))
            quad = configuration_operator_quadrature(d, 2, SQRT_HALF, kappa, 0.7)[:C, :C]
            ok &= np.max(np.abs(build_closure(d, 0.7).assemble(kappa) - quad)) <= 1e-8
        return bool(ok)

    def steady_state_nullspace():
        D = 0.1 * rng.standard_normal((2, 2))
        D = 0.5 * (D + D.T)
        D -= np.trace(D) / 2 * np.eye(2)
        v = hermite_modes_of_gaussian(gaussian_steady_exponent(D, 1.0), SQRT_HALF, 2)[:4]
        A = build_closure(2, 1.0).assemble(D)
        return bool(np.linalg.norm(A @ v) <= 1e-7 * np.linalg.norm(v))

    def kernel_monotone():
        K = compress_kernel(0.5, 1e-2, 1e4, 1e-8)
        return bool(np.all(K.weights >= 0) and np.all(K.poles >= 0) and K.m <= 40)

    def mittag_leffler_closed_form():
        x = np.linspace(0, 5, 11)
        return bool(np.max(np.abs(mittag_leffler(1.0, x) - np.exp(-x))) <= 1e-12)

    def grid_constants():
        g = Grid2D(16, 12, bc_x="periodic", bc_y="wall")
        return bool(np.max(np.abs(laplacian(g, np.full(g.shape, 3.0)))) <= 1e-10)

    def pressure_mean():
        g = Grid2D(16, 16, bc_x="periodic", bc_y="wall")
        X, Y = g.mesh()
        p, rep = solve_poisson_neumann(g, np.cos(2 * np.pi * X) * np.cos(np.pi * Y))
        return bool(rep.converged and abs(g.mean(p)) <= 1e-12)

    def mass_invariant():
        g = Grid2D(12, 12, bc_x="periodic", bc_y="wall")
        X, Y = g.mesh()
        st = PolymerState.at_rest(g, build_closure(2, 0.5), compress_kernel(1.0, 0.1, 1e3, 1e-8), 1e-2, 1.0)
        u = np.stack([np.sin(np.pi * Y) * np.cos(2 * np.pi * X), np.zeros_like(X)])
        for _ in range(10):
            mfp_step(st, u, 1e-2)
        return st.mass_drift <= 1e-8

    def omega_range():
        g = Grid2D(16, 16, bc_x="periodic", bc_y="periodic")
        X, Y = g.mesh()
        w = omega_criterion(g, np.stack([np.sin(2 * np.pi * Y), np.sin(2 * np.pi * X + 1)]))
        return bool(np.all((w >= 0) & (w <= 1)))

    return {f.__name__: f for f in (hermite_orthonormality, closure_oracle, steady_state_nullspace, kernel_monotone,
                                    mittag_leffler_closed_form, grid_constants, pressure_mean, mass_invariant,
                                    omega_range)}


def _cmd_selftest(args) -> int:
    failed = 0
    for name, check in selftest_suites().items():
        try:
            ok = bool(check())
        except Exception as exc:  # a crashing suite counts as a failure
            ok = False
            print(f"{name}: {type(exc).__name__}: {exc}")
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if failed == 0 else EXIT_SELFTEST


_COMMANDS = {
    ("kernel", "fit"): _cmd_kernel_fit,
    ("closure", "dump"): _cmd_closure_dump,
    ("converge-tffp", None): _cmd_converge_tffp,
    ("converge-coupled", None): _cmd_converge_coupled,
    ("channel", None): _cmd_channel,
    ("selftest", None): _cmd_selftest,
}


def main(argv=None) -> int:
    from .kernel import KernelFitError

    args = build_parser().parse_args(argv)
    handler = _COMMANDS[(args.command, getattr(args, "action", None))]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, KernelFitError, FloatingPointError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
