"""``homog`` command-line front end.

Subcommands: ``upscale``, ``sweep``, ``reference``, ``equivalence``,
``bench``, ``plot``.  Options can also come from a ``key=value`` file passed
with ``--config``; flags on the command line win.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from typing import Dict, List, Optional

import numpy as np

from .linsolve import ConvergenceError
from .parabolic import TimeOptions, TimeStepError
from .study import (
    InsufficientPointsError,
    SweepConfig,
    bench,
    fit_slope,
    format_bench,
    make_field,
    parse_r_list,
    run_sweep,
    write_csv,
)
from .svgplot import emit_plot
from .upscale import METHODS, AdmissibilityWarning, equivalence_check, upscale

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("homog")


def read_config_file(path: str) -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _common(p: argparse.ArgumentParser, sweep: bool = False):
    p.add_argument("--config", help="key=value file with option defaults")
    p.add_argument("--coef", help="gloria | constant | laminate | checkerboard | lognormal")
    p.add_argument("--coef-param", action="append", metavar="KEY=VALUE",
                   help="coefficient parameter (repeatable), e.g. c1=1")
    p.add_argument("--seed", type=int, help="seed for random coefficients")
    p.add_argument("--n", type=int, dest="n", help="grid intervals per unit length")
    p.add_argument("--ko", type=float, help="oversampling ratio L/R")
    p.add_argument("--time-mode", choices=("fixed", "adaptive"))
    p.add_argument("--nt", type=int, help="number of (even) time steps in fixed mode")
    p.add_argument("--tol-t", type=float, help="local error tolerance in adaptive mode")
    p.add_argument("--damping", type=float, help="Chebyshev damping parameter")
    p.add_argument("--t-reg", type=float, help="regularisation time of the regularised method")
    p.add_argument("--cg-tol", type=float, help="CG relative residual tolerance")
    p.add_argument("--cg-maxit", type=int, help="CG iteration cap (default 20 sqrt(N))")
    p.add_argument("-v", "--verbose", action="store_true")
    if sweep:
        p.add_argument("--method", help="comma-separated methods")
        p.add_argument("--q", help="comma-separated filter orders")
        p.add_argument("--R", help="start:stop:step or comma list")
        p.add_argument("--reference", choices=("periodic", "largest_R"))
        p.add_argument("--out", help="output CSV path (stdout when omitted)")
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--window", default="1e-8,1e-1", help="error window for slope fits")


DEFAULTS = {
    "coef": "gloria", "seed": 1, "n": 32, "ko": 2.0 / 3.0, "time_mode": "fixed", "nt": None,
    "tol_t": None, "damping": 0.05, "t_reg": None, "cg_tol": 1e-10, "cg_maxit": None,
    "method": "parabolic", "q": "3", "R": "2:12:2", "reference": "periodic", "out": None,
    "jobs": 1,
}
_TYPES = {"seed": int, "n": int, "ko": float, "nt": int, "tol_t": float, "damping": float,
          "t_reg": float, "cg_tol": float, "cg_maxit": int, "jobs": int, "T_long": float,
          "tols": str}


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the config file, then from built-in defaults."""
    file_vals = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key, value in file_vals.items():
        if key == "coef_param":
            continue
        if getattr(args, key, None) is None:
            conv = _TYPES.get(key, str)
            setattr(args, key, conv(value))
    for key, value in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    params = {}
    raw = list(file_vals.get("coef_param", "").split(",")) if "coef_param" in file_vals else []
    raw += args.coef_param or []
    for item in raw:
        if not item.strip():
            continue
        if "=" not in item:
            raise ValueError(f"coefficient parameter {item!r} is not KEY=VALUE")
        k, v = item.split("=", 1)
        params[k.strip()] = float(v)
    args.coef_params = params
    return args


def _time_options(args) -> TimeOptions:
    return TimeOptions(mode=args.time_mode, n_steps=args.nt, tol_t=args.tol_t,
                       damping=args.damping)


def _field(args, bounds_box=None):
    return make_field(args.coef, args.coef_params, args.seed, bounds_box=bounds_box)


def _print_tensor(a: np.ndarray):
    for row in a:
        print("  " + "  ".join(f"{v: .10f}" for v in row))


def cmd_upscale(args) -> int:
    f = _field(args, bounds_box=args.R_single)
    with warnings.catch_warnings():
        if not args.verbose:
            warnings.simplefilter("ignore", AdmissibilityWarning)
        res = upscale(args.method_single, f, args.R_single, args.ko, args.q_single, args.n,
                      _time_options(args), t_reg=args.t_reg, tol=args.cg_tol,
                      maxit=args.cg_maxit)
    if args.json:
        print(json.dumps({
            "method": res.method, "a0": res.a0.tolist(), "R": res.R, "L": res.L, "T": res.T,
            "q": res.q, "ko": res.k_o, "h": res.h, "nt": res.n_steps, "dofs": res.dofs,
            "matvecs": res.matvec_count, "walltime_s": res.walltime,
        }, indent=2))
    else:
        print(f"method={res.method} R={res.R:g} L={res.L} T={res.T} q={res.q} h={res.h:g} "
              f"nt={res.n_steps} dofs={res.dofs} matvecs={res.matvec_count} "
              f"time={res.walltime:.2f}s")
        _print_tensor(res.a0)
    return EXIT_OK


def cmd_reference(args) -> int:
    res = upscale("periodic_reference", _field(args), 1.0, 0.5, 0, args.n)
    print(f"periodic reference  n={args.n}  dofs={res.dofs}  time={res.walltime:.2f}s")
    _print_tensor(res.a0)
    return EXIT_OK


def _sweep_config(args) -> SweepConfig:
    methods = tuple(m.strip() for m in args.method.split(",") if m.strip())
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    return SweepConfig(
        coef=args.coef, coef_params=args.coef_params, methods=methods,
        R=tuple(parse_r_list(args.R)), k_o=args.ko,
        q=tuple(int(v) for v in str(args.q).split(",")), n_per_cell=args.n,
        time=_time_options(args), t_reg=args.t_reg, reference=args.reference, seed=args.seed,
        out=None, jobs=args.jobs, cg_tol=args.cg_tol, cg_maxit=args.cg_maxit,
    )


def _report_slopes(records, window: str):
    lo, hi = (float(v) for v in window.split(","))
    groups = sorted({(r.method, r.q) for r in records})
    for method, q in groups:
        try:
            s = fit_slope(records, lo, hi, method=method, q=q)
            print(f"# slope {method} q={q}: {s:.3f}", file=sys.stderr)
        except InsufficientPointsError:
            print(f"# slope {method} q={q}: insufficient points in window", file=sys.stderr)


def cmd_sweep(args) -> int:
    cfg = _sweep_config(args)
    records = run_sweep(cfg)
    text = write_csv(records, args.out)
    if not args.out:
        sys.stdout.write(text)
    _report_slopes(records, args.window)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _sweep_config(args)
    records = run_sweep(cfg)
    tols = [float(t) for t in args.tols.split(",")]
    rows = bench(records, tols)
    table, csv_text = format_bench(rows)
    print(table)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv_text)
    return EXIT_OK


def cmd_equivalence(args) -> int:
    f = _field(args, bounds_box=args.R_single)
    opts = _time_options(args)
    if args.nt is None and args.time_mode == "fixed":
        opts = TimeOptions(mode="fixed", n_steps=1024, damping=args.damping)
    r1, r2 = equivalence_check(f, args.R_single, args.n, args.T_long, opts)
    print(f"r1 (corrector H1 gap)  = {r1:.3e}")
    print(f"r2 (energy identity)   = {r2:.3e}")
    return EXIT_OK


def cmd_plot(args) -> int:
    emit_plot(args.csv, args.out, title=args.title)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homog", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("upscale", help="one homogenized-tensor approximation")
    _common(p)
    p.add_argument("--method", dest="method_single", default="parabolic", choices=METHODS)
    p.add_argument("--R", dest="R_single", type=float, default=6.0)
    p.add_argument("--q", dest="q_single", type=int, default=3)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_upscale)

    p = sub.add_parser("reference", help="periodic unit-cell reference tensor")
    _common(p)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("sweep", help="convergence study over R")
    _common(p, sweep=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="smallest R reaching each tolerance")
    _common(p, sweep=True)
    p.add_argument("--tols", default="1e-2,1e-3,1e-4")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("equivalence", help="elliptic/parabolic equivalence diagnostic")
    _common(p)
    p.add_argument("--R", dest="R_single", type=float, default=4.0)
    p.add_argument("--T-long", dest="T_long", type=float, default=4.0)
    p.set_defaults(func=cmd_equivalence)

    p = sub.add_parser("plot", help="log-log SVG from a sweep CSV")
    p.add_argument("csv")
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="resonance error")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command != "plot":
            args = _resolve(args)
        return args.func(args)
    except (ConvergenceError, TimeStepError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"homog: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, InsufficientPointsError) as exc:
        print(f"homog: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
