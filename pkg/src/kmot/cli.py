"""Command-line interface: ``kmot {mot,test,cr,power,simulate}``.

Every run prints (or writes with ``--out``) one JSON result document with
sorted keys. Exit status is 0 on success, 2 for invalid input and 3 when
the LP solver fails; failures emit a JSON ``error`` object instead.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from . import __version__
from .designs import family_collection, rejection_rate, strain_measures
from .errors import KmotError, SolverFailure, ValidationError
from .inference import (
    METHODS,
    BootstrapConfig,
    confidence_region,
    dual_range,
    power_curve,
    reference_mot,
    test_h0,
)
from .io import dumps_document, read_measures, read_samples
from .limits import rate
from .mot import DENSE_LIMIT, barycenter, solve_mot, w2_squared

QUANTILE_GRID = tuple(np.round(np.arange(0.05, 1.0, 0.05), 2)) + (0.01, 0.99)
HIST_BINS = 30


def _add_input(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--samples", help="CSV with header group,x1,...,xd")
    g.add_argument("--measures", help="JSON with support and weighted groups")
    p.add_argument("--support", help="CSV support file (with --samples)")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--memory-budget", type=int, default=DENSE_LIMIT,
                   help="largest N^k solved as a dense primal LP")
    p.add_argument("--out", help="write the result document here instead of stdout")
    p.add_argument("--timing", action="store_true", help="include wall-clock timings")


def _add_bootstrap(p):
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--replicates", "-B", type=int, default=500)
    p.add_argument("--subsample-exponent", type=float, default=0.5)
    p.add_argument("--coupled", action="store_true")
    p.add_argument("--pool-all", action="store_true",
                   help="estimate the null covariance from all groups pooled")
    p.add_argument("--plot-data", help="write replicate quantiles and histogram bins as CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kmot", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kmot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mot", help="MOT value, multicoupling summary and barycenter")
    _add_input(p)
    _add_common(p)
    p.add_argument("--top", type=int, default=20, help="tuples listed in the coupling summary")

    p = sub.add_parser("test", help="test equality of the k distributions")
    _add_input(p)
    _add_common(p)
    _add_bootstrap(p)
    p.add_argument("--method", choices=METHODS, default="derivative")
    p.add_argument("--permutations", "-R", type=int, default=999)

    p = sub.add_parser("cr", help="confidence interval for the MOT value")
    _add_input(p)
    _add_common(p)
    _add_bootstrap(p)
    p.add_argument("--cr-mode", choices=("standard", "literal"), default="standard")

    p = sub.add_parser("power", help="power lower bound grid for two-sample tests")
    _add_input(p, required=False)
    _add_common(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--c-tilde", type=float, help="dual-range constant (else computed from the input support)")
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.add_argument("--delta", type=float, nargs="+", required=True)

    p = sub.add_parser("simulate", help="rejection rates on the 12-point grid design")
    _add_common(p)
    _add_bootstrap(p)
    p.add_argument("--family", choices=("clustered", "sparse", "null"), default="clustered")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--n", type=int, nargs="+", default=[100, 300, 500])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--shift", type=float, default=1.0)
    p.add_argument("--method", choices=METHODS, default="derivative")
    p.add_argument("--permutations", "-R", type=int, default=199)
    return parser


def _load(args):
    if args.samples:
        return read_samples(args.samples, args.support)
    if args.support:
        raise ValidationError("--support only applies to --samples")
    return read_measures(args.measures)


def _config(args, B=None) -> BootstrapConfig:
    return BootstrapConfig(
        B=B if B is not None else args.replicates, p=args.subsample_exponent, seed=args.seed,
        coupled=args.coupled, pool_all=args.pool_all, jobs=args.jobs,
        dense_limit=args.memory_budget,
    )


def _echo(args) -> dict:
    skip = {"out", "plot_data", "jobs", "timing"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _summary(values: np.ndarray, failures: int) -> dict:
    v = values[np.isfinite(values)]
    out = {"count": int(v.size), "failures": int(failures)}
    if v.size:
        grid = sorted(QUANTILE_GRID)
        out.update(
            mean=float(v.mean()), sd=float(v.std(ddof=1)) if v.size > 1 else 0.0,
            min=float(v.min()), max=float(v.max()),
            quantiles={f"{q:.2f}": float(np.quantile(v, q, method="inverted_cdf")) for q in grid},
        )
    return out


def _write_plot_data(path, values):
    v = np.sort(values[np.isfinite(values)])
    counts, edges = np.histogram(v, bins=HIST_BINS)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "x", "y"])
        for q in np.linspace(0.01, 0.99, 99):
            w.writerow(["quantile", f"{q:.2f}", repr(float(np.quantile(v, q, method="inverted_cdf")))])
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            w.writerow(["histogram", repr(float((lo + hi) / 2)), int(c)])


def _sizes(coll):
    try:
        return list(coll.sizes)
    except ValidationError:
        return None


def cmd_mot(args) -> dict:
    ds = _load(args)
    coll = ds.collection
    sol = solve_mot(coll, dense_limit=args.memory_budget)
    doc = {"mot_value": sol.value, "lazy": sol.lazy, "dual": sol.dual,
           "sizes": _sizes(coll), "names": list(coll.names or []),
           "support": coll.support.points, "solver_stats": sol.solver_stats}
    if sol.coupling is not None:
        P = sol.coupling
        idx = np.flatnonzero(P > 1e-12)
        idx = idx[np.lexsort((idx, -P[idx]))][: args.top]
        tuples = np.stack(np.unravel_index(idx, (coll.N,) * coll.k), axis=1)
        doc["coupling"] = {
            "support_size": int(np.count_nonzero(P > 1e-12)),
            "top": [{"tuple": t.tolist(), "mass": float(P[i])} for t, i in zip(tuples, idx)],
        }
        pts, w = barycenter(sol, coll.support)
        doc["barycenter"] = {"points": pts, "weights": w}
    return doc


def cmd_test(args) -> dict:
    ds = _load(args)
    if args.method == "permutation" and ds.groups is None:
        raise ValidationError("--method permutation needs --samples (raw observations)")
    B = args.permutations if args.method == "permutation" else args.replicates
    res = test_h0(ds.collection, args.alpha, args.method, _config(args, B), groups=ds.groups)
    if args.plot_data:
        _write_plot_data(args.plot_data, res.replicate_values)
    return {
        "sizes": _sizes(ds.collection), "names": list(ds.collection.names or []),
        "mot_value": res.mot_value, "rho": res.rho, "statistic": res.statistic,
        "cutoff": res.cutoff, "p_value": res.p_value, "decision": res.decision,
        "method": res.method, "alpha": res.alpha,
        "replicates": _summary(res.replicate_values, res.failures),
        "solver_stats": res.solver_stats,
    }


def cmd_cr(args) -> dict:
    ds = _load(args)
    ci = confidence_region(ds.collection, args.alpha, _config(args), args.cr_mode)
    if args.plot_data:
        _write_plot_data(args.plot_data, ci.replicate_values)
    return {
        "sizes": _sizes(ds.collection), "names": list(ds.collection.names or []),
        "mot_value": ci.mot_value, "rho": ci.rho,
        "ci": {"lower": ci.lower, "upper": ci.upper, "level": ci.level,
               "convention": ci.convention, "q_low": ci.q_low, "q_high": ci.q_high},
        "replicates": _summary(ci.replicate_values, ci.failures),
    }


def cmd_power(args) -> dict:
    if args.c_tilde is None:
        if not (args.samples or args.measures):
            raise ValidationError("give --c-tilde or an input whose support defines it")
        c_tilde = dual_range(_load(args).collection.support, 2)
    else:
        c_tilde = args.c_tilde
    pts = power_curve(c_tilde, args.n, args.delta, args.alpha)
    return {"c_tilde": c_tilde, "alpha": args.alpha,
            "grid": [{"n": p.n, "delta": p.delta, "bound": p.bound} for p in pts]}


def cmd_simulate(args) -> dict:
    truth = family_collection(args.family, args.k, args.shift)
    truth_value = solve_mot(truth, dense_limit=args.memory_budget).value
    mu_a, mu_b = strain_measures(args.shift)
    if args.family == "sparse":
        reference = reference_mot("sparse", (mu_a, mu_b), args.k)
    elif args.family == "clustered":
        reference = reference_mot("clustered", (mu_a, mu_b), args.k)
    else:
        reference = 0.0
    B = args.permutations if args.method == "permutation" else args.replicates
    cfg = _config(args, B)
    rows = []
    for n in args.n:
        st = rejection_rate(truth, n, args.trials, args.alpha, args.method, cfg,
                            seed=args.seed + 1000003 * n)
        rows.append({"n": n, "rejection_rate": st.rate, "rejections": st.rejections,
                     "trials": st.trials, "mean_statistic": float(st.statistics.mean()),
                     "mean_cutoff": float(st.cutoffs.mean())})
    return {"family": args.family, "k": args.k, "shift": args.shift,
            "truth_mot": truth_value, "reference_mot": reference,
            "w2_squared": w2_squared(mu_a, mu_b), "rho_grid": [rate([n] * args.k).rho for n in args.n],
            "table": rows}


COMMANDS = {"mot": cmd_mot, "test": cmd_test, "cr": cmd_cr, "power": cmd_power, "simulate": cmd_simulate}


def run(argv=None) -> tuple[int, str]:
    """Run the CLI and return ``(exit_code, document_text)``."""
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        if not 0 < getattr(args, "alpha", 0.5) < 1:
            raise ValidationError(f"alpha must lie in (0, 1), got {args.alpha}")
        body = COMMANDS[args.command](args)
        doc = {"version": __version__, "command": args.command, "config": _echo(args), **body}
        if args.timing:
            doc["timing"] = {"seconds": time.perf_counter() - t0}
        code = 0
    except SolverFailure as exc:
        code = 3
        doc = _error(args, exc, code)
    except (KmotError, ValueError) as exc:
        code = 2
        doc = _error(args, exc, code)
    text = dumps_document(doc)
    if args.out and code == 0:
        with open(args.out, "w") as fh:
            fh.write(text)
    return code, text


def _error(args, exc, code):
    err = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, SolverFailure):
        err["stats"] = exc.stats
    line = getattr(exc, "line", None)
    if line is not None:
        err["line"] = line
    return {"version": __version__, "command": args.command, "error": err}


def main(argv=None) -> int:
    code, text = run(argv)
    if code:
        sys.stderr.write(text)
    elif "--out" not in (sys.argv[1:] if argv is None else argv):
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
