"""Command-line entry point: ``ssgauss <subcommand> ...``.

Exit codes: 0 success, 1 numeric or experiment failure, 2 usage error.
Results go to ``--out`` (written atomically) or standard output; all
diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import Lambda, Lambda_prime, SigmaTable, estimate_kappa, sigma_series
from .harness import ExperimentConfig, SuiteConfig, run_clt, run_condition_suite, run_consistency, run_ssl_suite
from .kernels import ProcessFamily, covariance, covariance_model, direct_covariance, slow_var_L2_limit
from .quadrature import QuadratureError
from .sampler import GridSample, NotPSDError, ObservationGrid, cholesky_psd, gram_matrix, sample_path

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
XCHECK_TOL = 1e-10


class UsageError(Exception):
    pass


# -- argument types -----------------------------------------------------------

def family_arg(text: str) -> ProcessFamily:
    try:
        return ProcessFamily.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def pair_list(text: str) -> list[tuple[float, float]]:
    out = []
    for item in text.split(","):
        a, sep, b = item.partition(":")
        try:
            out.append((float(a), float(b)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected s:t pairs, got {item!r}") from None
        if not sep:
            raise argparse.ArgumentTypeError(f"expected s:t pairs, got {item!r}")
    return out


def kappa_range(text: str) -> np.ndarray:
    parts = text.split(":")
    try:
        a, b, step = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    if not step > 0 or b < a:
        raise argparse.ArgumentTypeError("need start <= stop and a positive step")
    count = int(math.floor((b - a) / step + 1e-9)) + 1
    return np.round(a + step * np.arange(count), 12)


# -- output helpers -----------------------------------------------------------

def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(args, text: str) -> None:
    if getattr(args, "out", None):
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def to_json(doc: dict) -> str:
    return json.dumps(doc, indent=1) + "\n"


def diag(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- subcommands --------------------------------------------------------------

def cmd_kernel_eval(args) -> int:
    fam = args.family
    model = covariance_model(fam)
    bad = 0.0
    if args.st:
        header = ["s", "t", "R"] + (["R_direct", "abs_diff"] if args.xcheck else [])
        s = np.array([a for a, _ in args.st])
        t = np.array([b for _, b in args.st])
        if np.any(s < 0) or np.any(t < 0):
            raise UsageError("times must be nonnegative")
        R = np.atleast_1d(covariance(model, s, t))
        cols = [s, t, R]
        if args.xcheck:
            Rd = np.atleast_1d(direct_covariance(fam, s, t))
            diff = np.abs(R - Rd)
            bad = float(diff.max())
            cols += [Rd, diff]
    else:
        u = np.array(args.u if args.u is not None else [0.0, 0.5, 1.0])
        if np.any(u < 0):
            raise UsageError("u must be nonnegative")
        header = ["u", "l", "L2", "p"] + (["l_direct", "abs_diff"] if args.xcheck else [])
        l_vals = np.atleast_1d(model.l(u))
        pos = u > 0
        L2 = np.full(u.shape, slow_var_L2_limit(fam))
        if pos.any():
            L2[pos] = model.L2(u[pos])
        cols = [u, l_vals, L2, np.atleast_1d(model.p(u))]
        if args.xcheck:
            # l(u) = R(1, 1 + u) / sigma^2 from the closed form
            ld = np.atleast_1d(direct_covariance(fam, np.ones_like(u), 1.0 + u)) / fam.sigma2
            diff = np.abs(l_vals - ld)
            bad = float(diff.max())
            cols += [ld, diff]
    rows = [[float(c[i]) for c in cols] for i in range(len(cols[0]))]
    if args.format == "json":
        doc = {"schema": 1, "kind": "kernel_eval", "family": fam.spec(), "columns": header, "rows": rows}
        emit(args, to_json(doc))
    else:
        emit(args, rows_to_csv(header, rows))
    if args.xcheck and not bad <= XCHECK_TOL:
        diag(f"cross-check failed: max |difference| = {bad:.3e} > {XCHECK_TOL}")
        return EXIT_FAIL
    return EXIT_OK


def cmd_simulate(args) -> int:
    grid = ObservationGrid(args.T, args.n)
    fact = cholesky_psd(gram_matrix(covariance_model(args.family), grid))
    if fact.jitter:
        diag(f"Gram matrix needed jitter {fact.jitter:.3e}")
    sample = sample_path(fact, grid, args.seed, args.replication, args.family)
    emit(args, sample.to_json() + "\n" if args.format == "json" else sample.to_csv())
    return EXIT_OK


def _read_sample(path: str) -> GridSample:
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return GridSample.from_json(text)
    return GridSample.from_csv(text)


def cmd_estimate(args) -> int:
    try:
        sample = _read_sample(args.inp)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read sample {args.inp}: {exc}") from None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = estimate_kappa(
            sample, alpha=args.alpha, sigma_seed=args.seed, sigma_K=args.K, sigma_m=args.m
        )
    for w in rep.warnings:
        diag(w)
    d = rep.to_dict()
    if args.format == "json":
        emit(args, to_json(d))
    else:
        keys = ["n", "T", "R_n", "kappa_hat", "sigma_hat", "lambda_prime", "ci_low", "ci_high", "alpha", "clamped"]
        emit(args, rows_to_csv(keys, [[d[k] for k in keys]]))
    return EXIT_OK


def cmd_lambda_table(args) -> int:
    ks = args.kappa
    if ks.min() <= 0 or ks.max() >= 1:
        raise UsageError("kappa values must lie in (0, 1)")
    lam = Lambda(ks)
    if not args.no_sigma:
        table = SigmaTable.build(ks, args.K, args.m, args.seed, args.workers)
    rows = []
    for i, k in enumerate(ks):
        row = [float(k), float(lam[i]), float(Lambda_prime(float(k)))]
        if args.no_sigma:
            row += [math.nan, math.nan]
        else:
            row += [float(table.values[i]), float(table.se[i])]
        rows.append(row)
    header = ["kappa", "Lambda", "Lambda_prime", "Sigma", "se"]
    if args.format == "json":
        emit(args, to_json({"schema": 1, "kind": "lambda_table", "columns": header, "rows": rows}))
    else:
        emit(args, rows_to_csv(header, rows))
    if np.any(np.diff(lam) <= 0):
        diag("Lambda is not strictly increasing over the requested range")
        return EXIT_FAIL
    return EXIT_OK


def cmd_sigma(args) -> int:
    if not 0 < args.x < 1:
        raise UsageError("x must lie in (0, 1)")
    est = sigma_series(args.x, args.K, args.m, args.seed, args.workers)
    d = {"schema": 1, "kind": "sigma", "seed": args.seed, **est.to_dict()}
    if args.format == "json":
        emit(args, to_json(d))
    else:
        rows = [[k, float(c), float(s)] for k, (c, s) in enumerate(zip(est.terms, est.term_se))]
        text = rows_to_csv(["k", "c_k", "se"], rows)
        text += f"# Sigma={est.value:.17g} se={est.standard_error:.17g}\n"
        emit(args, text)
    if args.summary:
        print(f"Sigma({args.x}) = {est.value:.6f} +- {est.standard_error:.6f}")
    return EXIT_OK


def _experiment_config(args) -> ExperimentConfig:
    try:
        return ExperimentConfig(
            family=args.family,
            T=args.T,
            n_list=tuple(args.n),
            replications=args.reps,
            seed=args.seed,
            alpha=args.alpha,
            sigma_K=args.K,
            sigma_m=args.m,
            workers=args.workers,
            memory_budget_mb=args.memory_mb,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _experiment_output(args, rep) -> int:
    if args.format == "json":
        emit(args, to_json(rep.to_dict()))
    else:
        keys = [k for k, v in rep.per_n[0].items() if not isinstance(v, (list, dict))]
        emit(args, rows_to_csv(keys, [[row[k] for k in keys] for row in rep.per_n]))
    if args.summary:
        print(rep.table())
    if not rep.passed:
        diag(f"{rep.kind} experiment did not pass its checks")
        return EXIT_FAIL
    return EXIT_OK


def cmd_clt(args) -> int:
    cfg = _experiment_config(args)
    try:
        rep = run_clt(cfg)
    except ValueError as exc:
        # kappa restriction
        raise UsageError(str(exc)) from None
    return _experiment_output(args, rep)


def cmd_consistency(args) -> int:
    cfg = _experiment_config(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            rep = run_consistency(cfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    for w in caught:
        diag(str(w.message))
    return _experiment_output(args, rep)


def cmd_ssl_check(args) -> int:
    try:
        cfg = SuiteConfig(
            families=tuple(args.family),
            t=args.t,
            n_list=tuple(args.condition_n),
            zeta=args.zeta,
            workers=args.workers,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    doc = {"schema": 1, "kind": "ssl_check", "ssl": run_ssl_suite(cfg)}
    if args.conditions:
        doc["conditions"] = run_condition_suite(cfg)
    doc["passed"] = doc["ssl"]["passed"] and doc.get("conditions", {"passed": True})["passed"]
    if args.format == "json":
        emit(args, to_json(doc))
    else:
        rows = []
        for r in doc["ssl"]["reports"]:
            for p in r["pairs"]:
                for u, c, dev in zip(r["u_ladder"], p["cov"], p["rel_dev"]):
                    rows.append([r["family"], p["tau1"], p["tau2"], u, c, p["limit"], dev])
        emit(args, rows_to_csv(["family", "tau1", "tau2", "u", "cov", "limit", "rel_dev"], rows))
    if args.summary:
        for r in doc["ssl"]["reports"]:
            print(f"{r['family']:>24}  ssl {'pass' if r['passed'] else 'FAIL'}  "
                  f"slow-variation {'pass' if r['slow_variation']['passed'] else 'FAIL'}")
        for r in doc.get("conditions", {}).get("reports", []):
            print(f"{r['family']:>24}  L1 {r['L1']['passed']}  L2 {r['L2']['passed']}  L3 {r['L3']['passed']}")
    if not doc["passed"]:
        diag("ssl-check: some checks failed")
        return EXIT_FAIL
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssgauss", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fmt="csv"):
        sp.add_argument("--out", help="output file (default: standard output)")
        sp.add_argument("--format", choices=("csv", "json"), default=fmt)
        sp.add_argument("--summary", action="store_true", help="print a human-readable table to stdout")

    def sigma_flags(sp, seed_required=False):
        sp.add_argument("--K", type=int, default=50, help="series truncation lag")
        sp.add_argument("--m", type=int, default=200_000, help="Monte Carlo draws")
        sp.add_argument("--workers", type=int, default=1)
        if seed_required:
            sp.add_argument("--seed", type=int, required=True)
        else:
            sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("kernel-eval", help="evaluate l, L^2, p or R for one family")
    sp.add_argument("family", type=family_arg)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--u", type=float_list, help="comma-separated lags")
    g.add_argument("--st", type=pair_list, help="comma-separated s:t pairs")
    sp.add_argument("--xcheck", action="store_true", help="compare against the closed-form covariance")
    common(sp)
    sp.set_defaults(func=cmd_kernel_eval)

    sp = sub.add_parser("simulate", help="draw one exact path on T + kT/n")
    sp.add_argument("family", type=family_arg)
    sp.add_argument("--T", type=float, default=1.0)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--replication", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("estimate", help="estimate kappa from a sample file")
    sp.add_argument("--in", dest="inp", required=True, help="CSV or JSON sample")
    sp.add_argument("--alpha", type=float, default=0.05)
    sigma_flags(sp)
    common(sp, "json")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("lambda-table", help="tabulate Lambda, Lambda' and Sigma")
    sp.add_argument("--kappa", type=kappa_range, required=True, help="start:stop:step")
    sp.add_argument("--no-sigma", action="store_true", help="skip the Monte Carlo Sigma column")
    sigma_flags(sp)
    common(sp)
    sp.set_defaults(func=cmd_lambda_table)

    sp = sub.add_parser("sigma", help="long-run variance Sigma(x)")
    sp.add_argument("--x", type=float, required=True)
    sigma_flags(sp)
    common(sp, "json")
    sp.set_defaults(func=cmd_sigma)

    for name, func, n_default, help_ in (
        ("clt", cmd_clt, [4096], "CLT and interval coverage experiment"),
        ("consistency", cmd_consistency, [256, 1024, 4096], "consistency experiment"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--family", type=family_arg, required=True)
        sp.add_argument("--T", type=float, default=1.0)
        sp.add_argument("--n", type=int_list, default=n_default, help="comma-separated sample sizes")
        sp.add_argument("--reps", type=int, default=200)
        sp.add_argument("--alpha", type=float, default=0.05)
        sp.add_argument("--memory-mb", type=float, default=2048.0)
        sigma_flags(sp, seed_required=True)
        common(sp, "json")
        sp.set_defaults(func=func)

    sp = sub.add_parser("ssl-check", help="small-scale limit and regularity checks")
    sp.add_argument("--family", type=family_arg, action="append", required=True, help="repeatable")
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--conditions", action="store_true", help="also run the (L1)-(L3) checks")
    sp.add_argument("--condition-n", type=int_list, default=[16, 64, 256])
    sp.add_argument("--zeta", type=float, default=1.0)
    sp.add_argument("--workers", type=int, default=1)
    common(sp, "json")
    sp.set_defaults(func=cmd_ssl_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if getattr(args, "workers", 1) < 1:
        diag("--workers must be >= 1")
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        diag(f"error: {exc}")
        return EXIT_USAGE
    except (NotPSDError, QuadratureError, ArithmeticError, np.linalg.LinAlgError) as exc:
        diag(f"numeric failure: {exc}")
        return EXIT_FAIL
    except ValueError as exc:
        diag(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
