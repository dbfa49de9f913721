"""Replicated Monte Carlo experiments for the increment-ratio estimator.

One Gram factorisation per ``(family, n)`` is shared by all replications.
Replications are grouped into fixed-size blocks; each block draws its normals
from per-replication Philox streams, so results depend only on the master
seed and the replication index, never on the worker count.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import kurtosis, norm, skew

from .estimator import (
    SIGMA_K,
    SIGMA_M,
    Lambda,
    Lambda_prime,
    SigmaTable,
    ir_statistic,
    link_table,
    sigma_series,
)
from .kernels import ProcessFamily, covariance_model
from .sampler import ObservationGrid, cholesky_psd, gram_matrix, sample_paths, second_differences
from .ssl_check import (
    DEFAULT_LADDER,
    DEFAULT_TAU_PAIRS,
    SslCheckConfig,
    condition_checks,
    slow_variation_report,
    ssl_convergence_report,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "SuiteConfig",
    "run_consistency",
    "run_clt",
    "run_ssl_suite",
    "run_condition_suite",
    "simulate_statistics",
]

CLT_KAPPA_LIMIT = 0.75
CONSISTENCY_KAPPA_LIMIT = 0.9
# replications per block; fixed so that results do not depend on workers
BLOCK = 25
# Sigma grid spacing used for per-replication interval widths
SIGMA_GRID_STEP = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    family: ProcessFamily
    T: float = 1.0
    n_list: tuple = (256, 1024, 4096)
    replications: int = 200
    seed: int = 0
    alpha: float = 0.05
    sigma_K: int = SIGMA_K
    sigma_m: int = SIGMA_M
    workers: int = 1
    memory_budget_mb: float = 2048.0

    def __post_init__(self):
        if not isinstance(self.family, ProcessFamily):
            raise ValueError("family must be a ProcessFamily")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if not self.n_list:
            raise ValueError("n_list is empty")
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        if min(self.n_list) < 64:
            raise ValueError(f"every n must be >= 64, got {self.n_list}")
        if self.replications < 50:
            raise ValueError(f"need at least 50 replications, got {self.replications}")
        if not 0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        # one factorisation in flight: Gram matrix plus its factor
        need = 2 * 8 * (max(self.n_list) + 1) ** 2 / 2**20
        if need > self.memory_budget_mb:
            raise ValueError(f"n={max(self.n_list)} needs ~{need:.0f} MB, over the {self.memory_budget_mb} MB budget")

    def to_dict(self) -> dict:
        """Result-determining settings; the worker count is left out since
        reports must not depend on it."""
        d = asdict(self)
        del d["workers"]
        d["family"] = self.family.spec()
        d["n_list"] = list(self.n_list)
        return d


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    per_n: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    passed: bool = True
    wall_clock: float = 0.0
    failures: int = 0

    def to_dict(self, timing: bool = False) -> dict:
        d = {"schema": 1, "kind": self.kind, "config": self.config, "per_n": self.per_n,
             "summary": self.summary, "passed": self.passed, "failures": self.failures}
        if timing:
            d["wall_clock"] = self.wall_clock
        return d

    def to_json(self, timing: bool = False) -> str:
        return json.dumps(self.to_dict(timing), indent=1)

    def table(self) -> str:
        keys = [k for k in self.per_n[0] if not isinstance(self.per_n[0][k], (list, dict))] if self.per_n else []
        lines = ["  ".join(f"{k:>14}" for k in keys)]
        for row in self.per_n:
            lines.append("  ".join(f"{row[k]:>14.6g}" if isinstance(row[k], float) else f"{row[k]!s:>14}" for k in keys))
        lines.append(f"passed: {self.passed}")
        return "\n".join(lines)


def _blocks(replications: int):
    return [range(s, min(s + BLOCK, replications)) for s in range(0, replications, BLOCK)]


def simulate_statistics(family: ProcessFamily, T: float, n: int, replications: int, seed: int, workers: int = 1):
    """``(R_n, kappa_hat, clamped)`` arrays over replications ``0..replications-1``.

    Replication ``r`` at size ``n`` draws from the Philox stream keyed by
    ``(seed, n * 2**32 + r)``, so different ``n`` use unrelated draws.
    """
    grid = ObservationGrid(T, n)
    fact = cholesky_psd(gram_matrix(covariance_model(family), grid))
    table = link_table()
    def run(block):
        X = sample_paths(fact, seed, [(n << 32) + r for r in block])
        R = ir_statistic(second_differences(X))
        inv = [table.invert(float(r)) for r in R]
        return R, np.array([k for k, _ in inv]), np.array([c for _, c in inv])

    jobs = _blocks(replications)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(b) for b in jobs]
    R = np.concatenate([p[0] for p in parts])
    K = np.concatenate([p[1] for p in parts])
    C = np.concatenate([p[2] for p in parts])
    return R, K, C, fact


def run_consistency(cfg: ExperimentConfig) -> ExperimentReport:
    kappa = cfg.family.kappa
    if kappa >= CONSISTENCY_KAPPA_LIMIT:
        raise ValueError(f"consistency runs need kappa < {CONSISTENCY_KAPPA_LIMIT}, got {kappa}")
    if kappa >= CLT_KAPPA_LIMIT:
        warnings.warn(f"kappa={kappa} >= 0.75: outside the range covered by the limit theory", stacklevel=2)
    t0 = time.perf_counter()
    rep = ExperimentReport("consistency", cfg.to_dict())
    for n in sorted(cfg.n_list):
        _, k_hat, clamped, fact = simulate_statistics(cfg.family, cfg.T, n, cfg.replications, cfg.seed, cfg.workers)
        err = k_hat - kappa
        scaled = math.sqrt(n) * err
        rep.per_n.append(
            {
                "n": n,
                "mean_abs_error": float(np.mean(np.abs(err))),
                "mean_kappa_hat": float(np.mean(k_hat)),
                "sd_kappa_hat": float(np.std(k_hat, ddof=1)),
                "mean_scaled_error": float(np.mean(scaled)),
                "sd_scaled_error": float(np.std(scaled, ddof=1)),
                "clamped": int(np.sum(clamped)),
                "jitter": fact.jitter,
            }
        )
        rep.failures += int(np.sum(clamped))
    errs = [r["mean_abs_error"] for r in rep.per_n]
    rep.passed = all(b < a for a, b in zip(errs, errs[1:]))
    if rep.failures > 0.05 * cfg.replications * len(cfg.n_list):
        rep.passed = False
    rep.summary = {"kappa": kappa, "mean_abs_error": errs, "decreasing": rep.passed}
    rep.wall_clock = time.perf_counter() - t0
    return rep


def _moment_check(x: np.ndarray) -> dict:
    n = x.size
    s = float(skew(x))
    k = float(kurtosis(x))
    s_lim = 4 * math.sqrt(6 / n)
    k_lim = 4 * math.sqrt(24 / n)
    return {"skew": s, "excess_kurtosis": k, "skew_limit": s_lim, "kurtosis_limit": k_lim,
            "passed": abs(s) <= s_lim and abs(k) <= k_lim}


def run_clt(cfg: ExperimentConfig) -> ExperimentReport:
    """Distribution of ``sqrt(n)(R_n - Lambda(kappa))`` and of ``sqrt(n)(kappa_hat - kappa)``.

    Checks the variance ratio against ``Sigma(kappa)``, the centring, the
    moments and the coverage of the delta-method interval.
    """
    kappa = cfg.family.kappa
    if kappa >= CLT_KAPPA_LIMIT:
        raise ValueError(
            f"CLT claims need kappa < 3/4 (got kappa={kappa}); the limit theory does not cover this family"
        )
    t0 = time.perf_counter()
    rep = ExperimentReport("clt", cfg.to_dict())
    sig = sigma_series(kappa, cfg.sigma_K, cfg.sigma_m, cfg.seed, cfg.workers)
    lam = float(Lambda(kappa))
    lp = float(Lambda_prime(kappa))
    z = norm.ppf(1 - cfg.alpha / 2)
    ok = True
    for n in sorted(cfg.n_list):
        R, k_hat, clamped, fact = simulate_statistics(cfg.family, cfg.T, n, cfg.replications, cfg.seed, cfg.workers)
        reps = R.size
        sR = math.sqrt(n) * (R - lam)
        sK = math.sqrt(n) * (k_hat - kappa)
        var_R = float(np.var(sR, ddof=1))
        var_K = float(np.var(sK, ddof=1))
        z_mean = float(np.mean(sR) / math.sqrt(sig.value / reps))
        # Sigma at each estimate, from a grid spanning the observed estimates
        lo = math.floor(k_hat.min() / SIGMA_GRID_STEP) * SIGMA_GRID_STEP
        hi = math.ceil(k_hat.max() / SIGMA_GRID_STEP) * SIGMA_GRID_STEP
        xs = np.round(np.arange(lo, hi + SIGMA_GRID_STEP / 2, SIGMA_GRID_STEP), 10)
        xs = xs[(xs > 0) & (xs < 1)]
        table = SigmaTable.build(xs, cfg.sigma_K, cfg.sigma_m, cfg.seed, cfg.workers)
        half = z * np.sqrt(table(k_hat)) / (Lambda_prime(k_hat) * math.sqrt(n))
        covered = np.abs(k_hat - kappa) <= half
        coverage = float(np.mean(covered))
        ratio_R = var_R / sig.value
        ratio_K = var_K / (sig.value / lp**2)
        moments = _moment_check(sR)
        # binomial band around the nominal level, wider on the low side where
        # finite-n bias in the interval width shows up
        nominal = 1 - cfg.alpha
        se_cov = math.sqrt(nominal * (1 - nominal) / reps)
        band = (nominal - 4 * se_cov, min(1.0, nominal + 3 * se_cov))
        checks = {
            "variance_ratio": 0.75 <= ratio_R <= 1.33,
            "centering": abs(z_mean) < 4,
            "coverage": band[0] <= coverage <= band[1],
            "normality": moments["passed"],
        }
        row = {
            "n": n,
            "replications": reps,
            "sigma_hat": sig.value,
            "sigma_se": sig.standard_error,
            "Lambda": lam,
            "Lambda_prime": lp,
            "var_scaled_R": var_R,
            "variance_ratio_R": ratio_R,
            "var_scaled_kappa": var_K,
            "variance_ratio_kappa": ratio_K,
            "mean_scaled_R": float(np.mean(sR)),
            "z_mean": z_mean,
            "mean_kappa_hat": float(np.mean(k_hat)),
            "sd_kappa_hat": float(np.std(k_hat, ddof=1)),
            "coverage": coverage,
            "coverage_band": list(band),
            "clamped": int(np.sum(clamped)),
            "moments": moments,
            "checks": checks,
        }
        rep.per_n.append(row)
        rep.failures += int(np.sum(clamped))
        ok &= all(checks.values())
    rep.passed = bool(ok and rep.failures <= 0.05 * cfg.replications * len(cfg.n_list))
    rep.summary = {"kappa": kappa, "sigma_hat": sig.value, "sigma_se": sig.standard_error}
    rep.wall_clock = time.perf_counter() - t0
    return rep


@dataclass(frozen=True)
class SuiteConfig:
    families: tuple
    t: float = 1.0
    tau_pairs: tuple = DEFAULT_TAU_PAIRS
    u_ladder: tuple = DEFAULT_LADDER
    lambdas: tuple = (0.5, 2.0, 10.0)
    n_list: tuple = (16, 64, 256)
    zeta: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if not self.families:
            raise ValueError("family list is empty")
        for f in self.families:
            if not isinstance(f, ProcessFamily):
                raise ValueError(f"not a ProcessFamily: {f!r}")


def _map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def run_ssl_suite(cfg: SuiteConfig) -> dict:
    def one(f):
        r = ssl_convergence_report(SslCheckConfig(f, cfg.t, cfg.tau_pairs, cfg.u_ladder)).to_dict()
        r["slow_variation"] = slow_variation_report(f, cfg.lambdas, cfg.u_ladder)
        return r

    reports = _map(one, cfg.families, cfg.workers)
    passed = all(r["passed"] and r["slow_variation"]["passed"] for r in reports)
    return {"schema": 1, "kind": "ssl_suite", "reports": reports, "passed": passed}


def run_condition_suite(cfg: SuiteConfig) -> dict:
    reports = _map(lambda f: condition_checks(f, cfg.n_list, cfg.zeta, cfg.u_ladder), cfg.families, cfg.workers)
    return {"schema": 1, "kind": "condition_suite", "reports": reports, "passed": all(r["passed"] for r in reports)}
