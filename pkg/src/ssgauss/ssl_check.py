"""Numerical checks of the small-scale limit and of the regularity of ``L``.

Everything is computed at covariance level: the normalised increments
``(X_t - X_{t + u tau}) / (u^kappa L(u))`` are Gaussian, so convergence of
their covariances to those of ``c_t B^kappa`` is convergence of the
finite-dimensional laws.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .kernels import (
    CovarianceModel,
    ProcessFamily,
    covariance,
    covariance_model,
    second_diff_p_combination,
    slow_var_L2_limit,
)
from .quadrature import QuadratureSpec

__all__ = [
    "DEFAULT_LADDER",
    "DEFAULT_TAU_PAIRS",
    "SslCheckConfig",
    "normalized_increment_cov",
    "normalized_increment_cov_direct",
    "limit_cov",
    "ssl_convergence_report",
    "slow_variation_report",
    "condition_checks",
]

DEFAULT_LADDER = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
DEFAULT_TAU_PAIRS = ((1.0, 1.0), (1.0, 2.0), (0.5, 3.0))
# tighter than the kernel default: the (L3) combination cancels nine p values
CONDITION_QUAD = QuadratureSpec(tol=1e-14)
# values this small count as exact zeros in trend checks
_ZERO = 1e-9


def _model(obj, quad: QuadratureSpec | None = None) -> CovarianceModel:
    if isinstance(obj, CovarianceModel):
        return obj
    return covariance_model(obj, quad) if quad else covariance_model(obj)


def _label(obj) -> str:
    if isinstance(obj, ProcessFamily):
        return obj.spec()
    if obj.family is not None:
        return obj.family.spec()
    return f"model(gamma={obj.gamma}, kappa={obj.kappa})"


def normalized_increment_cov(model, t: float, u: float, tau1: float, tau2: float) -> float:
    """``Cov(Z_tau1, Z_tau2)`` for ``Z_tau = (X_t - X_{t+u tau}) / (u^kappa L(u))``.

    Built from the variogram ``E(X_a - X_b)^2 = sigma^2 a^(2 gamma) p((b - a) / a)``
    so no O(1) covariances are subtracted.
    """
    m = _model(model)
    if not (t > 0 and u > 0):
        raise ValueError("t and u must be positive")
    if tau1 < 0 or tau2 < 0:
        raise ValueError("tau must be nonnegative")
    # lags are formed from u directly; t + u*tau would round away the small part
    lo, hi = min(tau1, tau2), max(tau1, tau2)
    base = t + u * lo

    def vario(start, lag):
        return m.sigma2 * start ** (2 * m.gamma) * m.p(lag / start)

    num = vario(t, u * tau1) + vario(t, u * tau2) - vario(base, u * (hi - lo))
    return float(0.5 * num / m.p(u))


def normalized_increment_cov_direct(model, t: float, u: float, tau1: float, tau2: float) -> float:
    """Same quantity from four covariance evaluations; loses digits as ``u -> 0``."""
    m = _model(model)
    a, b = t + u * tau1, t + u * tau2
    R = lambda s, r: covariance(m, s, r)  # noqa: E731
    return float((R(t, t) - R(t, a) - R(t, b) + R(a, b)) / m.p(u))


def limit_cov(model, t: float, tau1: float, tau2: float) -> float:
    """Covariance of ``c_t B^kappa`` at ``(tau1, tau2)``, ``c_t = sigma t^(gamma - kappa)``."""
    m = _model(model)
    k2 = 2 * m.kappa
    ct2 = m.sigma2 * t ** (2 * (m.gamma - m.kappa))
    return ct2 * 0.5 * (tau1**k2 + tau2**k2 - abs(tau2 - tau1) ** k2)


@dataclass(frozen=True)
class SslCheckConfig:
    family: ProcessFamily | CovarianceModel
    t: float = 1.0
    tau_pairs: tuple = DEFAULT_TAU_PAIRS
    u_ladder: tuple = DEFAULT_LADDER
    rel_tol: float = 1e-3

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("t must be positive")
        if not self.tau_pairs:
            raise ValueError("need at least one tau pair")
        for a, b in self.tau_pairs:
            if a < 0 or b < 0:
                raise ValueError("tau values must be nonnegative")
        lad = np.asarray(self.u_ladder, dtype=float)
        if lad.size < 2 or np.any(np.diff(lad) >= 0) or lad[-1] < 1e-8 or lad[0] <= 0:
            raise ValueError("u ladder must be strictly decreasing within [1e-8, inf)")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")


def _trending_down(values) -> bool:
    v = np.abs(np.asarray(values, dtype=float))
    if np.all(v <= _ZERO):
        return True
    return bool(v[-1] < v[0])


@dataclass
class SslReport:
    family: str
    t: float
    u_ladder: list
    pairs: list = field(default_factory=list)
    passed: bool = True

    def to_dict(self) -> dict:
        return {"schema": 1, "kind": "ssl_convergence", **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def table(self) -> str:
        lines = [f"{'tau1':>6} {'tau2':>6} {'u':>9} {'cov':>14} {'limit':>14} {'rel.dev':>10}"]
        for p in self.pairs:
            for u, c, d in zip(self.u_ladder, p["cov"], p["rel_dev"]):
                lines.append(f"{p['tau1']:6.3g} {p['tau2']:6.3g} {u:9.1e} {c:14.8g} {p['limit']:14.8g} {d:10.2e}")
        return "\n".join(lines)


def ssl_convergence_report(cfg: SslCheckConfig) -> SslReport:
    m = _model(cfg.family)
    rep = SslReport(_label(cfg.family), cfg.t, list(cfg.u_ladder))
    for tau1, tau2 in cfg.tau_pairs:
        lim = limit_cov(m, cfg.t, tau1, tau2)
        covs = [normalized_increment_cov(m, cfg.t, u, tau1, tau2) for u in cfg.u_ladder]
        dev = [abs(c - lim) for c in covs]
        rel = [d / abs(lim) if lim else d for d in dev]
        monotone = all(b <= a or b <= _ZERO * 1e-3 for a, b in zip(rel, rel[1:]))
        passed = rel[-1] <= cfg.rel_tol and _trending_down(rel)
        rep.pairs.append(
            {
                "tau1": tau1,
                "tau2": tau2,
                "limit": lim,
                "cov": covs,
                "abs_dev": dev,
                "rel_dev": rel,
                "monotone": monotone,
                "passed": passed,
            }
        )
        rep.passed &= passed
    return rep


def slow_variation_report(family, lambdas=(0.5, 2.0, 10.0), u_ladder=DEFAULT_LADDER, tol: float = 1e-3) -> dict:
    """Ratios ``L(lambda u) / L(u)`` along the ladder."""
    m = _model(family)
    u = np.asarray(u_ladder, dtype=float)
    rows = []
    ok = True
    for lam in lambdas:
        if not lam > 0:
            raise ValueError("lambda must be positive")
        ratios = np.sqrt(m.L2(lam * u) / m.L2(u))
        dev = np.abs(ratios - 1)
        passed = bool(dev[-1] <= tol and _trending_down(dev))
        rows.append({"lambda": lam, "ratio": ratios.tolist(), "passed": passed})
        ok &= passed
    return {"schema": 1, "kind": "slow_variation", "family": _label(family), "u": u.tolist(), "rows": rows, "passed": ok}


# smallest u sampled for (L3); matches the end of the default ladder
L3_U_MIN = 1e-6


def l3_u_samples(n: int, u_min: float = L3_U_MIN) -> np.ndarray:
    """``u = 1/n``, ``1/(2n)`` and the dyadic points ``2^-j`` in ``[u_min, 1/(2n))``.

    The dyadic tail is common to every ``n``, so the sample sets are nested
    as the interval ``(0, 1/n]`` shrinks.
    """
    top = 1.0 / (2 * n)
    tail = [2.0**-j for j in range(1, 64) if u_min <= 2.0**-j < top]
    return np.array([1.0 / n, top] + tail)


def l3_profile(family, n: int, zeta: float, quad: QuadratureSpec = CONDITION_QUAD, u_min: float = L3_U_MIN) -> np.ndarray:
    """``|combination| k^zeta / u^(2 kappa)`` for ``k = 2..n-2``, maximised over :func:`l3_u_samples`."""
    k = np.arange(2, n - 1)
    kappa = family.kappa
    best = np.zeros(k.size)
    for u in l3_u_samples(n, u_min):
        comb = second_diff_p_combination(family, k, np.full(k.size, u), quad)
        best = np.maximum(best, np.abs(comb) * k**zeta / u ** (2 * kappa))
    return best


def condition_checks(
    family,
    n_list=(16, 64, 256),
    zeta: float = 1.0,
    u_ladder=DEFAULT_LADDER,
    growth_tol: float = 1e-3,
    quad: QuadratureSpec = CONDITION_QUAD,
) -> dict:
    """Evidence for the three regularity conditions on ``L``.

    (L1) ``L(0)`` is positive, finite and approached along the ladder.
    (L2) ``|L(u) - L(0)| / sqrt(u)`` trends to zero along the ladder.
    (L3) the normalised combination, times ``k^zeta``, stays bounded in ``n``:
    its maximum over ``k`` and the sampled ``u`` may not grow by more than
    ``growth_tol`` from one ``n`` to the next.  ``non_increasing`` reports the
    stricter monotone reading; maxima below rounding level count as zero.
    """
    if not zeta > 0.5:
        raise ValueError("zeta must exceed 1/2")
    n_list = sorted(int(n) for n in n_list)
    if n_list[0] < 8:
        raise ValueError("n must be >= 8")
    m = _model(family, quad)
    u = np.asarray(u_ladder, dtype=float)
    if isinstance(family, ProcessFamily):
        L0 = math.sqrt(slow_var_L2_limit(family, quad))
    else:
        L0 = float(np.sqrt(m.L2(u[-1])))
    Lu = np.sqrt(m.L2(u))
    l1_ok = bool(math.isfinite(L0) and L0 > 0 and abs(Lu[-1] - L0) <= 1e-2 * L0)
    l2_ratio = np.abs(Lu - L0) / np.sqrt(u)
    l2_ok = _trending_down(l2_ratio)
    maxima = []
    for n in n_list:
        prof = l3_profile(family, n, zeta, quad)
        maxima.append(float(prof.max()))
    growth = [
        (b / a if a > _ZERO else (1.0 if b <= _ZERO else math.inf)) for a, b in zip(maxima, maxima[1:])
    ]
    non_increasing = max(maxima) <= _ZERO or all(b <= a for a, b in zip(maxima, maxima[1:]))
    l3_ok = all(g <= 1 + growth_tol for g in growth)
    return {
        "schema": 1,
        "kind": "conditions",
        "family": _label(family),
        "L0": L0,
        "L1": {"L_ladder": Lu.tolist(), "passed": l1_ok},
        "L2": {"u": u.tolist(), "ratio": l2_ratio.tolist(), "passed": l2_ok},
        "L3": {
            "zeta": zeta,
            "n": n_list,
            "u_samples": [l3_u_samples(n).tolist() for n in n_list],
            "max_ratio": maxima,
            "growth": growth,
            "non_increasing": non_increasing,
            "passed": l3_ok,
        },
        "passed": l1_ok and l2_ok and l3_ok,
    }
