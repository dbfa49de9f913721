"""Increment-ratio estimation of the roughness index ``kappa``.

The statistic is the mean of ``psi`` over consecutive pairs of second
differences.  It converges to ``Lambda(kappa) = lambda(rho(kappa))`` and is
inverted through a tabulated, strictly increasing link.  Confidence
intervals use the delta method with the long-run variance ``Sigma`` of the
``psi`` sequence under fractional Brownian motion.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import norm

from .sampler import GridSample, ObservationGrid, fbm_cov_second_diff, generator, second_differences

__all__ = [
    "KAPPA_MIN",
    "KAPPA_MAX",
    "ClampWarning",
    "SigmaEstimationError",
    "psi",
    "ir_statistic",
    "degenerate_pairs",
    "lambda_of_r",
    "rho",
    "Lambda",
    "Lambda_prime",
    "Lambda_inverse",
    "LinkTable",
    "link_table",
    "SigmaEstimate",
    "sigma_series",
    "SigmaTable",
    "EstimateReport",
    "estimate_kappa",
]

KAPPA_MIN = 0.01
KAPPA_MAX = 0.99

SIGMA_K = 50
SIGMA_M = 200_000
# draws per Philox substream in sigma_series
_SIGMA_BLOCK = 25_000


class ClampWarning(UserWarning):
    """The statistic fell outside the range of the link function."""


class SigmaEstimationError(ArithmeticError):
    pass


def psi(x, y):
    """``|x + y| / (|x| + |y|)``, with ``psi(0, 0) = 1``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    den = np.abs(x) + np.abs(y)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, np.abs(x + y) / den, 1.0)
    return float(out) if out.ndim == 0 else out


def _check_d2(d2) -> np.ndarray:
    d2 = np.asarray(d2, dtype=float)
    if d2.shape[-1] < 2:
        raise ValueError("need at least two second differences")
    return d2


def ir_statistic(d2) -> float | np.ndarray:
    """Mean of ``psi`` over consecutive pairs along the last axis."""
    d2 = _check_d2(d2)
    out = psi(d2[..., :-1], d2[..., 1:])
    return np.mean(out, axis=-1)


def degenerate_pairs(d2) -> int:
    d2 = _check_d2(d2)
    return int(np.count_nonzero((d2[..., :-1] == 0) & (d2[..., 1:] == 0)))


def lambda_of_r(r):
    """Expected ``psi`` of a standard Gaussian pair with correlation ``r``."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(np.abs(r_arr) >= 1):
        raise ValueError("lambda(r) needs |r| < 1")
    out = (np.arccos(-r_arr) + np.sqrt((1 + r_arr) / (1 - r_arr)) * np.log(2 / (1 + r_arr))) / math.pi
    return float(out) if out.ndim == 0 else out


def rho(x):
    """Lag-one correlation of unit-step second differences of ``B^x``."""
    x_arr = np.asarray(x, dtype=float)
    if np.any((x_arr <= 0) | (x_arr >= 1)):
        raise ValueError("rho(x) needs x in (0, 1)")
    out = (-7 - 9.0**x_arr + 4.0 ** (x_arr + 1)) / (2 * (4 - 4.0**x_arr))
    return float(out) if out.ndim == 0 else out


def Lambda(x):
    return lambda_of_r(rho(x))


def Lambda_prime(x, h: float = 1e-5):
    """Central difference with one Richardson step."""
    d1 = (Lambda(x + h) - Lambda(x - h)) / (2 * h)
    h2 = h / 2
    d2 = (Lambda(x + h2) - Lambda(x - h2)) / (2 * h2)
    return (4 * d2 - d1) / 3


@dataclass(frozen=True)
class LinkTable:
    """``Lambda`` tabulated on ``[kappa_min, kappa_max]``; brackets inversion."""

    kappa: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    monotone: bool

    @classmethod
    def build(cls, kappa_min: float = KAPPA_MIN, kappa_max: float = KAPPA_MAX, points: int = 981) -> "LinkTable":
        grid = np.linspace(kappa_min, kappa_max, points)
        vals = Lambda(grid)
        monotone = bool(np.all(np.diff(vals) > 0))
        if not monotone:
            raise ArithmeticError("Lambda is not strictly increasing on the tabulated grid")
        return cls(grid, vals, monotone)

    @property
    def bounds(self) -> tuple[float, float]:
        return float(self.values[0]), float(self.values[-1])

    def invert(self, v: float, tol: float = 1e-12) -> tuple[float, bool]:
        """Return ``(kappa, clamped)``."""
        lo_v, hi_v = self.bounds
        if not math.isfinite(v):
            raise ValueError(f"cannot invert non-finite value {v}")
        if v <= lo_v:
            return float(self.kappa[0]), v < lo_v
        if v >= hi_v:
            return float(self.kappa[-1]), v > hi_v
        i = int(np.searchsorted(self.values, v))
        a, b = float(self.kappa[i - 1]), float(self.kappa[i])
        while True:
            mid = 0.5 * (a + b)
            fm = Lambda(mid)
            if abs(fm - v) <= tol or b - a <= 1e-15:
                return mid, False
            if fm < v:
                a = mid
            else:
                b = mid


@lru_cache(maxsize=1)
def link_table() -> LinkTable:
    return LinkTable.build()


def Lambda_inverse(v: float, table: LinkTable | None = None) -> float:
    table = table or link_table()
    k, clamped = table.invert(v)
    if clamped:
        warnings.warn(
            f"statistic {v:.6g} outside [{table.bounds[0]:.6g}, {table.bounds[1]:.6g}]; clamped to kappa={k}",
            ClampWarning,
            stacklevel=2,
        )
    return k


# ---------------------------------------------------------------------------
# long-run variance Sigma

@dataclass(frozen=True)
class SigmaEstimate:
    x: float
    value: float
    K: int
    m: int
    standard_error: float
    terms: np.ndarray = field(repr=False)
    term_se: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "sigma": self.value,
            "K": self.K,
            "m": self.m,
            "se": self.standard_error,
            "terms": self.terms.tolist(),
            "term_se": self.term_se.tolist(),
        }


def _sigma_block(chol: np.ndarray, seed: int, block: int, size: int, K: int):
    z = generator(seed, block).standard_normal((size, K + 2))
    v = z @ chol.T
    ps = psi(v[:, :-1], v[:, 1:])
    return ps


def sigma_series(
    x: float, K: int = SIGMA_K, m: int = SIGMA_M, seed: int = 0, workers: int = 1
) -> SigmaEstimate:
    """Monte Carlo estimate of ``c_0 + 2 sum_{k=1}^K c_k``.

    ``c_k`` is the covariance between ``psi`` of the pair at lag 0 and the
    pair at lag ``k`` of stationary unit-step second differences of ``B^x``.
    All terms are read off the same draws of the joint ``K + 2`` dimensional
    vector, so differences between terms carry little noise.
    """
    if not 0.0 < x < 1.0:
        raise ValueError(f"x must lie in (0, 1), got {x}")
    if K < 8:
        raise ValueError(f"truncation K must be >= 8, got {K}")
    if m < 1000:
        raise ValueError(f"need at least 1000 draws, got {m}")
    lags = np.arange(K + 2)
    c = fbm_cov_second_diff(x, lags)
    C = c[np.abs(lags[:, None] - lags[None, :])]
    try:
        chol = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise SigmaEstimationError(f"second-difference covariance at x={x} is not PD") from exc
    sizes = [min(_SIGMA_BLOCK, m - s) for s in range(0, m, _SIGMA_BLOCK)]
    jobs = [(chol, seed, b, size, K) for b, size in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            blocks = list(pool.map(lambda a: _sigma_block(*a), jobs))
    else:
        blocks = [_sigma_block(*a) for a in jobs]
    ps = np.concatenate(blocks)
    centered = ps - ps.mean(axis=0)
    prods = centered[:, :1] * centered
    terms = prods.sum(axis=0) / (m - 1)
    term_se = prods.std(axis=0, ddof=1) / math.sqrt(m)
    weights = np.full(K + 1, 2.0)
    weights[0] = 1.0
    combined = prods @ weights
    value = float(terms @ weights)
    se = float(combined.std(ddof=1) / math.sqrt(m))
    if not value > 0:
        raise SigmaEstimationError(f"nonpositive long-run variance estimate {value} at x={x}")
    return SigmaEstimate(float(x), value, int(K), int(m), se, terms, term_se)


@dataclass(frozen=True)
class SigmaTable:
    """``Sigma`` on a grid of ``x``, linearly interpolated in between."""

    x: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    se: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, xs, K: int = SIGMA_K, m: int = SIGMA_M, seed: int = 0, workers: int = 1) -> "SigmaTable":
        xs = np.asarray(sorted(set(float(v) for v in xs)))
        ests = [sigma_series(float(v), K, m, seed, workers) for v in xs]
        return cls(xs, np.array([e.value for e in ests]), np.array([e.standard_error for e in ests]))

    def __call__(self, x):
        if self.x.size == 1:
            return np.full(np.shape(x), self.values[0])[()] if np.ndim(x) else float(self.values[0])
        return np.interp(x, self.x, self.values)


# ---------------------------------------------------------------------------
# estimation

@dataclass(frozen=True)
class EstimateReport:
    R_n: float
    kappa_hat: float
    sigma_hat: float
    lambda_prime: float
    ci_low: float
    ci_high: float
    alpha: float
    n: int
    T: float
    degenerate_pairs: int = 0
    clamped: bool = False
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["warnings"] = list(self.warnings)
        return {"schema": 1, "kind": "estimate", **d}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def estimate_kappa(
    sample: GridSample,
    alpha: float = 0.05,
    sigma=None,
    table: LinkTable | None = None,
    sigma_seed: int = 0,
    sigma_K: int = SIGMA_K,
    sigma_m: int = SIGMA_M,
) -> EstimateReport:
    """Estimate ``kappa`` from one path and attach a delta-method interval.

    ``sigma`` may be a number, a callable of ``kappa`` (e.g. a
    :class:`SigmaTable`) or ``None``, in which case ``Sigma(kappa_hat)`` is
    estimated with :func:`sigma_series` under ``sigma_seed``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    grid = sample.grid
    if grid.n < 16:
        raise ValueError(f"estimation needs n >= 16, got {grid.n}")
    table = table or link_table()
    d2 = second_differences(sample)
    R = float(ir_statistic(d2))
    degenerate = degenerate_pairs(d2)
    k_hat, clamped = table.invert(R)
    notes = []
    if clamped:
        notes.append(f"statistic {R:.6g} outside link range; kappa clamped to {k_hat}")
    if degenerate:
        notes.append(f"{degenerate} pairs of zero second differences")
    if sigma is None:
        s_hat = sigma_series(k_hat, sigma_K, sigma_m, sigma_seed).value
    elif callable(sigma):
        s_hat = float(sigma(k_hat))
    else:
        s_hat = float(sigma)
    lp = float(Lambda_prime(k_hat))
    half = norm.ppf(1 - alpha / 2) * math.sqrt(s_hat) / (lp * math.sqrt(grid.n))
    return EstimateReport(
        R_n=R,
        kappa_hat=k_hat,
        sigma_hat=s_hat,
        lambda_prime=lp,
        ci_low=k_hat - half,
        ci_high=k_hat + half,
        alpha=alpha,
        n=grid.n,
        T=grid.T,
        degenerate_pairs=degenerate,
        clamped=clamped,
        warnings=tuple(notes),
    )
