"""Covariance class ``R(s,t) = sigma^2 (s^t)^(2 gamma) l(|s-t| / (s^t))``.

Four members are provided: sub-fractional (``sfbm``), bi-fractional (``bfbm``)
and fractional (``fbm``) Brownian motion, and the Riemann-Liouville process
(``rl``).  Each is described by its ``l`` function and, equivalently, by

    p(u) = u^(2 kappa) L(u)^2 = 1 + (1 + u)^(2 gamma) - 2 l(u),

where ``L`` is slowly varying at zero.  ``p(|t-s| / (s^t)) (s^t)^(2 gamma)``
is the normalised variogram ``E(X_t - X_s)^2 / sigma^2``, so the ``p`` route is
the well conditioned one whenever increments over short lags are needed.

All functions accept scalars or arrays and broadcast like numpy ufuncs.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, special

from .quadrature import DEFAULT_QUAD, QuadratureSpec, tanh_sinh

__all__ = [
    "ProcessFamily",
    "CovarianceModel",
    "covariance_model",
    "l_sfbm",
    "l_bfbm",
    "l_rl",
    "l_fbm",
    "l_function",
    "p_function",
    "slow_var_L2",
    "slow_var_L2_limit",
    "covariance",
    "direct_covariance",
    "second_diff",
    "second_diff_p_combination",
]

FAMILIES = ("sfbm", "bfbm", "rl", "fbm")

# below this lag l is assembled from p instead of its own closed form
SMALL_U = 1e-4

# rows of u evaluated per quadrature batch (bounds temporary memory)
_RL_CHUNK = 20_000


def _check_H(H: float) -> float:
    H = float(H)
    if not 0.0 < H < 1.0:
        raise ValueError(f"H must lie in (0, 1), got {H}")
    return H


def _check_K(K: float) -> float:
    K = float(K)
    if not 0.0 < K <= 1.0:
        raise ValueError(f"K must lie in (0, 1], got {K}")
    return K


@dataclass(frozen=True)
class ProcessFamily:
    """A named member of the covariance class with its parameters.

    ``K`` is only meaningful for ``bfbm``; the other families keep ``K = 1``.
    """

    name: str
    H: float
    K: float = 1.0

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ValueError(f"unknown family {self.name!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "H", _check_H(self.H))
        object.__setattr__(self, "K", _check_K(self.K))
        if self.name != "bfbm" and self.K != 1.0:
            raise ValueError(f"K is only a parameter of bfbm, not {self.name}")

    @classmethod
    def sfbm(cls, H: float) -> "ProcessFamily":
        return cls("sfbm", H)

    @classmethod
    def bfbm(cls, H: float, K: float) -> "ProcessFamily":
        return cls("bfbm", H, K)

    @classmethod
    def rl(cls, H: float) -> "ProcessFamily":
        return cls("rl", H)

    @classmethod
    def fbm(cls, H: float) -> "ProcessFamily":
        return cls("fbm", H)

    @classmethod
    def parse(cls, text: str) -> "ProcessFamily":
        """Parse ``"name:key=val,key=val"``, e.g. ``"bfbm:H=0.6,K=0.8"``."""
        m = re.fullmatch(r"\s*([a-zA-Z]+)\s*:\s*(.+?)\s*", text)
        if not m:
            raise ValueError(f"malformed family spec {text!r}; expected name:H=...")
        name = m.group(1).lower()
        if name not in FAMILIES:
            raise ValueError(f"unknown family {name!r}; expected one of {FAMILIES}")
        allowed = {"H", "K"} if name == "bfbm" else {"H"}
        params: dict[str, float] = {}
        for item in m.group(2).split(","):
            key, sep, val = item.partition("=")
            key = key.strip()
            if not sep or key not in allowed:
                raise ValueError(f"unexpected parameter {item.strip()!r} for {name}")
            if key in params:
                raise ValueError(f"duplicate parameter {key!r}")
            try:
                params[key] = float(val)
            except ValueError:
                raise ValueError(f"parameter {key} is not a number: {val.strip()!r}") from None
        if set(params) != allowed:
            missing = sorted(allowed - set(params))
            raise ValueError(f"{name} needs parameters {missing}")
        return cls(name, **params)

    def spec(self) -> str:
        if self.name == "bfbm":
            return f"bfbm:H={self.H!r},K={self.K!r}"
        return f"{self.name}:H={self.H!r}"

    def __str__(self) -> str:
        return self.spec()

    @property
    def kappa(self) -> float:
        return self.H * self.K

    @property
    def gamma(self) -> float:
        return self.H * self.K

    @property
    def sigma2(self) -> float:
        H = self.H
        if self.name == "sfbm":
            return 2.0 - 2.0 ** (2 * H - 1)
        if self.name == "rl":
            return 1.0 / (2 * H * special.gamma(H + 0.5) ** 2)
        return 1.0

    def to_dict(self) -> dict:
        d = {"name": self.name, "H": self.H}
        if self.name == "bfbm":
            d["K"] = self.K
        return d


def _scalar_out(x, out):
    return float(out) if np.ndim(x) == 0 else out


def _lag(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or np.any(~np.isfinite(u)):
        raise ValueError("lag u must be finite and nonnegative")
    return u


def _pow1p_m1(x, a):
    """``(1 + x)^a - 1`` without cancellation for small ``x``."""
    return np.expm1(a * np.log1p(x))


# ---------------------------------------------------------------------------
# slowly varying part, L^2(u)

# below this lag the L^2 brackets, which cancel at first order in u, are
# summed from their power series with the linear term removed exactly
_SERIES_U = 0.05
_SERIES_TERMS = 26
# the RL tail integrand switches to its leading term below this argument
_TAYLOR_U = 1e-50


def _binom_coeffs(alpha: float, n: int) -> np.ndarray:
    """Coefficients ``c_j`` of ``(1 + x)^alpha = sum_j c_j x^j`` for ``j < n``."""
    c = np.empty(n)
    c[0] = 1.0
    for j in range(1, n):
        c[j] = c[j - 1] * (alpha - j + 1) / j
    return c


def _poly_mul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.convolve(p, q)[: p.size]


@lru_cache(maxsize=256)
def _bracket_series(name: str, H: float, K: float) -> np.ndarray:
    """Series coefficients ``b_j``, ``j >= 2``, of the L^2 bracket divided by ``u^2``."""
    n = _SERIES_TERMS
    if name == "sfbm":
        c = _binom_coeffs(2 * H, n)
        br = c * (0.5 ** np.arange(n) - 0.5)
    else:
        # 2^(K-1) ((1+u)^(2HK) - 1) - 2^K ((1 + b/2)^K - 1), b = (1+u)^(2H) - 1
        w = _binom_coeffs(2 * H, n) / 2
        w[0] = 0.0
        ck = _binom_coeffs(K, n)
        comp = np.zeros(n)
        power = np.zeros(n)
        power[0] = 1.0
        for m in range(1, n):
            power = _poly_mul(power, w)
            comp += ck[m] * power
        br = 2.0 ** (K - 1) * _binom_coeffs(2 * H * K, n) - 2.0**K * comp
    br[:2] = 0.0
    return br[2:]


def _series_corr(u, coeffs, expo):
    """``u^(expo) * sum_j coeffs_j u^j`` by Horner, in logs against underflow."""
    acc = np.zeros_like(u)
    for c in coeffs[::-1]:
        acc = acc * u + c
    return np.exp(expo * np.log(u)) * acc


def _L2_sfbm(u, H):
    u = np.asarray(u, dtype=float)
    near = u < _SERIES_U
    us = np.where(near, 1.0, u)
    br = _pow1p_m1(us / 2, 2 * H) - 0.5 * _pow1p_m1(us, 2 * H)
    corr = (2.0 / us) ** (2 * H) * br
    un = np.where(near, u, 1.0)
    ser = 2.0 ** (2 * H) * _series_corr(un, _bracket_series("sfbm", H, 1.0), 2 - 2 * H)
    return (1.0 + np.where(near, ser, corr)) / (2.0 - 2.0 ** (2 * H - 1))


def _L2_bfbm(u, H, K):
    u = np.asarray(u, dtype=float)
    near = u < _SERIES_U
    us = np.where(near, 1.0, u)
    a = _pow1p_m1(us, 2 * H * K)
    b = _pow1p_m1(us, 2 * H)
    br = 2.0 ** (K - 1) * a - 2.0**K * _pow1p_m1(b / 2, K)
    corr = us ** (-2 * H * K) * br
    un = np.where(near, u, 1.0)
    ser = _series_corr(un, _bracket_series("bfbm", H, K), 2 - 2 * H * K)
    return 2.0 ** (1 - K) * (1.0 + np.where(near, ser, corr))


def _rl_F(v, a):
    # v^(2H-1) + (v+1)^(2H-1) - 2 (v(v+1))^(H-1/2), written as a square
    return np.exp(2 * a * np.log(v)) * _pow1p_m1(1.0 / v, a) ** 2


def _rl_G(x, a):
    # F(1/x) / x^2, the tail of F after v = 1/x
    x = np.asarray(x, dtype=float)
    tiny = x < _TAYLOR_U
    xs = np.where(tiny, 1.0, x)
    ratio = np.where(tiny, a, _pow1p_m1(xs, a) / xs)
    return np.exp(-2 * a * np.log(x)) * ratio**2


@lru_cache(maxsize=256)
def _rl_tail_total(H: float, tol: float, max_level: int) -> float:
    """Integral of F over (0, inf)."""
    spec = QuadratureSpec(tol=tol, max_level=max_level)
    a = H - 0.5
    head = tanh_sinh(lambda v: _rl_F(v, a), 0.0, 1.0, spec).value
    tail = tanh_sinh(lambda x: _rl_G(x, a), 0.0, 1.0, spec).value
    return float(head + tail)


def _L2_rl(u, H, quad: QuadratureSpec):
    a = H - 0.5
    u = np.asarray(u, dtype=float)
    flat = u.ravel()
    J = np.empty_like(flat)
    total = _rl_tail_total(H, quad.tol, quad.max_level)
    tiny = flat < _TAYLOR_U
    if np.any(tiny):
        # G(x) ~ a^2 x^(-2a) at 0, so u * int_0^1 G(u y) dy ~ a^2 u^(1-2a) / (1-2a)
        J[tiny] = total - a * a * np.exp((1 - 2 * a) * np.log(flat[tiny])) / (1 - 2 * a)
    small = (flat < 1.0) & ~tiny
    if np.any(small):
        us = flat[small]
        # integral of F over (0, 1/u) = total - integral of G over (0, u)
        chunks = []
        for c in range(0, us.size, _RL_CHUNK):
            uc = us[c : c + _RL_CHUNK, None]
            r = tanh_sinh(lambda y: _rl_G(uc * y, a), 0.0, 1.0, quad)
            chunks.append(total - us[c : c + _RL_CHUNK] * r.value)
        J[small] = np.concatenate(chunks)
    big = flat >= 1.0
    if np.any(big):
        ub = flat[big]
        chunks = []
        for c in range(0, ub.size, _RL_CHUNK):
            uc = ub[c : c + _RL_CHUNK, None]
            r = tanh_sinh(lambda y: _rl_F(y / uc, a), 0.0, 1.0, quad)
            chunks.append(r.value / ub[c : c + _RL_CHUNK])
        J[big] = np.concatenate(chunks)
    return (1.0 + 2 * H * J).reshape(u.shape)


def slow_var_L2(family: ProcessFamily, u, quad: QuadratureSpec = DEFAULT_QUAD):
    """``L(u)^2`` for ``u > 0``."""
    x = np.asarray(u, dtype=float)
    if np.any(x <= 0) or np.any(~np.isfinite(x)):
        raise ValueError("L^2 is defined for finite u > 0 only")
    H, K = family.H, family.K
    if family.name == "sfbm":
        out = _L2_sfbm(x, H)
    elif family.name == "bfbm":
        out = _L2_bfbm(x, H, K)
    elif family.name == "rl":
        out = _L2_rl(x, H, quad)
    else:
        out = np.ones_like(x)
    return _scalar_out(u, out)


def slow_var_L2_limit(family: ProcessFamily, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """``lim L(u)^2`` as ``u -> 0``."""
    if family.name == "sfbm":
        return 2.0 / (4.0 - 4.0**family.H)
    if family.name == "bfbm":
        return 2.0 ** (1 - family.K)
    if family.name == "rl":
        return 1.0 + 2 * family.H * _rl_tail_total(family.H, quad.tol, quad.max_level)
    return 1.0


def p_function(family: ProcessFamily, u, quad: QuadratureSpec = DEFAULT_QUAD):
    """``p(u) = u^(2 kappa) L(u)^2`` with ``p(0) = 0``."""
    x = _lag(u)
    out = np.zeros_like(x)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        out[pos] = xp ** (2 * family.kappa) * slow_var_L2(family, xp, quad)
    return _scalar_out(u, out)


# ---------------------------------------------------------------------------
# l functions

def _from_p(x, gamma, pvals):
    return 0.5 * (1.0 + (1.0 + x) ** (2 * gamma)) - 0.5 * pvals


def l_sfbm(u, H: float):
    H = _check_H(H)
    x = _lag(u)
    out = (1.0 + (1.0 + x) ** (2 * H) - 0.5 * ((2.0 + x) ** (2 * H) + x ** (2 * H))) / (
        2.0 - 2.0 ** (2 * H - 1)
    )
    tiny = (x < SMALL_U) & (x > 0)
    if np.any(tiny):
        fam = ProcessFamily.sfbm(H)
        out = np.where(tiny, _from_p(x, H, p_function(fam, np.where(tiny, x, 1.0))), out)
    out = np.where(x == 0, 1.0, out)
    return _scalar_out(u, out)


def l_bfbm(u, H: float, K: float):
    H, K = _check_H(H), _check_K(K)
    x = _lag(u)
    out = 2.0 ** (-K) * ((1.0 + (1.0 + x) ** (2 * H)) ** K - x ** (2 * H * K))
    tiny = (x < SMALL_U) & (x > 0)
    if np.any(tiny):
        fam = ProcessFamily.bfbm(H, K)
        out = np.where(tiny, _from_p(x, H * K, p_function(fam, np.where(tiny, x, 1.0))), out)
    out = np.where(x == 0, 1.0, out)
    return _scalar_out(u, out)


def l_fbm(u, H: float):
    H = _check_H(H)
    x = _lag(u)
    out = 0.5 * (1.0 + (1.0 + x) ** (2 * H) - x ** (2 * H))
    return _scalar_out(u, out)


def l_rl(u, H: float, quad: QuadratureSpec = DEFAULT_QUAD):
    """``2H * int_0^1 ((v + u) v)^(H - 1/2) dv`` by tanh-sinh quadrature."""
    H = _check_H(H)
    x = _lag(u)
    a = H - 0.5
    flat = x.ravel()
    out = np.ones_like(flat)
    big = flat >= SMALL_U
    if np.any(big):
        ub = flat[big]
        vals = []
        for c in range(0, ub.size, _RL_CHUNK):
            uc = ub[c : c + _RL_CHUNK, None]
            r = tanh_sinh(lambda v: np.exp(a * (np.log(v + uc) + np.log(v))), 0.0, 1.0, quad)
            vals.append(2 * H * r.value)
        out[big] = np.concatenate(vals)
    tiny = (flat > 0) & ~big
    if np.any(tiny):
        ut = flat[tiny]
        out[tiny] = _from_p(ut, H, ut ** (2 * H) * _L2_rl(ut, H, quad))
    return _scalar_out(u, out.reshape(x.shape))


def l_function(family: ProcessFamily, u, quad: QuadratureSpec = DEFAULT_QUAD):
    if family.name == "sfbm":
        return l_sfbm(u, family.H)
    if family.name == "bfbm":
        return l_bfbm(u, family.H, family.K)
    if family.name == "rl":
        return l_rl(u, family.H, quad)
    return l_fbm(u, family.H)


# ---------------------------------------------------------------------------
# covariance

@dataclass(frozen=True)
class CovarianceModel:
    """The triple ``(gamma, sigma^2, l)`` plus the derived ``kappa``, ``L``, ``p``.

    ``l``, ``L2`` and ``p`` are vectorised callables of the lag.  ``family`` is
    set when the model comes from :func:`covariance_model`.
    """

    gamma: float
    sigma2: float
    kappa: float
    l: Callable = field(repr=False)
    L2: Callable = field(repr=False)
    p: Callable = field(repr=False)
    family: ProcessFamily | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")

    def L(self, u):
        return np.sqrt(self.L2(u))

    def variogram(self, s, t):
        """``E(X_t - X_s)^2``, computed from ``p``."""
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        lo = np.minimum(s, t)
        hi = np.maximum(s, t)
        safe = np.where(lo > 0, lo, 1.0)
        out = self.sigma2 * safe ** (2 * self.gamma) * self.p((hi - lo) / safe)
        # X_0 = 0, so the variogram from the origin is the variance
        out = np.where(lo > 0, out, self.sigma2 * hi ** (2 * self.gamma))
        return _scalar_out(s if np.ndim(s) else t, out)


def covariance_model(family: ProcessFamily, quad: QuadratureSpec = DEFAULT_QUAD) -> CovarianceModel:
    return CovarianceModel(
        gamma=family.gamma,
        sigma2=family.sigma2,
        kappa=family.kappa,
        l=lambda u: l_function(family, u, quad),
        L2=lambda u: slow_var_L2(family, u, quad),
        p=lambda u: p_function(family, u, quad),
        family=family,
    )


def covariance(model: CovarianceModel, s, t):
    """``R(s, t)``; zero whenever ``min(s, t) = 0``.

    The pair is sorted before evaluation so the result is exactly symmetric.
    """
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(s_arr < 0) or np.any(t_arr < 0):
        raise ValueError("times must be nonnegative")
    lo = np.minimum(s_arr, t_arr)
    hi = np.maximum(s_arr, t_arr)
    pos = lo > 0
    safe = np.where(pos, lo, 1.0)
    lag = np.where(pos, (hi - lo) / safe, 0.0)
    out = np.where(pos, model.sigma2 * safe ** (2 * model.gamma) * model.l(lag), 0.0)
    return _scalar_out(lo, out)


def _rl_direct_scalar(s: float, t: float, H: float) -> float:
    lo, hi = min(s, t), max(s, t)
    if lo == 0.0:
        return 0.0
    a = H - 0.5
    g2 = special.gamma(H + 0.5) ** 2
    if lo == hi:
        return lo ** (2 * H) / (2 * H * g2)
    # QUADPACK's algebraic-weight rule carries the (lo - v)^a factor exactly
    val, _ = integrate.quad(
        lambda v: (hi - v) ** a, 0.0, lo, weight="alg", wvar=(0.0, a), epsabs=0.0, epsrel=1e-13, limit=200
    )
    return val / g2


_rl_direct = np.vectorize(_rl_direct_scalar, otypes=[float])


def direct_covariance(family: ProcessFamily, s, t):
    """The family's covariance from its own closed form, bypassing ``l``."""
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any(s_arr < 0) or np.any(t_arr < 0):
        raise ValueError("times must be nonnegative")
    H, K = family.H, family.K
    d = np.abs(s_arr - t_arr)
    if family.name == "sfbm":
        out = s_arr ** (2 * H) + t_arr ** (2 * H) - 0.5 * ((s_arr + t_arr) ** (2 * H) + d ** (2 * H))
    elif family.name == "bfbm":
        out = 2.0 ** (-K) * ((s_arr ** (2 * H) + t_arr ** (2 * H)) ** K - d ** (2 * H * K))
    elif family.name == "fbm":
        out = 0.5 * (s_arr ** (2 * H) + t_arr ** (2 * H) - d ** (2 * H))
    else:
        out = _rl_direct(s_arr, t_arr, H)
    out = np.where(np.minimum(s_arr, t_arr) == 0, 0.0, out)
    return _scalar_out(np.minimum(s_arr, t_arr), out)


# ---------------------------------------------------------------------------
# second differences of p

def second_diff(f: Callable, t, h):
    """``f(t + 2h) - 2 f(t + h) + f(t)``."""
    return f(t + 2 * h) - 2 * f(t + h) + f(t)


def second_diff_p_combination(
    family: ProcessFamily | CovarianceModel, k, u, quad: QuadratureSpec = DEFAULT_QUAD
):
    """The three-term second-difference combination of ``p`` bounded in the
    estimator's regularity condition, for integer ``k >= 2`` and ``u > 0``."""
    if isinstance(family, CovarianceModel):
        p, gamma = family.p, family.gamma
    else:
        p, gamma = (lambda x: p_function(family, x, quad)), family.gamma
    k = np.asarray(k)
    u = np.asarray(u, dtype=float)
    if np.any(k < 2) or np.any(k != np.round(k)):
        raise ValueError("k must be an integer >= 2")
    if np.any(u <= 0):
        raise ValueError("u must be positive")
    k = k.astype(float)
    w1 = u / (1 + u)
    w2 = u / (1 + 2 * u)
    out = (
        second_diff(p, k * u, u)
        - 2 * (1 + u) ** (2 * gamma) * second_diff(p, (k - 1) * w1, w1)
        + (1 + 2 * u) ** (2 * gamma) * second_diff(p, (k - 2) * w2, w2)
    )
    return _scalar_out(np.broadcast_to(k * u, np.broadcast(k, u).shape), out)
