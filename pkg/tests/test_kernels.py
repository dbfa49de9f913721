import math

import mpmath as mp

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ALL_FAMILIES, mp_covariance, mp_l
from ssgauss.kernels import (
    ProcessFamily,
    covariance,
    covariance_model,
    direct_covariance,
    l_function,
    p_function,
    second_diff_p_combination,
    slow_var_L2,
    slow_var_L2_limit,
)

lags = st.floats(min_value=1e-8, max_value=1e3, allow_nan=False)


# -- family parsing ---------------------------------------------------------

@pytest.mark.parametrize(
    "text, fam",
    [
        ("sfbm:H=0.6", ProcessFamily.sfbm(0.6)),
        ("bfbm:H=0.6,K=0.8", ProcessFamily.bfbm(0.6, 0.8)),
        ("rl:H=0.3", ProcessFamily.rl(0.3)),
        (" FBM : H=0.5 ", ProcessFamily.fbm(0.5)),
    ],
)
def test_parse(text, fam):
    assert ProcessFamily.parse(text) == fam
    assert ProcessFamily.parse(fam.spec()) == fam


@pytest.mark.parametrize(
    "text",
    ["sfbm:H=2", "sfbm:H=0", "bfbm:H=0.5", "bfbm:H=0.5,K=1.5", "fbm:H=0.5,K=1", "foo:H=0.5",
     "sfbm", "sfbm:H=abc", "sfbm:H=0.3,H=0.4", "rl:X=0.3"],
)
def test_parse_rejects(text):
    with pytest.raises(ValueError):
        ProcessFamily.parse(text)


def test_indices():
    f = ProcessFamily.bfbm(0.6, 0.5)
    assert f.kappa == f.gamma == pytest.approx(0.3)
    assert ProcessFamily.sfbm(0.5).sigma2 == pytest.approx(1.0)
    # RL at H = 1/2 is Brownian motion
    assert ProcessFamily.rl(0.5).sigma2 == pytest.approx(1.0)


# -- l, L^2 and p against high-precision closed forms -------------------------

@pytest.mark.parametrize("fam", ALL_FAMILIES, ids=str)
@pytest.mark.parametrize("u", [0.0, 1e-7, 1e-3, 0.2, 1.0, 4.0, 50.0])
def test_l_matches_mpmath(fam, u):
    got = l_function(fam, u)
    assert got == pytest.approx(mp_l(fam, u), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("fam", ALL_FAMILIES, ids=str)
@settings(max_examples=40, deadline=None)
@given(u=lags)
def test_p_identity(fam, u):
    # p = 1 + (1 + u)^(2 gamma) - 2 l, checked where both sides are O(1)
    p = p_function(fam, u)
    rhs = 1 + (1 + u) ** (2 * fam.gamma) - 2 * l_function(fam, u)
    assert p == pytest.approx(rhs, abs=1e-12 * max(1.0, (1 + u) ** (2 * fam.gamma)))


@pytest.mark.parametrize("fam", ALL_FAMILIES, ids=str)
def test_p_small_lag_is_variogram(fam):
    # at tiny lags p must equal the normalised increment variance, not a rounding residue
    u = 1e-6
    exact = (mp_covariance_var_increment(fam, u))
    assert p_function(fam, u) == pytest.approx(exact, rel=1e-8)


def mp_covariance_var_increment(fam, u):
    import mpmath as mp

    mp.mp.dps = 40
    s, t = mp.mpf(1), 1 + mp.mpf(u)
    if fam.name == "rl":
        H = mp.mpf(fam.H)
        a = H - mp.mpf(1) / 2
        # E(X_t - X_1)^2 for the RL integral representation
        g2 = mp.gamma(H + mp.mpf(1) / 2) ** 2
        inner = mp.quad(lambda v: ((t - v) ** a - (s - v) ** a) ** 2, [0, s])
        tail = (t - s) ** (2 * H) / (2 * H)
        val = (inner + tail) / g2
    else:
        R = lambda x, y: mp.mpf(mp_covariance(fam, x, y)) if False else _mp_R(fam, x, y)  # noqa: E731
        val = R(t, t) + R(s, s) - 2 * R(s, t)
    mp.mp.dps = 30
    return float(val / fam.sigma2)


def _mp_R(fam, s, t):
    import mpmath as mp

    H, K = mp.mpf(fam.H), mp.mpf(fam.K)
    d = abs(s - t)
    if fam.name == "fbm":
        return (s ** (2 * H) + t ** (2 * H) - d ** (2 * H)) / 2
    if fam.name == "sfbm":
        return s ** (2 * H) + t ** (2 * H) - ((s + t) ** (2 * H) + d ** (2 * H)) / 2
    return mp.mpf(2) ** (-K) * ((s ** (2 * H) + t ** (2 * H)) ** K - d ** (2 * H * K))


@pytest.mark.parametrize(
    "fam, limit",
    [
        (ProcessFamily.sfbm(0.3), 2 / (4 - 4**0.3)),
        (ProcessFamily.sfbm(0.7), 2 / (4 - 4**0.7)),
        (ProcessFamily.bfbm(0.6, 0.8), 2 ** (1 - 0.8)),
        (ProcessFamily.bfbm(0.3, 0.5), 2 ** 0.5),
        (ProcessFamily.fbm(0.4), 1.0),
        (ProcessFamily.rl(0.5), 1.0),
    ],
    ids=str,
)
def test_L2_limits(fam, limit):
    assert slow_var_L2_limit(fam) == pytest.approx(limit, rel=1e-12)
    assert slow_var_L2(fam, 1e-7) == pytest.approx(limit, rel=1e-3)


@pytest.mark.parametrize("H", [0.2, 0.5, 0.8])
def test_fbm_L_is_one(H):
    u = np.logspace(-8, 3, 30)
    np.testing.assert_allclose(slow_var_L2(ProcessFamily.fbm(H), u), 1.0, rtol=1e-13)


def test_rl_half_is_brownian():
    fam = ProcessFamily.rl(0.5)
    u = np.logspace(-6, 2, 20)
    np.testing.assert_allclose(slow_var_L2(fam, u), 1.0, rtol=1e-10)
    np.testing.assert_allclose(l_function(fam, u), 1.0, rtol=1e-12)


@pytest.mark.parametrize("H", [0.05, 0.3, 0.7, 0.95])
def test_rl_L2_positive_and_finite(H):
    vals = slow_var_L2(ProcessFamily.rl(H), np.logspace(-8, 4, 40))
    assert np.all(np.isfinite(vals)) and np.all(vals > 0)


# -- covariance ---------------------------------------------------------------

@pytest.mark.parametrize("fam", ALL_FAMILIES, ids=str)
@settings(max_examples=25, deadline=None)
@given(
    s=st.floats(min_value=0.05, max_value=20),
    t=st.floats(min_value=0.05, max_value=20),
)
def test_covariance_symmetric_and_matches_direct(fam, s, t):
    m = covariance_model(fam)
    a, b = covariance(m, s, t), covariance(m, t, s)
    assert a == b
    assert a == pytest.approx(direct_covariance(fam, s, t), rel=1e-10, abs=1e-13)


@pytest.mark.parametrize("fam", ALL_FAMILIES, ids=str)
def test_covariance_mpmath_spot(fam):
    m = covariance_model(fam)
    for s, t in [(0.3, 0.3), (1.0, 2.5), (7.0, 0.4)]:
        assert covariance(m, s, t) == pytest.approx(mp_covariance(fam, s, t), rel=1e-10)


@pytest.mark.parametrize("fam", ALL_FAMILIES, ids=str)
def test_covariance_zero_at_origin(fam):
    m = covariance_model(fam)
    assert covariance(m, 0.0, 2.0) == 0.0
    assert direct_covariance(fam, 3.0, 0.0) == 0.0


@pytest.mark.parametrize("fam", ALL_FAMILIES, ids=str)
@settings(max_examples=15, deadline=None)
@given(a=st.floats(0.1, 5.0), s=st.floats(0.1, 5.0), t=st.floats(0.1, 5.0))
def test_self_similarity(fam, a, s, t):
    m = covariance_model(fam)
    lhs = covariance(m, a * s, a * t)
    rhs = a ** (2 * fam.gamma) * covariance(m, s, t)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-14)


@pytest.mark.parametrize("fam", ALL_FAMILIES, ids=str)
def test_variogram_matches_covariance(fam):
    m = covariance_model(fam)
    s, t = 1.3, 2.1
    expect = covariance(m, s, s) + covariance(m, t, t) - 2 * covariance(m, s, t)
    assert m.variogram(s, t) == pytest.approx(expect, rel=1e-10)
    assert m.variogram(0.0, t) == pytest.approx(covariance(m, t, t), rel=1e-14)


def test_negative_times_rejected():
    m = covariance_model(ProcessFamily.fbm(0.5))
    with pytest.raises(ValueError):
        covariance(m, -1.0, 1.0)


# -- (L3) combination -----------------------------------------------------------

def test_combination_zero_for_linear_p():
    # sfBm with H = 1/2 has p(u) = u
    comb = second_diff_p_combination(ProcessFamily.sfbm(0.5), np.arange(2, 40), 1e-2)
    assert np.max(np.abs(comb)) < 1e-14


def test_combination_fbm_closed_form():
    # with p(u) = u^(2H) and gamma = H each term is a pure-power second difference
    H, u = 0.3, 0.01
    k = np.arange(2, 20)
    e = 2 * H
    sd = lambda x, h: (x + 2 * h) ** e - 2 * (x + h) ** e + x**e  # noqa: E731
    w1, w2 = u / (1 + u), u / (1 + 2 * u)
    expect = sd(k * u, u) - 2 * (1 + u) ** e * sd((k - 1) * w1, w1) + (1 + 2 * u) ** e * sd((k - 2) * w2, w2)
    got = second_diff_p_combination(ProcessFamily.fbm(H), k, u)
    np.testing.assert_allclose(got, expect, rtol=1e-12, atol=1e-15)


def test_combination_rejects_bad_k():
    with pytest.raises(ValueError):
        second_diff_p_combination(ProcessFamily.fbm(0.3), 1, 0.1)


def _mp_L2_closed(fam, u):
    # enough digits to resolve the second-order cancellation at lag u
    with mp.workdps(int(40 + 2.2 * abs(math.log10(u)))):
        u = mp.mpf(u)
        H, K = mp.mpf(fam.H), mp.mpf(fam.K)
        if fam.name == "sfbm":
            l = (1 + (1 + u) ** (2 * H) - ((2 + u) ** (2 * H) + u ** (2 * H)) / 2) / (2 - mp.mpf(2) ** (2 * H - 1))
        else:
            l = mp.mpf(2) ** (-K) * ((1 + (1 + u) ** (2 * H)) ** K - u ** (2 * H * K))
        p = 1 + (1 + u) ** (2 * H * K) - 2 * l
        return float(p / u ** (2 * H * K))


@pytest.mark.parametrize(
    "fam",
    [ProcessFamily.sfbm(0.1), ProcessFamily.sfbm(0.6), ProcessFamily.sfbm(0.95),
     ProcessFamily.bfbm(0.3, 0.2), ProcessFamily.bfbm(0.6, 0.5), ProcessFamily.bfbm(0.95, 0.9)],
    ids=str,
)
@pytest.mark.parametrize("u", [1e-300, 1e-60, 1e-20, 1e-8, 1e-3, 0.0499, 0.0501, 0.3, 2.0, 50.0])
def test_L2_relative_accuracy_all_lags(fam, u):
    assert slow_var_L2(fam, u) == pytest.approx(_mp_L2_closed(fam, u), rel=1e-13)


@pytest.mark.parametrize("H", [0.6, 0.95])
def test_rl_L2_extreme_small_lags(H):
    # below 1e-50 the tail integral is replaced by its leading term; the
    # correction c u^(2 - 2H) must scale continuously across the switch
    fam = ProcessFamily.rl(H)
    u = np.array([1e-300, 1e-52, 1e-48])
    d = slow_var_L2(fam, u) - slow_var_L2_limit(fam)
    assert np.all(np.isfinite(d))
    if H > 0.9:
        assert d[2] / d[1] == pytest.approx(1e4 ** (2 - 2 * H), rel=1e-3)
    assert abs(d[0]) <= 1e-12
