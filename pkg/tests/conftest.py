import mpmath as mp
import numpy as np
import pytest

from ssgauss.kernels import ProcessFamily

mp.mp.dps = 30


def mp_covariance(family: ProcessFamily, s: float, t: float) -> float:
    """High-precision closed-form covariance, independent of the package."""
    s, t = mp.mpf(s), mp.mpf(t)
    H, K = mp.mpf(family.H), mp.mpf(family.K)
    d = abs(s - t)
    if family.name == "fbm":
        v = (s ** (2 * H) + t ** (2 * H) - d ** (2 * H)) / 2
    elif family.name == "sfbm":
        v = s ** (2 * H) + t ** (2 * H) - ((s + t) ** (2 * H) + d ** (2 * H)) / 2
    elif family.name == "bfbm":
        v = mp.mpf(2) ** (-K) * ((s ** (2 * H) + t ** (2 * H)) ** K - d ** (2 * H * K))
    else:
        lo, hi = min(s, t), max(s, t)
        a = H - mp.mpf(1) / 2
        v = mp.quad(lambda x: (hi - x) ** a * (lo - x) ** a, [0, lo]) / mp.gamma(H + mp.mpf(1) / 2) ** 2
    return float(v)


def mp_l(family: ProcessFamily, u: float) -> float:
    """``l(u) = R(1, 1 + u) / sigma^2``."""
    return mp_covariance(family, 1.0, 1.0 + u) / family.sigma2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ALL_FAMILIES = [
    ProcessFamily.fbm(0.3),
    ProcessFamily.fbm(0.7),
    ProcessFamily.sfbm(0.2),
    ProcessFamily.sfbm(0.6),
    ProcessFamily.bfbm(0.3, 0.5),
    ProcessFamily.bfbm(0.6, 0.8),
    ProcessFamily.rl(0.3),
    ProcessFamily.rl(0.7),
]


# -- acceptance summary lines ---------------------------------------------------

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
