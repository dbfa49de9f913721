import json
import warnings

import numpy as np
import pytest

from ssgauss.harness import (
    ExperimentConfig,
    SuiteConfig,
    run_clt,
    run_condition_suite,
    run_consistency,
    run_ssl_suite,
    simulate_statistics,
)
from ssgauss.kernels import ProcessFamily

FBM = ProcessFamily.fbm(0.5)


@pytest.mark.parametrize(
    "kw",
    [
        {"replications": 0},
        {"replications": 49},
        {"n_list": (32,)},
        {"n_list": ()},
        {"alpha": 0.5},
        {"alpha": 0.0},
        {"T": 0.0},
        {"workers": 0},
        {"seed": -1},
        {"n_list": (8192,), "memory_budget_mb": 100},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ExperimentConfig(FBM, **kw)


def test_config_dict():
    d = ExperimentConfig(ProcessFamily.bfbm(0.6, 0.8), n_list=[64]).to_dict()
    assert d["family"] == "bfbm:H=0.6,K=0.8" and d["n_list"] == [64]


def test_statistics_worker_invariant():
    a = simulate_statistics(FBM, 1.0, 128, 60, seed=3, workers=1)
    b = simulate_statistics(FBM, 1.0, 128, 60, seed=3, workers=3)
    for x, y in zip(a[:3], b[:3]):
        assert np.array_equal(x, y)


def test_statistics_prefix_stable():
    # replication r does not depend on how many replications are run
    a = simulate_statistics(FBM, 1.0, 128, 50, seed=3)[0]
    b = simulate_statistics(FBM, 1.0, 128, 75, seed=3)[0]
    assert np.array_equal(a, b[:50])


def test_consistency_decreases_and_deterministic():
    cfg = ExperimentConfig(FBM, n_list=(64, 512, 4096), replications=50, seed=1)
    r1 = run_consistency(cfg)
    r2 = run_consistency(ExperimentConfig(FBM, n_list=(64, 512, 4096), replications=50, seed=1, workers=2))
    assert r1.passed
    assert r1.to_json() == r2.to_json()
    assert "wall_clock" not in r1.to_dict() and "wall_clock" in r1.to_dict(timing=True)
    errs = [row["mean_abs_error"] for row in r1.per_n]
    assert errs[-1] < errs[0]
    assert "passed" in r1.table()


def test_consistency_warns_beyond_three_quarters():
    cfg = ExperimentConfig(ProcessFamily.fbm(0.8), n_list=(64, 128), replications=50, seed=1)
    with pytest.warns(UserWarning, match="0.75"):
        run_consistency(cfg)


def test_consistency_rejects_above_09():
    with pytest.raises(ValueError):
        run_consistency(ExperimentConfig(ProcessFamily.fbm(0.95), n_list=(64,), replications=50))


def test_clt_rejects_kappa_075():
    with pytest.raises(ValueError, match="3/4"):
        run_clt(ExperimentConfig(ProcessFamily.fbm(0.8), n_list=(256,), replications=50))
    with pytest.raises(ValueError, match="3/4"):
        run_clt(ExperimentConfig(ProcessFamily.bfbm(0.9, 0.9), n_list=(256,), replications=50))


def test_clt_small_run_fields():
    cfg = ExperimentConfig(FBM, n_list=(512,), replications=60, seed=2, sigma_m=20_000)
    r = run_clt(cfg)
    row = r.per_n[0]
    assert row["replications"] == 60
    assert 0.0 <= row["coverage"] <= 1.0
    assert row["variance_ratio_R"] > 0
    assert set(row["checks"]) == {"variance_ratio", "centering", "coverage", "normality"}
    json.loads(r.to_json())


def test_suites():
    cfg = SuiteConfig(families=(ProcessFamily.sfbm(0.4), ProcessFamily.rl(0.3)))
    s = run_ssl_suite(cfg)
    c = run_condition_suite(cfg)
    assert s["passed"] and c["passed"]
    assert len(s["reports"]) == 2
    assert run_ssl_suite(SuiteConfig(families=cfg.families, workers=2)) == s


def test_suite_rejects_empty():
    with pytest.raises(ValueError):
        SuiteConfig(families=())
