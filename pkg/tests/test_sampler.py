import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssgauss.kernels import ProcessFamily, covariance, covariance_model
from ssgauss.sampler import (
    GridSample,
    NotPSDError,
    ObservationGrid,
    cholesky_psd,
    fbm_cov_second_diff,
    generator,
    gram_matrix,
    sample_path,
    sample_paths,
    second_differences,
)


def test_grid_times():
    g = ObservationGrid(2.0, 4)
    np.testing.assert_array_equal(g.times, [2.0, 2.5, 3.0, 3.5, 4.0])
    assert len(g) == 5


@pytest.mark.parametrize("T, n", [(0.0, 10), (-1.0, 10), (1.0, 3), (1.0, 10.5), (float("inf"), 10)])
def test_grid_validation(T, n):
    with pytest.raises(ValueError):
        ObservationGrid(T, n)


def test_gram_matrix_entries_and_symmetry():
    fam = ProcessFamily.sfbm(0.4)
    m = covariance_model(fam)
    g = ObservationGrid(1.0, 37)
    M = gram_matrix(m, g)
    assert np.array_equal(M, M.T)
    t = g.times
    for i, j in [(0, 0), (3, 17), (36, 2), (37, 37)]:
        assert M[i, j] == covariance(m, t[i], t[j])


def test_gram_matrix_batches_agree(monkeypatch):
    import ssgauss.sampler as sm

    m = covariance_model(ProcessFamily.fbm(0.3))
    g = ObservationGrid(1.0, 50)
    full = gram_matrix(m, g)
    monkeypatch.setattr(sm, "_GRAM_BATCH", 7)
    assert np.array_equal(gram_matrix(m, g), full)


def test_cholesky_reconstructs():
    m = covariance_model(ProcessFamily.bfbm(0.6, 0.8))
    M = gram_matrix(m, ObservationGrid(1.0, 64))
    f = cholesky_psd(M)
    assert f.jitter == 0.0
    np.testing.assert_allclose(f.lower @ f.lower.T, M, atol=1e-13)
    assert np.all(np.triu(f.lower, 1) == 0)


def test_cholesky_uses_jitter_for_singular_psd():
    v = np.array([1.0, 2.0, 3.0])
    M = np.outer(v, v)
    f = cholesky_psd(M)
    assert f.jitter > 0
    np.testing.assert_allclose(f.lower @ f.lower.T, M, atol=1e-6)


def test_cholesky_not_psd_reports_minor():
    M = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(NotPSDError) as exc:
        cholesky_psd(M)
    assert exc.value.minor_index == 2
    assert exc.value.ladder[0] == 0.0


def test_cholesky_rejects_asymmetric():
    with pytest.raises(ValueError):
        cholesky_psd(np.array([[1.0, 0.1], [0.0, 1.0]]))


def test_generator_streams_reproducible_and_distinct():
    a = generator(5, 3).standard_normal(4)
    b = generator(5, 3).standard_normal(4)
    c = generator(5, 4).standard_normal(4)
    d = generator(6, 3).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)
    with pytest.raises(ValueError):
        generator(-1)


def test_paths_independent_of_batching():
    m = covariance_model(ProcessFamily.fbm(0.5))
    g = ObservationGrid(1.0, 32)
    f = cholesky_psd(gram_matrix(m, g))
    together = sample_paths(f, 9, [0, 1, 2, 3])
    for r in range(4):
        np.testing.assert_allclose(sample_paths(f, 9, [r])[0], together[r], rtol=1e-13, atol=1e-15)
    np.testing.assert_array_equal(sample_paths(f, 9, [0, 1, 2, 3]), together)


def test_empirical_covariance():
    # sample covariance of many paths approaches the Gram matrix
    m = covariance_model(ProcessFamily.sfbm(0.7))
    g = ObservationGrid(1.0, 8)
    M = gram_matrix(m, g)
    X = sample_paths(cholesky_psd(M), 1, np.arange(40000))
    C = np.cov(X, rowvar=False)
    # 4 standard errors of a covariance estimate, sqrt((M_ij^2 + M_ii M_jj) / N)
    se = np.sqrt((M**2 + np.outer(np.diag(M), np.diag(M))) / X.shape[0])
    assert np.all(np.abs(C - M) < 4 * se + 1e-12)


@pytest.mark.parametrize("x", [0.2, 0.5, 0.8])
def test_second_difference_covariance_matches_gram(x):
    # stencil applied to the fBm Gram matrix on unit steps
    n = 12
    t = np.arange(1.0, n + 2)
    S, T = np.meshgrid(t, t, indexing="ij")
    G = 0.5 * (S ** (2 * x) + T ** (2 * x) - np.abs(S - T) ** (2 * x))
    D = np.zeros((n - 1, n + 1))
    for k in range(n - 1):
        D[k, k : k + 3] = [1.0, -2.0, 1.0]
    C = D @ G @ D.T
    for lag in range(4):
        np.testing.assert_allclose(np.diag(C, lag), fbm_cov_second_diff(x, lag), rtol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=40))
def test_second_differences_linear_in_input(xs):
    x = np.array(xs)
    lin = 3.0 + 2.0 * np.arange(x.size)
    np.testing.assert_allclose(second_differences(x + lin), second_differences(x), atol=1e-6)


def test_csv_and_json_round_trip_exact():
    fam = ProcessFamily.rl(0.3)
    g = ObservationGrid(1.5, 40)
    f = cholesky_psd(gram_matrix(covariance_model(fam), g))
    s = sample_path(f, g, seed=4, replication=2, family=fam)
    back = GridSample.from_csv(s.to_csv())
    assert np.array_equal(back.values, s.values)
    assert back.grid == g
    js = GridSample.from_json(s.to_json())
    assert np.array_equal(js.values, s.values) and js.family == fam and js.replication == 2


@pytest.mark.parametrize(
    "text",
    ["a,b,c\n0,1,2\n", "k,t,x\n1,1,0\n", "k,t,x\n0,1,0\n1,1.1,0\n2,1.5,0\n3,1.6,0\n4,2,0\n"],
)
def test_csv_rejects_malformed(text):
    with pytest.raises(ValueError):
        GridSample.from_csv(text)


def test_sample_shape_checked():
    with pytest.raises(ValueError):
        GridSample(ObservationGrid(1.0, 4), np.zeros(4))
