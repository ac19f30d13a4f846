import math

import numpy as np
import pytest

from windcov.errors import DuplicateSites, MissingGridMetadata
from windcov.kernels import CovarianceModel, KernelFamily, covariance
from windcov.synthesis import (SiteSet, cholesky_with_jitter, covariance_matrix,
                               export_covariance_surface, sample_field, sample_fields)

from oracles import axis_gap, fit_centered_ellipse, level_set_points


def test_siteset_grid_and_duplicates():
    s = SiteSet.from_grid(3, 2, 0.5, (1.0, -1.0))
    np.testing.assert_array_equal(s.points[:4], [[1.0, -1.0], [1.5, -1.0], [2.0, -1.0], [1.0, -0.5]])
    with pytest.raises(DuplicateSites):
        SiteSet([[0, 0], [1, 1], [0, 1e-10]])
    with pytest.raises(ValueError):
        SiteSet([[0, 0], [1, 0]], grid=s.grid)


def test_covariance_matrix_small_cases():
    m = CovarianceModel("gaussian", 2.0, 1.0, 0.25, 3.0, 0.2)
    K1 = covariance_matrix(m, SiteSet([[0.3, 0.4]]))
    assert K1.shape == (1, 1) and K1[0, 0] == 2.25
    pts = [[0.0, 0.0], [1.2, -0.7]]
    K = covariance_matrix(m, SiteSet(pts))
    assert K[0, 1] == covariance(m, pts[0], pts[1])
    assert K[1, 0] == K[0, 1]
    np.testing.assert_array_equal(np.diag(K), [2.25, 2.25])


def test_covariance_matrix_demo_grid_factorizes():
    m = CovarianceModel("gaussian", 1.0, 1.0, 0.0, 4.5, math.pi / 12)
    K = covariance_matrix(m, SiteSet.from_grid(10, 10, 1.0))
    L, jitter = cholesky_with_jitter(K, m.sigma2)
    assert jitter <= 1e-8 * m.sigma2
    np.testing.assert_allclose(L @ L.T, K + jitter * np.eye(100), atol=1e-12)


@pytest.mark.parametrize("family", list(KernelFamily))
def test_psd_and_permutation(family):
    rng = np.random.default_rng(7)
    sites = SiteSet(rng.uniform(0, 10, size=(60, 2)))
    m = CovarianceModel(family, 1.5, 2.0, 0.0, 3.0, 1.1)
    K = covariance_matrix(m, sites)
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * m.sigma2
    perm = rng.permutation(60)
    np.testing.assert_array_equal(covariance_matrix(m, sites.permuted(perm)), K[np.ix_(perm, perm)])


def test_sample_determinism():
    m = CovarianceModel("exponential", 1.0, 2.0, 0.1, 2.0, 0.5)
    sites = SiteSet.from_grid(6, 5, 1.0)
    a = sample_field(m, sites, 42, mean=3.0)
    b = sample_field(m, sites, 42, mean=3.0)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, sample_field(m, sites, 43, mean=3.0).values)
    assert a.model_used == m and a.seed == 42


def test_nugget_dominant_sample_is_uncorrelated():
    m = CovarianceModel("gaussian", 1e-8, 1.0, 1.0, 1.0, 0.0)
    sites = SiteSet.from_grid(40, 40, 1.0)
    v = sample_field(m, sites, 0, mean=5.0).values.reshape(40, 40)
    r = np.corrcoef(v[:, :-1].ravel(), v[:, 1:].ravel())[0, 1]
    # 1560 pairs: standard error about 0.025
    assert abs(r) < 0.1
    assert v.mean() == pytest.approx(5.0, abs=0.1)


@pytest.mark.slow
def test_lag_one_correlation_along_wind():
    phi = 1.0
    m = CovarianceModel("gaussian", 1.0, phi, 0.0, 4.0, 0.0)
    sites = SiteSet.from_grid(30, 30, 1.0)
    est_x, est_y = [], []
    for s in sample_fields(m, sites, range(200)):
        v = s.values.reshape(30, 30)
        # known mean 0 and variance 1: E[X(s) X(s+h)] is the correlation
        est_x.append(np.mean(v[:, :-1] * v[:, 1:]))
        est_y.append(np.mean(v[:-1, :] * v[1:, :]))
    ex, ey = np.mean(est_x), np.mean(est_y)
    se_x = np.std(est_x, ddof=1) / math.sqrt(200)
    se_y = np.std(est_y, ddof=1) / math.sqrt(200)
    assert abs(ex - math.exp(-1 / (16 * phi))) < 5 * se_x
    assert abs(ey - math.exp(-1 / phi)) < 5 * se_y
    assert ex - ey > 10 * math.hypot(se_x, se_y)


def test_export_surface_basic():
    m = CovarianceModel("exponential", 1.5, 1.0, 0.2, 1.0, 0.0)
    grid = SiteSet.from_grid(21, 21, 0.2, (-2.0, -2.0))
    t = export_covariance_surface(m, grid)
    at0 = t[(t[:, 0] == 0) & (np.abs(t[:, 1]) < 1e-12)]
    assert at0.shape[0] == 1
    V = t[:, 2].reshape(21, 21)
    # isotropic: invariant under x <-> y and x -> -x
    np.testing.assert_allclose(V, V.T, rtol=1e-14)
    np.testing.assert_allclose(V, V[:, ::-1], rtol=1e-14)
    with pytest.raises(MissingGridMetadata):
        export_covariance_surface(m, SiteSet(grid.points))


def test_export_surface_origin_value():
    m = CovarianceModel("exponential", 1.5, 1.0, 0.2, 3.0, 0.1)
    t = export_covariance_surface(m, SiteSet.from_grid(5, 5, 1.0, (-2.0, -2.0)))
    assert t[12, 2] == 1.7


def test_export_surface_level_set_ellipse():
    m = CovarianceModel("exponential", 1.0, 1.0, 0.0, 3.0, math.pi / 12)
    t = export_covariance_surface(m, SiteSet.from_grid(201, 201, 0.04, (-4.0, -4.0)))
    (short, long_), _, ang_long = fit_centered_ellipse(level_set_points(t, math.exp(-1)))
    assert long_ / short == pytest.approx(3.0, abs=0.05)
    assert axis_gap(ang_long, math.pi / 12) < 0.02
