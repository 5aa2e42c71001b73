import logging
import math

import numpy as np
import pytest
from scipy import stats

from gfzip.distributions import (DegenerateSupportError, pg_moments, sample_inv_gamma,
                                 sample_mvn, sample_pg, sample_trunc_nb)
from gfzip.rng import RngStream, as_stream
from oracles import pg_series_moments, se_mean, se_var, truncated_nb, tv_empirical

B_GRID = (1, 2, 17, 1050)
C_GRID = (0.0, 0.5, 3.0, -3.0)


# ---- Polya-Gamma moments (oracle: convolution series, not the closed forms)

@pytest.mark.parametrize("b", [1.0, 2.0, 17.0, 1050.0, 0.3, 4.5])
@pytest.mark.parametrize("c", [0.0, 0.5, 3.0, -3.0, 12.0])
def test_pg_moments_match_series(b, c):
    m, v = pg_moments(b, c)
    ms, vs = pg_series_moments(b, c)
    assert m == pytest.approx(ms, rel=1e-9)
    assert v == pytest.approx(vs, rel=1e-8)


def test_pg_moments_limits():
    assert pg_moments(1, 0) == pytest.approx((0.25, 1 / 24), abs=1e-15)
    assert pg_moments(2, 0) == pytest.approx((0.5, 2 / 24), abs=1e-15)
    m0, v0 = pg_moments(1, 0.0)
    m, v = pg_moments(1, 1e-8)
    assert abs(m - m0) < 1e-10 and abs(v - v0) < 1e-10
    # continuity across the series/closed-form switch
    lo, hi = pg_moments(1, 0.1 - 1e-9), pg_moments(1, 0.1 + 1e-9)
    assert lo == pytest.approx(hi, rel=1e-7)


def test_pg_rejects_bad_shape():
    with pytest.raises(ValueError):
        pg_moments(0, 1.0)
    with pytest.raises(ValueError):
        sample_pg(-1.0, 1.0, 0)


@pytest.mark.parametrize("b", B_GRID)
@pytest.mark.parametrize("c", C_GRID)
def test_pg_sample_moments_grid(backend, b, c):
    x = sample_pg(float(b), c, RngStream(11, (b, int(10 * c) % 97)), size=100_000)
    m, v = pg_series_moments(b, c)
    assert abs(x.mean() - m) < 5 * se_mean(x)
    assert abs(x.var() - v) < 5 * se_var(x)
    assert np.all(x > 0)


@pytest.mark.parametrize("b, c, mean", [(1, 0, 0.25), (1, 2, 0.25 * math.tanh(1.0)),
                                        (1050, 3, 1050 / 6 * math.tanh(1.5))])
def test_pg_sample_mean_examples(b, c, mean):
    x = sample_pg(float(b), c, 5, size=100_000)
    assert abs(x.mean() - mean) < 4 * se_mean(x)


def test_pg_fractional_shape(backend):
    x = sample_pg(2.5, 1.5, 3, size=100_000)
    m, v = pg_series_moments(2.5, 1.5)
    assert abs(x.mean() - m) < 5 * se_mean(x)
    assert abs(x.var() - v) < 5 * se_var(x)


@pytest.mark.parametrize("b", [1.0, 3.0, 1050.0])
def test_pg_symmetry(backend, b):
    a = sample_pg(b, 2.0, 21, size=10_000)
    z = sample_pg(b, -2.0, 22, size=10_000)
    assert stats.ks_2samp(a, z).pvalue > 0.001


def test_pg_broadcast_and_scalar():
    out = sample_pg(np.array([1.0, 2.0, 1003.0]), np.array([0.0, 1.0, -5.8]), 0)
    assert out.shape == (3,)
    assert isinstance(sample_pg(1.0, 0.0, 0), float)
    assert sample_pg(1.0, np.zeros((4, 2)), 0).shape == (4, 2)


def test_pg_large_b_count_part():
    # the count-part shape r + y* and tilt psi seen inside the sampler
    x = sample_pg(1003.0, -5.8, 8, size=100_000)
    m, v = pg_series_moments(1003.0, -5.8)
    assert abs(x.mean() - m) < 5 * se_mean(x)
    assert abs(x.var() - v) < 5 * se_var(x)


def test_pg_determinism(backend):
    a = sample_pg(np.full(500, 1.0), np.linspace(-4, 4, 500), RngStream(3))
    b = sample_pg(np.full(500, 1.0), np.linspace(-4, 4, 500), RngStream(3))
    np.testing.assert_array_equal(a, b)


# ---- truncated negative binomial

R = 1000.0


def test_trunc_nb_singleton():
    out = sample_trunc_nb(R, np.full(100, 0.3), 0, 1, 0)
    assert np.all(out == 0)
    out = sample_trunc_nb(R, np.full(100, -6.0), 1, 2, 0)
    assert np.all(out == 1)


def test_trunc_nb_finite_interval_tv(backend):
    psi = math.log(3 / R)
    draws = sample_trunc_nb(R, np.full(100_000, psi), 3, 6, RngStream(4))
    support, pmf = truncated_nb(R, psi, 3, 6)
    assert draws.min() >= 3 and draws.max() < 6
    assert tv_empirical(draws, support, pmf) < 0.01


@pytest.mark.parametrize("r, psi, lo, hi", [(1000.0, math.log(20 / 1000), 11, 51),
                                            (2.0, 0.5, 0, 9), (0.5, -0.2, 2, 5)])
def test_trunc_nb_other_intervals(backend, r, psi, lo, hi):
    draws = sample_trunc_nb(r, np.full(100_000, psi), lo, hi, RngStream(5))
    support, pmf = truncated_nb(r, psi, lo, hi)
    assert tv_empirical(draws, support, pmf) < 0.01


@pytest.mark.parametrize("r, mu", [(1000.0, 2.0), (1000.0, 60.0), (0.7, 3.0)])
def test_trunc_nb_open_interval(backend, r, mu):
    psi = math.log(mu / r)
    draws = sample_trunc_nb(r, np.full(50_000, psi), 51, math.inf, RngStream(6))
    assert draws.min() >= 51
    support, pmf = truncated_nb(r, psi, 51, math.inf, ymax=20_000)
    mean = (support * pmf).sum()
    assert abs(draws.mean() - mean) < 4 * se_mean(draws.astype(float))


def test_trunc_nb_open_interval_negative_hi_encoding():
    a = sample_trunc_nb(R, np.full(50, -6.0), 51, math.inf, RngStream(9))
    b = sample_trunc_nb(R, np.full(50, -6.0), 51, -1, RngStream(9))
    np.testing.assert_array_equal(a, b)


def test_trunc_nb_errors():
    with pytest.raises(ValueError):
        sample_trunc_nb(R, 0.0, 3, 3, 0)
    with pytest.raises(ValueError):
        sample_trunc_nb(R, 0.0, -1, 3, 0)
    with pytest.raises(ValueError):
        sample_trunc_nb(0.0, 0.0, 0, 3, 0)
    with pytest.raises(DegenerateSupportError) as err:
        sample_trunc_nb(R, np.array([0.0, -np.inf]), np.array([0, 3]), np.array([2, 9]), 0)
    assert err.value.index == 1


def test_trunc_nb_never_leaves_interval(backend):
    gen = np.random.default_rng(1)
    lo = gen.integers(0, 40, 5000)
    width = gen.integers(1, 30, 5000)
    psi = gen.normal(-6.5, 2.0, 5000)
    out = sample_trunc_nb(R, psi, lo, lo + width, RngStream(2))
    assert np.all((out >= lo) & (out < lo + width))


def test_trunc_nb_determinism(backend):
    psi = np.linspace(-9, -4, 300)
    a = sample_trunc_nb(R, psi, 3, math.inf, RngStream(7))
    b = sample_trunc_nb(R, psi, 3, math.inf, RngStream(7))
    np.testing.assert_array_equal(a, b)


# ---- multivariate normal

def test_mvn_standard_normal():
    x = sample_mvn([0.0], [[1.0]], 1, size=100_000)[:, 0]
    assert stats.kstest(x, "norm").pvalue > 0.01


@pytest.mark.parametrize("precision", [False, True])
def test_mvn_covariance(precision):
    gen = np.random.default_rng(0)
    A = gen.normal(size=(3, 3))
    S = A @ A.T + 0.5 * np.eye(3)
    mean = np.array([1.0, -2.0, 0.5])
    mat = np.linalg.inv(S) if precision else S
    x = sample_mvn(mean, mat, 2, precision=precision, size=100_000)
    emp = np.cov(x.T)
    assert np.linalg.norm(emp - S) / np.linalg.norm(S) < 0.05
    assert np.all(np.abs(x.mean(axis=0) - mean) < 5 * np.sqrt(np.diag(S) / x.shape[0]))


def test_mvn_jitter_logged(caplog):
    S = np.array([[1.0, 1.0], [1.0, 1.0]])
    with caplog.at_level(logging.WARNING):
        x = sample_mvn([0.0, 0.0], S, 0, label="block j=3")
    assert "block j=3" in caplog.text
    assert np.all(np.isfinite(x))


def test_mvn_failure_names_block():
    with pytest.raises(np.linalg.LinAlgError, match="block j=7"):
        sample_mvn([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]], 0, label="block j=7")
    with pytest.raises(ValueError):
        sample_mvn([0.0], np.eye(2), 0)


# ---- inverse gamma

def test_inv_gamma_mean():
    x = sample_inv_gamma(3.0, 2.0, 4, size=100_000)
    assert abs(x.mean() - 1.0) < 4 * se_mean(x)
    assert np.all(x > 0)
    assert isinstance(sample_inv_gamma(3.0, 2.0, 4), float)


def test_inv_gamma_prior_reduction():
    # IG(a + N/2, b + S/2) with N = 0 and S = 0 is the prior itself
    a, b = 2.0, 2.0
    x = sample_inv_gamma(a + 0 / 2, b + 0.0, RngStream(1), size=10)
    y = sample_inv_gamma(a, b, RngStream(1), size=10)
    np.testing.assert_array_equal(x, y)


def test_inv_gamma_errors():
    with pytest.raises(ValueError):
        sample_inv_gamma(0.0, 1.0, 0)
    with pytest.raises(ValueError):
        sample_inv_gamma(1.0, -1.0, 0)


# ---- streams

def test_stream_keys():
    a = RngStream(5).substream(3, "chain").random(4)
    b = RngStream(5, (3, "chain")).random(4)
    np.testing.assert_array_equal(a, b)
    c = RngStream(5).substream(3, "data").random(4)
    assert not np.array_equal(a, c)
    assert as_stream(None).seed == 0
    s = RngStream(1)
    assert as_stream(s) is s
    with pytest.raises(ValueError):
        RngStream(1, (-2,))
