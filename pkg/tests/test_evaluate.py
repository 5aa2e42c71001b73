from types import SimpleNamespace

import numpy as np
import pytest
from scipy.special import expit

from gfzip.evaluate import (predictive_group_counts, ppl, ppl_components,
                            ppl_from_moments)
from gfzip.model import GroupedDataset, GroupingScheme, group_of
from gfzip.rng import RngStream

SCHEME = GroupingScheme((0, 1, 2, 3, 6, 11, 51))


def _draws(M, J, P, K, gen, beta_shift=0.0):
    beta = gen.normal(scale=0.5, size=(M, 2 * J, P))
    beta[:, :, 0] += beta_shift
    lam = gen.normal(scale=0.5, size=(M, 2 * J, K))
    return SimpleNamespace(beta=beta, lambda_=lam, u=None)


def _data(N, J, gen, scheme=SCHEME):
    x = np.column_stack([np.ones(N), gen.normal(size=N)])
    y = gen.integers(0, scheme.G, size=(N, J))
    return GroupedDataset(y=y, x=x, scheme=scheme)


def test_all_structural_zeros_fill_group_zero():
    gen = np.random.default_rng(1)
    N, J, M = 25, 3, 4
    data = _data(N, J, gen)
    d = _draws(M, J, 2, 0, gen)
    d.beta[:, :J, 0] = -800.0          # pi underflows to exactly 0
    d.beta[:, :J, 1] = 0.0
    pred = predictive_group_counts(d, data, rng=3)
    assert np.all(pred.counts[:, :, 0] == N)
    assert np.all(pred.counts[:, :, 1:] == 0)
    np.testing.assert_array_equal(pred.V, 0.0)


def test_group_counts_partition_individuals():
    gen = np.random.default_rng(2)
    N, J, M, K = 40, 4, 6, 2
    data = _data(N, J, gen)
    d = _draws(M, J, 2, K, gen, beta_shift=1.0)
    d.u = gen.normal(size=(M, N, K))
    pred = predictive_group_counts(d, data, rng=0)
    assert pred.counts.shape == (M, J, SCHEME.G)
    np.testing.assert_array_equal(pred.counts.sum(axis=2), N)
    np.testing.assert_allclose(pred.E.sum(axis=1), N)
    assert np.all((pred.E >= 0) & (pred.E <= N))
    assert np.all(pred.V >= 0)


def test_hand_rolled_replicate_matches():
    gen = np.random.default_rng(3)
    N, J, M, K = 5, 2, 3, 1
    data = _data(N, J, gen)
    d = _draws(M, J, 2, K, gen, beta_shift=1.5)
    d.u = gen.normal(size=(M, N, K))
    pred = predictive_group_counts(d, data, rng=RngStream(11, ("ppl",)))

    stream = RngStream(11, ("ppl",)).generator
    expected = np.zeros((M, J, SCHEME.G), dtype=np.int64)
    for m in range(M):
        lin = data.x @ d.beta[m].T + d.u[m] @ d.lambda_[m].T
        pi, mu = expit(lin[:, :J]), np.exp(lin[:, J:])
        z = stream.random((N, J)) < pi
        y = np.where(z, stream.poisson(mu), 0)
        g = group_of(y, SCHEME)
        for j in range(J):
            for i in range(N):
                expected[m, j, g[i, j]] += 1
    np.testing.assert_array_equal(pred.counts, expected)
    np.testing.assert_allclose(pred.E, expected.mean(axis=0), rtol=0, atol=1e-12)
    np.testing.assert_allclose(pred.V, expected.var(axis=0), rtol=0, atol=1e-12)


def test_ppl_arithmetic():
    c = np.array([[3, 1, 1]])
    E = np.array([[2.0, 2.0, 1.0]])
    V = np.array([[0.5, 0.25, 0.25]])
    total, var_term, fit_term = ppl_from_moments(c, E, V, N=5)
    assert var_term == pytest.approx(1.0 / 5)
    assert fit_term == pytest.approx(2.0 / 6)
    assert total == pytest.approx(1.0 / 5 + 2.0 / 6)
    N = 7
    c = np.array([[N, 0], [0, N]])
    E = c.astype(float)
    E[0, 1] += N + 1
    assert ppl_from_moments(c, E, np.zeros(c.shape), N)[0] == N + 1


def test_ppl_zero_for_degenerate_exact_predictive():
    gen = np.random.default_rng(4)
    N, J = 30, 3
    x = np.column_stack([np.ones(N), gen.normal(size=N)])
    y = np.zeros((N, J), dtype=np.int64)
    data = GroupedDataset(y=y, x=x, scheme=SCHEME)
    d = _draws(5, J, 2, 0, gen)
    d.beta[:, :J, 0] = -800.0
    d.beta[:, :J, 1] = 0.0
    total, var_term, fit_term = ppl_components(d, data, rng=0)
    assert total == 0.0 and var_term == 0.0 and fit_term == 0.0


def test_ppl_is_nonnegative_and_seeded():
    gen = np.random.default_rng(5)
    N, J, M, K = 50, 3, 8, 1
    data = _data(N, J, gen)
    d = _draws(M, J, 2, K, gen)
    d.u = gen.normal(size=(M, N, K))
    a = ppl(d, data, rng=9)
    assert a >= 0
    assert ppl(d, data, rng=9) == a


def test_draw_order_invariance():
    gen = np.random.default_rng(6)
    N, J, M = 60, 3, 200
    data = _data(N, J, gen)
    d = _draws(M, J, 2, 0, gen, beta_shift=1.0)
    perm = gen.permutation(M)
    d2 = SimpleNamespace(beta=d.beta[perm], lambda_=d.lambda_[perm], u=None)
    p1 = predictive_group_counts(d, data, rng=0)
    p2 = predictive_group_counts(d2, data, rng=0)
    # Different pairing of random numbers with draws; moments agree up to
    # Monte Carlo error.
    se = np.sqrt((p1.V + p2.V) / M) + 1e-12
    assert np.all(np.abs(p1.E - p2.E) <= 5 * se + 1e-9)
    # A fixed set of replicated tables is order-free in its moments.
    c = p1.counts[perm]
    np.testing.assert_allclose(c.mean(axis=0), p1.E, atol=1e-12)
    np.testing.assert_allclose(c.var(axis=0), p1.V, atol=1e-12)


def test_marginal_u_and_missing_factors():
    gen = np.random.default_rng(7)
    N, J, M, K = 20, 2, 3, 1
    data = _data(N, J, gen)
    d = _draws(M, J, 2, K, gen)
    with pytest.raises(ValueError):
        predictive_group_counts(d, data, rng=0)
    pred = predictive_group_counts(d, data, rng=0, marginal_u=True)
    np.testing.assert_array_equal(pred.counts.sum(axis=2), N)


def test_max_draws_subsamples():
    gen = np.random.default_rng(8)
    data = _data(10, 2, gen)
    d = _draws(50, 2, 2, 0, gen)
    pred = predictive_group_counts(d, data, rng=0, max_draws=7)
    assert pred.counts.shape[0] == 7
