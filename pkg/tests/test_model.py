import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gfzip.model import (ChainState, GroupedDataset, GroupingScheme, ModelConfig,
                         at_risk_prob, group_interval, group_of, linear_predictor,
                         nb_log_pmf, poisson_mean)

S1 = GroupingScheme.setting(1)
S2 = GroupingScheme.setting(2)


# ---- grouping

def test_setting_schemes():
    assert str(S1) == "0,1,2,3,6,11,51"
    assert S1.G == 7
    # 11 singletons {0}..{10} and seven intervals up to the open [51, inf)
    assert S2.G == 18
    assert group_of(12, S2) == 11


@pytest.mark.parametrize("y, g", [(4, 3), (0, 0), (51, 6), (50, 5), (5, 3), (6, 4)])
def test_group_of_setting1(y, g):
    assert group_of(y, S1) == g


@pytest.mark.parametrize("g, interval", [(3, (3, 6)), (0, (0, 1)), (6, (51, math.inf))])
def test_group_interval_setting1(g, interval):
    assert group_interval(g, S1) == interval


def test_group_interval_out_of_range():
    with pytest.raises(ValueError):
        group_interval(7, S1)
    with pytest.raises(ValueError):
        group_interval(-1, S1)


@pytest.mark.parametrize("bad", [(1, 2), (0,), (0, 2, 2), (0, 3, 1)])
def test_invalid_schemes(bad):
    with pytest.raises(ValueError):
        GroupingScheme(bad)


def test_parse_roundtrip_and_errors():
    assert GroupingScheme.parse(" 0, 1,2,3,6,11,51") == S1
    assert GroupingScheme.parse(str(S2)) == S2
    with pytest.raises(ValueError):
        GroupingScheme.parse("0,a,3")


def test_group_of_rejects_negative():
    with pytest.raises(ValueError):
        group_of(-1, S1)


@st.composite
def schemes(draw):
    gaps = draw(st.lists(st.integers(1, 40), min_size=1, max_size=12))
    return GroupingScheme(tuple(np.concatenate([[0], np.cumsum(gaps)]).tolist()))


@settings(max_examples=60, deadline=None)
@given(schemes(), st.lists(st.integers(0, 10_000), min_size=1, max_size=50))
def test_group_roundtrip(scheme, ys):
    g = group_of(np.array(ys), scheme)
    for y, gi in zip(ys, g):
        lo, hi = group_interval(int(gi), scheme)
        assert lo <= y < hi
    # every group's lower endpoint maps back to that group
    for k in range(scheme.G):
        assert group_of(group_interval(k, scheme)[0], scheme) == k


# ---- links

def test_linear_predictor_examples():
    assert linear_predictor([1, 0], [0.5, 0.5], [0], [0]) == pytest.approx(0.5)
    assert linear_predictor([1, 1], [0.5, 0.5]) == pytest.approx(1.0)
    assert linear_predictor([1, 2], [-0.5, -1], [1], [0.8]) == pytest.approx(-1.7)
    with pytest.raises(ValueError):
        linear_predictor([1, 2], [0.5])
    with pytest.raises(ValueError):
        linear_predictor([1, 2], [0.5, 1], [1, 2], [0.3])


def test_at_risk_prob():
    assert at_risk_prob(0.0) == 0.5
    assert abs(at_risk_prob(40.0) - 1.0) < 1e-15
    assert at_risk_prob(math.log(3)) == pytest.approx(0.75, abs=1e-15)
    with np.errstate(over="raise"):
        assert at_risk_prob(-800.0) >= 0.0
        assert at_risk_prob(800.0) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(-700, 700))
def test_at_risk_prob_symmetry(eta):
    assert abs(at_risk_prob(eta) + at_risk_prob(-eta) - 1.0) < 1e-12


def test_at_risk_prob_increasing():
    eta = np.linspace(-30, 30, 2001)
    p = at_risk_prob(eta)
    assert np.all(np.diff(p) >= 0)
    assert np.all((p > 0) & (p < 1))


def test_poisson_mean():
    assert poisson_mean(0.0) == 1.0
    assert poisson_mean(math.log(5)) == pytest.approx(5.0)
    assert poisson_mean(-0.5) == pytest.approx(math.exp(-0.5))


# ---- negative binomial marginal

def test_nb_log_pmf_zero():
    r, psi = 7.5, 0.3
    assert nb_log_pmf(0, r, psi) == pytest.approx(-r * math.log1p(math.exp(psi)))


def test_nb_log_pmf_hand_value():
    assert math.exp(nb_log_pmf(1, 2.0, 0.0)) == pytest.approx(0.25)


@pytest.mark.parametrize("r, psi", [(1000.0, math.log(5 / 1000)), (2.5, 0.7), (0.4, -1.0)])
def test_nb_log_pmf_matches_scipy(r, psi):
    # NB(y; r, psi) = nbinom(n=r, p=1/(1+e^psi))
    y = np.arange(0, 80)
    ref = stats.nbinom.logpmf(y, r, 1.0 / (1.0 + math.exp(psi)))
    np.testing.assert_allclose(nb_log_pmf(y, r, psi), ref, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("r, psi", [(1000.0, math.log(3e-3)), (3.0, 1.2), (50.0, -2.0)])
def test_nb_pmf_sums_to_one(r, psi):
    cutoff = int(stats.nbinom.isf(1e-10, r, 1.0 / (1.0 + math.exp(psi)))) + 1
    y = np.arange(cutoff + 1)
    assert abs(np.exp(nb_log_pmf(y, r, psi)).sum() - 1.0) < 1e-8


def _tv_nb_poisson(r, eta, ymax=200):
    y = np.arange(ymax + 1)
    nb = np.exp(nb_log_pmf(y, r, eta - math.log(r)))
    return 0.5 * np.abs(nb - stats.poisson.pmf(y, math.exp(eta))).sum()


@pytest.mark.parametrize("eta", [0.0, math.log(3), math.log(5), math.log(10)])
def test_nb_approximation_fidelity(eta):
    assert _tv_nb_poisson(1000.0, eta) < 5e-3


@pytest.mark.parametrize("eta", [0.0, math.log(3), math.log(10)])
def test_nb_approximation_improves_with_r(eta):
    tv = [_tv_nb_poisson(r, eta) for r in (1e2, 1e3, 1e4)]
    assert tv[0] > tv[1] > tv[2]


# ---- dataset / config / state

def _data(N=5, J=2):
    y = np.zeros((N, J), dtype=int)
    y[0, 0] = 3
    return GroupedDataset(y=y, x=np.ones((N, 1)), scheme=S1)


def test_dataset_validation():
    d = _data()
    assert (d.N, d.J, d.P) == (5, 2, 1)
    assert d.labels == ["y1", "y2"]
    counts = d.group_counts()
    assert counts.shape == (2, 7)
    assert counts.sum(axis=1).tolist() == [5, 5]
    with pytest.raises(ValueError):
        GroupedDataset(y=np.full((2, 1), 7), x=np.ones((2, 1)), scheme=S1)
    with pytest.raises(ValueError):
        GroupedDataset(y=np.zeros((2, 1)), x=np.ones((3, 1)), scheme=S1)
    with pytest.raises(ValueError):
        GroupedDataset(y=np.zeros((2, 1)), x=np.array([[1.0], [np.nan]]), scheme=S1)
    with pytest.raises(ValueError):
        GroupedDataset(y=np.array([[0.5], [0]]), x=np.ones((2, 1)), scheme=S1)


def test_config_defaults_and_validation():
    cfg = ModelConfig(K=2).resolved(3)
    np.testing.assert_array_equal(cfg.prior_B0, 100 * np.eye(3))
    np.testing.assert_array_equal(cfg.prior_b0, np.zeros(3))
    np.testing.assert_array_equal(cfg.prior_a, [2.0, 2.0])
    assert cfg.n_keep == 5000
    for bad in (dict(r=0), dict(n_burnin=6000), dict(prior_a=[0.0]),
                dict(prior_B0=[[1.0, 2.0], [0.0, 1.0]]), dict(n_iter=10, n_burnin=5, thin=2),
                dict(prior_B0=-np.eye(2))):
        with pytest.raises(ValueError):
            ModelConfig(K=1, **bad).resolved(2)


def test_chain_state_check():
    d = _data()
    N, J = d.N, d.J
    s = ChainState(beta=np.zeros((2 * J, 1)), lambda_star=np.zeros((2 * J, 0)),
                   u_star=np.zeros((N, 0)), phi=np.ones(0), z=np.ones((N, J), int),
                   y_star=np.where(d.y > 0, 4, 0), omega1=np.ones((N, J)),
                   omega2=np.ones((N, J)))
    s.check(d)
    bad = s.copy()
    bad.z[0, 0] = 0
    with pytest.raises(AssertionError):
        bad.check(d)
    bad = s.copy()
    bad.y_star[0, 0] = 6
    with pytest.raises(AssertionError):
        bad.check(d)
