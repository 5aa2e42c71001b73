"""Posterior predictive group counts and the posterior predictive loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import GroupedDataset, group_of
from .rng import as_stream

__all__ = ["PredictiveCounts", "predictive_group_counts", "ppl", "ppl_components",
           "ppl_from_moments"]


@dataclass
class PredictiveCounts:
    E: np.ndarray        # J x G
    V: np.ndarray        # J x G
    counts: np.ndarray   # M x J x G replicated group counts


def _draw_counts(beta, lam, u, x, scheme, rng):
    """Replicated c_jg for one parameter draw.

    Random numbers are consumed as: uniforms for z (N x J), then Poisson
    counts (N x J).
    """
    J = beta.shape[0] // 2
    lin = x @ beta.T
    if lam.shape[1]:
        lin = lin + u @ lam.T
    pi = expit(lin[:, :J])
    mu = np.exp(lin[:, J:])
    z = rng.random(pi.shape) < pi
    y_star = np.where(z, rng.generator.poisson(mu), 0)
    g = group_of(y_star, scheme)
    G = scheme.G
    flat = g + G * np.arange(J)[None, :]
    return np.bincount(flat.ravel(), minlength=J * G).reshape(J, G)


def predictive_group_counts(draws, data: GroupedDataset, config=None, rng=None,
                            marginal_u: bool = False, max_draws: int | None = None):
    """Across-draw mean and variance of replicated group counts.

    For each retained draw the at-risk indicators and counts of every
    individual are simulated from the zero-inflated Poisson given that draw's
    coefficients, loadings and (by default) that draw's factor scores.  With
    ``marginal_u=True`` fresh N(0, I) factors are drawn instead.

    ``max_draws`` evaluates an evenly spaced subset of the retained draws.
    """
    rng = as_stream(rng if rng is not None else getattr(config, "seed", 0))
    beta = np.asarray(draws.beta)
    lam = np.asarray(draws.lambda_)
    u = draws.u
    M = beta.shape[0]
    K = lam.shape[2]
    if K and not marginal_u and u is None:
        raise ValueError("factor draws were not stored; use marginal_u=True")
    idx = np.arange(M)
    if max_draws is not None and max_draws < M:
        idx = np.unique(np.linspace(0, M - 1, max_draws).round().astype(int))
    out = np.empty((idx.size, data.J, data.scheme.G), dtype=np.int64)
    for n, m in enumerate(idx):
        if K == 0:
            um = np.zeros((data.N, 0))
        elif marginal_u:
            um = rng.standard_normal((data.N, K))
        else:
            um = u[m]
        out[n] = _draw_counts(beta[m], lam[m], um, data.x, data.scheme, rng)
    return PredictiveCounts(E=out.mean(axis=0), V=out.var(axis=0), counts=out)


def ppl_from_moments(c, E, V, N: int):
    """(1/N) sum V + (1/(N+1)) sum (c - E)^2, returned with both terms."""
    c = np.asarray(c, dtype=float)
    E = np.asarray(E, dtype=float)
    V = np.asarray(V, dtype=float)
    var_term = V.sum() / N
    fit_term = ((c - E) ** 2).sum() / (N + 1)
    return float(var_term + fit_term), float(var_term), float(fit_term)


def ppl_components(draws, data, config=None, rng=None, **kwargs):
    pred = predictive_group_counts(draws, data, config, rng, **kwargs)
    return ppl_from_moments(data.group_counts(), pred.E, pred.V, data.N)


def ppl(draws, data, config=None, rng=None, **kwargs) -> float:
    """Posterior predictive loss of a fitted model on ``data``."""
    return ppl_components(draws, data, config, rng, **kwargs)[0]
