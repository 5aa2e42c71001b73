"""Gibbs sampler for the expanded (working-parameter) GFZIP model.

One sweep updates, in order: latent counts y*, at-risk indicators z, the
Polya-Gamma variables (omega1, omega2), the (beta_1j, lambda*_1j) blocks, the
(beta_2j, lambda*_2j) blocks, the factors u* and the expansion scales phi.
All step functions update ``state`` in place and return the updated piece.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .distributions import (JITTER, DegenerateSupportError, sample_inv_gamma,
                            sample_pg, sample_trunc_nb)
from .model import ChainState, GroupedDataset, ModelConfig, nb_log_pmf, softplus
from .rng import as_stream

__all__ = [
    "ChainError",
    "RawDraws",
    "Diagnostics",
    "init_state",
    "step_latent_counts",
    "step_z",
    "step_omega",
    "step_block_h1",
    "step_block_h2",
    "step_u",
    "step_phi",
    "sweep",
    "run_chain",
]

log = logging.getLogger(__name__)


class ChainError(RuntimeError):
    """A Gibbs step failed; carries the iteration and step name."""

    def __init__(self, iteration, step, cause):
        super().__init__(f"iteration {iteration}, step {step}: {cause}")
        self.iteration = iteration
        self.step = step


def _config(config: ModelConfig, data: GroupedDataset) -> ModelConfig:
    return config if config.prior_b0 is not None else config.resolved(data.P)


def _cells(data: GroupedDataset):
    """Per-dataset constants: interval endpoints and the singleton mask."""
    cache = getattr(data, "_gibbs_cells", None)
    if cache is None:
        lo, hi = data.lower, data.upper
        cache = {
            "lo": lo,
            "hi": hi,
            "singleton": (hi >= 0) & (hi - lo == 1),
            "positive": data.y > 0,
            "zero": data.y == 0,
        }
        data._gibbs_cells = cache
    return cache


def _prior_blocks(config: ModelConfig):
    """Prior precision and precision-times-mean of the joint (beta, lambda*) block."""
    P, K = config.prior_b0.size, config.K
    prec = np.zeros((P + K, P + K))
    prec[:P, :P] = np.linalg.inv(config.prior_B0)
    prec[P:, P:] = np.eye(K)
    rhs = np.zeros(P + K)
    rhs[:P] = prec[:P, :P] @ config.prior_b0
    return prec, rhs


def _batched_gaussian(prec, rhs, rng, what):
    """Draw N(prec^{-1} rhs, prec^{-1}) for a stack of precision matrices."""
    n, d = rhs.shape
    try:
        L = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        L = np.empty_like(prec)
        for b in range(n):
            try:
                L[b] = np.linalg.cholesky(prec[b])
            except np.linalg.LinAlgError:
                log.warning("%s block %d not positive definite; adding %.0e*I",
                            what, b, JITTER)
                try:
                    L[b] = np.linalg.cholesky(prec[b] + JITTER * np.eye(d))
                except np.linalg.LinAlgError as exc:
                    raise np.linalg.LinAlgError(
                        f"{what} block {b}: precision not positive definite") from exc
    v = np.linalg.solve(L, rhs[..., None])
    v += rng.standard_normal((n, d, 1))
    return np.linalg.solve(np.swapaxes(L, -1, -2), v)[..., 0]


def _xtilde(data, state):
    return np.hstack([data.x, state.u_star]) if state.K else data.x


def init_state(data: GroupedDataset, config: ModelConfig, rng) -> ChainState:
    """Starting values: beta = 0, small random loadings, phi = 1, midpoint counts."""
    rng = as_stream(rng)
    cfg = _config(config, data)
    N, J, P, K = data.N, data.J, data.P, cfg.K
    cells = _cells(data)
    beta = np.zeros((2 * J, P))
    lambda_star = 0.1 * rng.standard_normal((2 * J, K))
    u_star = rng.standard_normal((N, K))
    phi = np.ones(K)
    z = np.where(cells["positive"], 1, (rng.random((N, J)) < 0.5).astype(np.int64))
    lo, hi = cells["lo"], cells["hi"]
    mid = np.where(hi < 0, lo, lo + (hi - 1 - lo) // 2)
    y_star = np.where(z == 1, mid, 0).astype(np.int64)
    state = ChainState(beta=beta, lambda_star=lambda_star, u_star=u_star, phi=phi,
                       z=z, y_star=y_star, omega1=np.ones((N, J)),
                       omega2=np.ones((N, J)))
    step_omega(state, data, cfg, rng)
    return state


def step_latent_counts(state, data, config, rng, eta=None):
    """y*_ij ~ NB(r, psi_ij) truncated to the observed group when z_ij = 1, else 0."""
    rng = as_stream(rng)
    cfg = _config(config, data)
    cells = _cells(data)
    _, eta2 = state.eta(data.x) if eta is None else eta
    at_risk = state.z == 1
    y_star = np.where(at_risk, cells["lo"], 0)
    draw = at_risk & ~cells["singleton"]
    if draw.any():
        idx = np.flatnonzero(draw)
        psi = eta2.ravel()[idx] - math.log(cfg.r)
        lo = cells["lo"].ravel()[idx]
        hi = cells["hi"].ravel()[idx]
        try:
            y_star.ravel()[idx] = sample_trunc_nb(cfg.r, psi, lo, hi, rng)
        except DegenerateSupportError as exc:
            i, j = np.unravel_index(idx[exc.index], y_star.shape)
            raise DegenerateSupportError(
                f"cell (i={i}, j={j}, g={data.y[i, j]}): {exc}", exc.index) from exc
    state.y_star = y_star
    return y_star


def z_conditional_prob(eta1, psi, r, zero_top: int = 1):
    """Pr(z = 1 | y in group 0) with y* integrated over the zero group [0, zero_top).

    For the usual zero group {0} this is Pr(z = 1 | y* = 0) =
    pi v^r / (1 - pi (1 - v^r)), v = 1/(1 + e^psi), evaluated as
    expit(eta1 - r * softplus(psi)).
    """
    psi = np.asarray(psi, dtype=float)
    if zero_top == 1:
        log_mass = -r * softplus(psi)
    else:
        y = np.arange(zero_top).reshape((-1,) + (1,) * psi.ndim)
        log_mass = logsumexp(nb_log_pmf(y, r, psi[None]), axis=0)
    return expit(np.asarray(eta1) + log_mass)


def step_z(state, data, config, rng, eta=None):
    """Redraw z on zero-group cells; cells with y > 0 are at risk by construction.

    When the zero group holds more than the count 0, (z, y*) is drawn jointly:
    z with y* integrated out, then y* | z = 1 on the zero group.
    """
    rng = as_stream(rng)
    cfg = _config(config, data)
    cells = _cells(data)
    eta1, eta2 = state.eta(data.x) if eta is None else eta
    zero = cells["zero"]
    top = data.scheme.thresholds[1]
    psi = eta2[zero] - math.log(cfg.r)
    p = z_conditional_prob(eta1[zero], psi, cfg.r, top)
    z = np.ones_like(state.z)
    z[zero] = rng.random(p.shape) < p
    state.z = z
    if top > 1:
        y_star = state.y_star.copy()
        zz = z[zero] == 1
        vals = np.zeros(p.shape, dtype=np.int64)
        if zz.any():
            vals[zz] = sample_trunc_nb(cfg.r, psi[zz], 0, top, rng)
        y_star[zero] = vals
        state.y_star = y_star
    return state.z


def step_omega(state, data, config, rng, eta=None):
    """omega1 ~ PG(1, eta1) everywhere; omega2 ~ PG(r + y*, psi) where z = 1."""
    rng = as_stream(rng)
    cfg = _config(config, data)
    eta1, eta2 = state.eta(data.x) if eta is None else eta
    state.omega1 = sample_pg(1.0, eta1, rng, b_exact=cfg.pg_exact_max)
    at_risk = state.z == 1
    if at_risk.any():
        b = cfg.r + state.y_star[at_risk]
        c = eta2[at_risk] - math.log(cfg.r)
        state.omega2[at_risk] = sample_pg(b, c, rng, b_exact=cfg.pg_exact_max)
    return state.omega1, state.omega2


def block_h1_moments(state, data, config):
    """Stacked precision (J x d x d) and linear term (J x d) of the at-risk blocks."""
    cfg = _config(config, data)
    xt = _xtilde(data, state)
    prior_prec, prior_rhs = _prior_blocks(cfg)
    prec = (xt.T[None, :, :] * state.omega1.T[:, None, :]) @ xt + prior_prec
    rhs = (state.z - 0.5).T @ xt + prior_rhs
    return prec, rhs


def block_h2_moments(state, data, config):
    """Count-part blocks: sums restricted to at-risk cells."""
    cfg = _config(config, data)
    xt = _xtilde(data, state)
    prior_prec, prior_rhs = _prior_blocks(cfg)
    at_risk = state.z == 1
    w = np.where(at_risk, state.omega2, 0.0)
    kappa = np.where(at_risk, 0.5 * (state.y_star - cfg.r) + w * math.log(cfg.r), 0.0)
    prec = (xt.T[None, :, :] * w.T[:, None, :]) @ xt + prior_prec
    rhs = kappa.T @ xt + prior_rhs
    return prec, rhs


def _store_block(state, theta, rows, P):
    state.beta[rows] = theta[:, :P]
    if state.K:
        state.lambda_star[rows] = theta[:, P:]


def step_block_h1(state, data, config, rng):
    rng = as_stream(rng)
    prec, rhs = block_h1_moments(state, data, config)
    theta = _batched_gaussian(prec, rhs, rng, "at-risk coefficient")
    _store_block(state, theta, slice(0, data.J), data.P)
    return theta


def step_block_h2(state, data, config, rng):
    rng = as_stream(rng)
    prec, rhs = block_h2_moments(state, data, config)
    theta = _batched_gaussian(prec, rhs, rng, "count coefficient")
    _store_block(state, theta, slice(data.J, 2 * data.J), data.P)
    return theta


def u_moments(state, data, config):
    """Precision (N x K x K) and linear term (N x K) of the factor conditionals."""
    cfg = _config(config, data)
    J = data.J
    lam1, lam2 = state.lambda_star[:J], state.lambda_star[J:]
    at_risk = state.z == 1
    w1 = state.omega1
    w2 = np.where(at_risk, state.omega2, 0.0)
    lin = data.x @ state.beta.T
    log_r = math.log(cfg.r)
    r1 = (state.z - 0.5) - w1 * lin[:, :J]
    r2 = np.where(at_risk, 0.5 * (state.y_star - cfg.r) - w2 * (lin[:, J:] - log_r), 0.0)
    rhs = r1 @ lam1 + r2 @ lam2
    prec = (np.einsum("nj,jk,jl->nkl", w1, lam1, lam1)
            + np.einsum("nj,jk,jl->nkl", w2, lam2, lam2))
    prec += np.diag(1.0 / state.phi)[None]
    return prec, rhs


def step_u(state, data, config, rng):
    if state.K == 0:
        return state.u_star
    rng = as_stream(rng)
    prec, rhs = u_moments(state, data, config)
    if state.K == 1:
        p = prec[:, 0, 0]
        u = rhs[:, 0] / p + rng.standard_normal(p.size) / np.sqrt(p)
        state.u_star = u[:, None]
    else:
        state.u_star = _batched_gaussian(prec, rhs, rng, "factor")
    return state.u_star


def step_phi(state, config, rng):
    """phi_k ~ IG(a_k + N/2, b_k + sum_i u*_ik^2 / 2)."""
    if state.K == 0:
        return state.phi
    rng = as_stream(rng)
    N = state.u_star.shape[0]
    K = state.K
    a = np.full(K, 2.0) if config.prior_a is None else np.asarray(config.prior_a, float)
    b = np.full(K, 2.0) if config.prior_b is None else np.asarray(config.prior_b, float)
    state.phi = np.atleast_1d(sample_inv_gamma(a + 0.5 * N,
                                               b + 0.5 * (state.u_star ** 2).sum(axis=0), rng))
    return state.phi


STEP_NAMES = ("y_star", "z", "omega", "block_h1", "block_h2", "u", "phi")


def sweep(state, data, config, rng, iteration=None):
    """One full Gibbs sweep in the fixed order; wraps failures in :class:`ChainError`."""
    cfg = _config(config, data)
    eta = state.eta(data.x)
    steps = (
        ("y_star", lambda: step_latent_counts(state, data, cfg, rng, eta)),
        ("z", lambda: step_z(state, data, cfg, rng, eta)),
        ("omega", lambda: step_omega(state, data, cfg, rng, eta)),
        ("block_h1", lambda: step_block_h1(state, data, cfg, rng)),
        ("block_h2", lambda: step_block_h2(state, data, cfg, rng)),
        ("u", lambda: step_u(state, data, cfg, rng)),
        ("phi", lambda: step_phi(state, cfg, rng)),
    )
    for name, fn in steps:
        try:
            fn()
        except Exception as exc:
            raise ChainError(iteration, name, exc) from exc
    return state


class _Welford:
    def __init__(self):
        self.n = 0
        self.mean = None
        self.m2 = None

    def push(self, x):
        x = np.asarray(x, dtype=float)
        self.n += 1
        if self.mean is None:
            self.mean = x.copy()
            self.m2 = np.zeros_like(x)
            return
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    @property
    def var(self):
        if self.n < 2:
            return np.zeros_like(self.mean)
        return self.m2 / (self.n - 1)


@dataclass
class Diagnostics:
    sweep_seconds: np.ndarray
    running_mean: dict = field(default_factory=dict)
    running_var: dict = field(default_factory=dict)

    @property
    def total_seconds(self) -> float:
        return float(self.sweep_seconds.sum())


@dataclass
class RawDraws:
    """Retained working-parameter draws (row = retained iteration)."""

    beta: np.ndarray          # M x 2J x P
    lambda_star: np.ndarray   # M x 2J x K
    phi: np.ndarray           # M x K
    u_star: np.ndarray | None  # M x N x K
    z: np.ndarray | None      # M x N x J (int8)
    z_sum: np.ndarray         # N x J
    n_draws: int

    @property
    def pi_hat(self) -> np.ndarray:
        """Posterior mean of z_ij (the at-risk probability estimate)."""
        return self.z_sum / self.n_draws

    @property
    def K(self) -> int:
        return self.lambda_star.shape[2]


def run_chain(data: GroupedDataset, config: ModelConfig, rng=None, progress=None):
    """Run ``n_iter`` sweeps and keep every ``thin``-th post-burn-in state.

    Returns ``(RawDraws, Diagnostics)``.  ``rng`` defaults to a stream seeded
    from ``config.seed``.
    """
    cfg = config.resolved(data.P)
    rng = as_stream(cfg.seed if rng is None else rng)
    N, J, P, K = data.N, data.J, data.P, cfg.K
    M = cfg.n_keep
    beta = np.empty((M, 2 * J, P))
    lam = np.empty((M, 2 * J, K))
    phi = np.empty((M, K))
    u = np.empty((M, N, K)) if cfg.store_u else None
    zs = np.empty((M, N, J), dtype=np.int8) if cfg.store_z else None
    z_sum = np.zeros((N, J))
    times = np.empty(cfg.n_iter)
    stats = {"beta": _Welford(), "lambda_star": _Welford(), "phi": _Welford()}

    state = init_state(data, cfg, rng)
    m = 0
    for t in range(cfg.n_iter):
        t0 = time.perf_counter()
        sweep(state, data, cfg, rng, iteration=t)
        times[t] = time.perf_counter() - t0
        if t >= cfg.n_burnin and (t - cfg.n_burnin) % cfg.thin == cfg.thin - 1:
            beta[m] = state.beta
            lam[m] = state.lambda_star
            phi[m] = state.phi
            if u is not None:
                u[m] = state.u_star
            if zs is not None:
                zs[m] = state.z
            z_sum += state.z
            stats["beta"].push(state.beta)
            stats["lambda_star"].push(state.lambda_star)
            stats["phi"].push(state.phi)
            m += 1
        if progress is not None:
            progress(t, state)
    assert m == M
    diag = Diagnostics(
        sweep_seconds=times,
        running_mean={k: v.mean for k, v in stats.items()},
        running_var={k: v.var for k, v in stats.items()},
    )
    raw = RawDraws(beta=beta, lambda_star=lam, phi=phi, u_star=u, z=zs,
                   z_sum=z_sum, n_draws=M)
    return raw, diag
