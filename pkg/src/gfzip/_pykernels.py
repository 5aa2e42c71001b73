"""Pure-numpy fallback for the compiled kernels in ``_kernels.pyx``.

Same algorithms, vectorised over the batch: rejection loops run on the
shrinking set of still-unaccepted entries.  Draw sequences differ from the
compiled path (uniforms are consumed in a different order) but the
distributions are identical.
"""
from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr

TRUNC = 0.64
SERIES_TERMS = 200
TAIL_EPS = 1e-12


def _softplus(x):
    return np.logaddexp(0.0, x)


def _pg_coef(n, x):
    k = (n + 0.5) * np.pi
    out = np.zeros_like(x)
    big = x > TRUNC
    out[big] = k * np.exp(-0.5 * k * k * x[big])
    small = (~big) & (x > 0)
    xs = x[small]
    out[small] = np.exp(-1.5 * (np.log(0.5 * np.pi) + np.log(xs)) + np.log(k)
                        - 2.0 * (n + 0.5) ** 2 / xs)
    return out


def _mass_texpon(z):
    t = TRUNC
    fz = 0.125 * np.pi ** 2 + 0.5 * z * z
    b = np.sqrt(1.0 / t) * (t * z - 1.0)
    a = -np.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = np.log(fz) + fz * t
    xb = x0 - z + log_ndtr(b)
    xa = x0 + z + log_ndtr(a)
    return 1.0 / (1.0 + 4.0 / np.pi * (np.exp(xb) + np.exp(xa)))


def _rtigauss(z, gen):
    t = TRUNC
    z = np.abs(z)
    x = np.full(z.shape, t + 1.0)
    low = z < 1.0 / t
    # mean above the truncation point: proposals from the truncated 1/chi^2
    idx = np.flatnonzero(low)
    while idx.size:
        e1 = gen.standard_exponential(idx.size)
        e2 = gen.standard_exponential(idx.size)
        bad = e1 * e1 > 2.0 * e2 / t
        while bad.any():
            nb = int(bad.sum())
            e1[bad] = gen.standard_exponential(nb)
            e2[bad] = gen.standard_exponential(nb)
            bad = e1 * e1 > 2.0 * e2 / t
        xi = 1.0 + e1 * t
        xi = t / (xi * xi)
        accept = gen.random(idx.size) <= np.exp(-0.5 * z[idx] ** 2 * xi)
        x[idx[accept]] = xi[accept]
        idx = idx[~accept]
    # mean below the truncation point: inverse-Gaussian proposals
    idx = np.flatnonzero(~low)
    while idx.size:
        mu = 1.0 / z[idx]
        y = gen.standard_normal(idx.size) ** 2
        mu_y = mu * y
        xi = mu + 0.5 * mu * mu_y - 0.5 * mu * np.sqrt(4.0 * mu_y + mu_y * mu_y)
        flip = gen.random(idx.size) > mu / (mu + xi)
        xi[flip] = mu[flip] ** 2 / xi[flip]
        ok = xi <= t
        x[idx[ok]] = xi[ok]
        idx = idx[~ok]
    return x


def _pg1(c, gen):
    """Exact PG(1, c) draws for an array of tilts."""
    z = 0.5 * np.abs(np.asarray(c, dtype=float))
    out = np.empty_like(z)
    idx = np.arange(z.size)
    while idx.size:
        zi = z[idx]
        fz = 0.125 * np.pi ** 2 + 0.5 * zi * zi
        use_exp = gen.random(idx.size) < _mass_texpon(zi)
        x = np.empty(idx.size)
        x[use_exp] = TRUNC + gen.standard_exponential(int(use_exp.sum())) / fz[use_exp]
        if (~use_exp).any():
            x[~use_exp] = _rtigauss(zi[~use_exp], gen)
        s = _pg_coef(0, x)
        y = gen.random(idx.size) * s
        decided = np.zeros(idx.size, dtype=bool)
        accepted = np.zeros(idx.size, dtype=bool)
        n = 0
        while not decided.all():
            n += 1
            live = ~decided
            if n % 2 == 1:
                s[live] -= _pg_coef(n, x[live])
                hit = live & (y <= s)
                accepted |= hit
                decided |= hit
            else:
                s[live] += _pg_coef(n, x[live])
                decided |= live & (y > s)
        out[idx[accepted]] = 0.25 * x[accepted]
        idx = idx[~accepted]
    return out


def pg_mean(b, c):
    b = np.asarray(b, dtype=float)
    h = 0.5 * np.abs(np.asarray(c, dtype=float))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(h < 1e-4, 1.0 - h * h / 3.0 + 2.0 * h ** 4 / 15.0,
                         np.tanh(h) / np.where(h == 0, 1.0, h))
    return 0.25 * b * ratio


def pg_var(b, c):
    b = np.asarray(b, dtype=float)
    a = np.abs(np.asarray(c, dtype=float))
    a2 = a * a
    series = ((1.0 / 6.0 + a2 / 120.0 + a2 * a2 / 5040.0 + a2 ** 3 / 362880.0)
              / np.cosh(0.5 * np.minimum(a, 0.1)) ** 2)
    e = np.exp(-a)
    sech2 = 4.0 * e / (1.0 + e) ** 2
    safe = np.where(a < 0.1, 1.0, a)
    closed = (2.0 * np.tanh(0.5 * safe) - safe * sech2) / safe ** 3
    return 0.25 * b * np.where(a < 0.1, series, closed)


def _pg_series(b, c, gen):
    c2 = (np.asarray(c) / (2.0 * np.pi)) ** 2
    k = np.arange(1, SERIES_TERMS + 1)
    d = (k - 0.5) ** 2 + c2[:, None]
    g = gen.standard_gamma(np.broadcast_to(b[:, None], d.shape))
    acc = (g / d).sum(axis=1) / (2.0 * np.pi ** 2)
    mean_trunc = b * (1.0 / d).sum(axis=1) / (2.0 * np.pi ** 2)
    return acc + (pg_mean(b, c) - mean_trunc)


def _pg_gauss(b, c, gen):
    m = pg_mean(b, c)
    sd = np.sqrt(pg_var(b, c))
    w = m + sd * gen.standard_normal(m.shape)
    bad = np.flatnonzero(w <= 0)
    while bad.size:
        w[bad] = m[bad] + sd[bad] * gen.standard_normal(bad.size)
        bad = bad[w[bad] <= 0]
    return w


def pg_draw(b, c, b_exact, bit_generator, out):
    gen = np.random.Generator(bit_generator)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    res = np.zeros(c.shape)
    gauss = b > b_exact
    if gauss.any():
        res[gauss] = _pg_gauss(b[gauss], c[gauss], gen)
    exact = np.flatnonzero(~gauss)
    if exact.size:
        n = np.floor(b[exact] + 1e-12).astype(np.int64)
        frac = b[exact] - n
        frac[frac < 1e-12] = 0.0
        for m in range(1, int(n.max(initial=0)) + 1):
            sel = exact[n >= m]
            res[sel] += _pg1(c[sel], gen)
        fr = frac > 0
        if fr.any():
            sel = exact[fr]
            res[sel] += _pg_series(frac[fr], c[sel], gen)
    out[:] = res


def pg_moments_c(b, c):
    return float(pg_mean(b, c)), float(pg_var(b, c))


def _interval_log_weights(r, logp, lo, width):
    """Log pmf (up to a per-row constant) on lo .. lo + width - 1."""
    steps = np.arange(width - 1)
    y = lo[:, None] + steps[None, :]
    inc = np.log((y + r) / (y + 1.0)) + logp[:, None]
    lw = np.zeros((lo.size, width))
    np.cumsum(inc, axis=1, out=lw[:, 1:])
    return lw


def _inverse_cdf(lw, valid, gen):
    lw = np.where(valid, lw, -np.inf)
    lw -= lw.max(axis=1, keepdims=True)
    w = np.exp(lw)
    cdf = np.cumsum(w, axis=1)
    u = gen.random(lw.shape[0]) * cdf[:, -1]
    k = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(k, valid.sum(axis=1) - 1)


def trunc_nb_draw(r, psi, lo, hi, bit_generator, out):
    gen = np.random.Generator(bit_generator)
    psi = np.asarray(psi, dtype=float)
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    logp = psi - _softplus(psi)
    res = lo.copy()
    bad = ~np.isfinite(logp) & ((hi < 0) | (hi - lo > 1))
    zero_mass = bad & (lo > 0)
    if zero_mass.any():
        return int(np.flatnonzero(zero_mass)[0])
    todo = ~bad & ~((hi >= 0) & (hi - lo == 1))

    finite = np.flatnonzero(todo & (hi >= 0))
    if finite.size:
        width = hi[finite] - lo[finite]
        W = int(width.max())
        lw = _interval_log_weights(r, logp[finite], lo[finite], W)
        valid = np.arange(W)[None, :] < width[:, None]
        res[finite] = lo[finite] + _inverse_cdf(lw, valid, gen)

    open_ = np.flatnonzero(todo & (hi < 0))
    if open_.size:
        p = np.exp(logp[open_])
        W = 64
        while True:
            lw = _interval_log_weights(r, logp[open_], lo[open_], W)
            lmax = lw.max(axis=1)
            ylast = lo[open_] + W - 1
            rho = np.exp(np.log((ylast + r) / (ylast + 1.0)) + logp[open_])
            if r < 1.0:
                rho = np.maximum(rho, p)
            total = np.exp(lw - lmax[:, None]).sum(axis=1)
            with np.errstate(divide="ignore"):
                tail = np.where(rho < 1.0,
                                np.exp(lw[:, -1] - lmax) * rho / (1.0 - rho), np.inf)
            if np.all(tail < TAIL_EPS * total):
                break
            W *= 2
        valid = np.ones(lw.shape, dtype=bool)
        res[open_] = lo[open_] + _inverse_cdf(lw, valid, gen)
    out[:] = res
    return -1


def nb_log_pmf_c(y, r, psi):
    from scipy.special import gammaln
    return float(gammaln(y + r) - gammaln(r) - gammaln(y + 1.0)
                 + y * psi - (y + r) * _softplus(psi))
