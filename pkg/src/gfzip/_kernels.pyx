# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sampling kernels.

Both kernels draw from the numpy ``bitgen_t`` behind the caller's Generator,
so they share one stream with the rest of the sampler.  The pure-numpy
mirror lives in ``_pykernels.py``.
"""
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport (M_PI, cosh, erfc, exp, fabs, floor, isfinite, lgamma,
                        log, log1p, sqrt, tanh)
from libc.stdint cimport int64_t
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (random_standard_exponential,
                                          random_standard_gamma,
                                          random_standard_normal,
                                          random_standard_uniform)

cdef double TRUNC = 0.64
cdef double TRUNC_RECIP = 1.0 / 0.64
cdef int SERIES_TERMS = 200
cdef double TAIL_EPS = 1e-12


cdef inline bitgen_t* _bitgen(object bit_generator) except NULL:
    return <bitgen_t*> PyCapsule_GetPointer(bit_generator.capsule, "BitGenerator")


cdef inline double _log_ndtr(double x) nogil:
    if x > -30.0:
        return log(0.5 * erfc(-x / sqrt(2.0)))
    # asymptotic expansion in the far left tail
    return -0.5 * x * x - log(-x) - 0.5 * log(2.0 * M_PI) + log1p(-1.0 / (x * x))


cdef inline double _softplus(double x) nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


# ---------------------------------------------------------------------------
# Polya-Gamma
# ---------------------------------------------------------------------------

cdef inline double _pg_coef(int n, double x) nogil:
    cdef double k = (n + 0.5) * M_PI
    if x > TRUNC:
        return k * exp(-0.5 * k * k * x)
    if x > 0:
        return exp(-1.5 * (log(0.5 * M_PI) + log(x)) + log(k)
                   - 2.0 * (n + 0.5) * (n + 0.5) / x)
    return 0.0


cdef inline double _mass_texpon(double z) nogil:
    cdef double t = TRUNC
    cdef double fz = 0.125 * M_PI * M_PI + 0.5 * z * z
    cdef double b = sqrt(1.0 / t) * (t * z - 1.0)
    cdef double a = -sqrt(1.0 / t) * (t * z + 1.0)
    cdef double x0 = log(fz) + fz * t
    cdef double xb = x0 - z + _log_ndtr(b)
    cdef double xa = x0 + z + _log_ndtr(a)
    return 1.0 / (1.0 + 4.0 / M_PI * (exp(xb) + exp(xa)))


cdef double _rtigauss(double z, bitgen_t* bg) nogil:
    """Inverse Gaussian(1/z, 1) truncated to (0, TRUNC)."""
    cdef double t = TRUNC
    cdef double x = t + 1.0
    cdef double alpha, e1, e2, mu, y, half_mu, mu_y
    z = fabs(z)
    if TRUNC_RECIP > z:
        alpha = 0.0
        while random_standard_uniform(bg) > alpha:
            e1 = random_standard_exponential(bg)
            e2 = random_standard_exponential(bg)
            while e1 * e1 > 2.0 * e2 / t:
                e1 = random_standard_exponential(bg)
                e2 = random_standard_exponential(bg)
            x = 1.0 + e1 * t
            x = t / (x * x)
            alpha = exp(-0.5 * z * z * x)
    else:
        mu = 1.0 / z
        while x > t:
            y = random_standard_normal(bg)
            y = y * y
            half_mu = 0.5 * mu
            mu_y = mu * y
            x = mu + half_mu * mu_y - half_mu * sqrt(4.0 * mu_y + mu_y * mu_y)
            if random_standard_uniform(bg) > mu / (mu + x):
                x = mu * mu / x
    return x


cdef double _pg1(double c, bitgen_t* bg) nogil:
    """Exact PG(1, c) draw by the alternating-series rejection sampler."""
    cdef double z = 0.5 * fabs(c)
    cdef double fz = 0.125 * M_PI * M_PI + 0.5 * z * z
    cdef double x, s, y
    cdef int n
    while True:
        if random_standard_uniform(bg) < _mass_texpon(z):
            x = TRUNC + random_standard_exponential(bg) / fz
        else:
            x = _rtigauss(z, bg)
        s = _pg_coef(0, x)
        y = random_standard_uniform(bg) * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _pg_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _pg_coef(n, x)
                if y > s:
                    break


cdef double _pg_mean(double b, double c) nogil:
    cdef double h = 0.5 * fabs(c)
    if h < 1e-4:
        return 0.25 * b * (1.0 - h * h / 3.0 + 2.0 * h * h * h * h / 15.0)
    return 0.25 * b * tanh(h) / h


cdef double _pg_var(double b, double c) nogil:
    cdef double a = fabs(c)
    cdef double a2, num, sech2, e
    if a < 0.1:
        a2 = a * a
        # (sinh a - a) / a^3 by series, then divide by cosh^2(a/2)
        num = 1.0 / 6.0 + a2 / 120.0 + a2 * a2 / 5040.0 + a2 * a2 * a2 / 362880.0
        return 0.25 * b * num / (cosh(0.5 * a) * cosh(0.5 * a))
    e = exp(-a)
    sech2 = 4.0 * e / ((1.0 + e) * (1.0 + e))
    return 0.25 * b * (2.0 * tanh(0.5 * a) - a * sech2) / (a * a * a)


cdef double _pg_series(double b, double c, bitgen_t* bg) nogil:
    """Truncated gamma-series PG(b, c) draw with the tail replaced by its mean."""
    cdef double c2 = c * c / (4.0 * M_PI * M_PI)
    cdef double acc = 0.0, mean_trunc = 0.0, d
    cdef int k
    for k in range(1, SERIES_TERMS + 1):
        d = (k - 0.5) * (k - 0.5) + c2
        acc += random_standard_gamma(bg, b) / d
        mean_trunc += b / d
    acc /= 2.0 * M_PI * M_PI
    mean_trunc /= 2.0 * M_PI * M_PI
    return acc + (_pg_mean(b, c) - mean_trunc)


cdef double _pg_gauss(double b, double c, bitgen_t* bg) nogil:
    cdef double m = _pg_mean(b, c)
    cdef double sd = sqrt(_pg_var(b, c))
    cdef double w = -1.0
    while w <= 0.0:
        w = m + sd * random_standard_normal(bg)
    return w


cdef double _pg(double b, double c, double b_exact, bitgen_t* bg) nogil:
    cdef double out = 0.0, frac
    cdef int n, i
    if b > b_exact:
        return _pg_gauss(b, c, bg)
    n = <int> floor(b + 1e-12)
    frac = b - n
    if frac < 1e-12:
        frac = 0.0
    for i in range(n):
        out += _pg1(c, bg)
    if frac > 0.0:
        out += _pg_series(frac, c, bg)
    return out


def pg_draw(const double[::1] b, const double[::1] c, double b_exact,
            object bit_generator, double[::1] out):
    """Fill ``out[i]`` with PG(b[i], c[i]) draws."""
    cdef bitgen_t* bg = _bitgen(bit_generator)
    cdef Py_ssize_t i, n = c.shape[0]
    with bit_generator.lock, nogil:
        for i in range(n):
            out[i] = _pg(b[i], c[i], b_exact, bg)


def pg_moments_c(double b, double c):
    return _pg_mean(b, c), _pg_var(b, c)


# ---------------------------------------------------------------------------
# Interval-truncated negative binomial
# ---------------------------------------------------------------------------

cdef inline double _nb_step(double y, double r, double logp) nogil:
    """log pmf(y + 1) - log pmf(y)."""
    return log((y + r) / (y + 1.0)) + logp


cdef int64_t _trunc_nb(double r, double psi, int64_t lo, int64_t hi,
                       bitgen_t* bg) nogil:
    """Inverse-CDF draw from NB(r, psi) restricted to [lo, hi); hi < 0 means open.

    Weights are kept relative to the running maximum in log space; returns -1
    on a support that carries no numerically representable mass.
    """
    cdef double logp = psi - _softplus(psi)
    cdef double lw, lmax, total, u, acc, y, rho, tail
    cdef int64_t k, last
    if hi >= 0 and hi - lo == 1:
        return lo
    if not isfinite(logp):
        if lo == 0:
            return 0
        return -1
    # pass 1: total mass relative to pmf(lo), tracking the log-max for rescaling
    lw = 0.0
    lmax = 0.0
    total = 1.0
    k = lo
    while True:
        if hi >= 0 and k + 1 >= hi:
            break
        lw += _nb_step(<double> k, r, logp)
        k += 1
        if lw > lmax:
            total *= exp(lmax - lw)
            lmax = lw
        total += exp(lw - lmax)
        if hi < 0:
            y = <double> k
            rho = exp(_nb_step(y, r, logp))
            if r < 1.0 and rho < exp(logp):
                # ratios increase towards p when r < 1
                rho = exp(logp)
            if rho < 1.0:
                tail = exp(lw - lmax) * rho / (1.0 - rho)
                if tail < TAIL_EPS * total:
                    break
    last = k
    if not (total > 0.0) or not isfinite(total):
        return -1
    # pass 2: walk the same support
    u = random_standard_uniform(bg) * total
    lw = 0.0
    acc = exp(-lmax)
    k = lo
    while acc < u and k < last:
        lw += _nb_step(<double> k, r, logp)
        k += 1
        acc += exp(lw - lmax)
    return k


def trunc_nb_draw(double r, const double[::1] psi, const int64_t[::1] lo,
                  const int64_t[::1] hi, object bit_generator, int64_t[::1] out):
    """Fill ``out``; returns the first failing index or -1."""
    cdef bitgen_t* bg = _bitgen(bit_generator)
    cdef Py_ssize_t i, n = psi.shape[0]
    cdef int64_t v
    cdef Py_ssize_t bad = -1
    with bit_generator.lock, nogil:
        for i in range(n):
            v = _trunc_nb(r, psi[i], lo[i], hi[i], bg)
            if v < 0:
                bad = i
                break
            out[i] = v
    return bad


def nb_log_pmf_c(double y, double r, double psi):
    return lgamma(y + r) - lgamma(r) - lgamma(y + 1.0) + y * psi - (y + r) * _softplus(psi)
