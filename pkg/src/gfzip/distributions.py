"""Random variates for every full conditional of the sampler.

The Polya-Gamma and truncated negative-binomial draws go through the kernel
backend (compiled when available); normal and inverse-gamma draws are plain
numpy.
"""
from __future__ import annotations

import logging

import numpy as np

from . import _backend
from ._pykernels import pg_mean, pg_var
from .rng import as_stream

__all__ = [
    "DegenerateSupportError",
    "PG_EXACT_MAX",
    "pg_moments",
    "sample_pg",
    "sample_trunc_nb",
    "sample_mvn",
    "sample_inv_gamma",
    "JITTER",
]

log = logging.getLogger(__name__)

PG_EXACT_MAX = 20.0
JITTER = 1e-10
MIN_EIG = 1e-12


class DegenerateSupportError(FloatingPointError):
    """A truncation interval carries no representable probability mass."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def pg_moments(b, c):
    """Mean and variance of PG(b, c).

    mean = b/(2c) tanh(c/2),  var = b/(4c^3) (sinh c - c) / cosh^2(c/2),
    with the ``c -> 0`` limits b/4 and b/24 evaluated by series.
    """
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise ValueError("PG shape b must be positive")
    m, v = pg_mean(b, c), pg_var(b, c)
    if m.ndim == 0:
        return float(m), float(v)
    return m, v


def sample_pg(b, c, rng, size=None, b_exact: float = PG_EXACT_MAX):
    """Draw from the tilted Polya-Gamma PG(b, c).

    ``b <= b_exact``: exact (sums of PG(1, c) draws, plus a gamma-series term
    for a fractional part).  ``b > b_exact``: moment-matched normal truncated
    to positive values.  ``b`` and ``c`` broadcast against each other and
    ``size``.
    """
    rng = as_stream(rng)
    b_arr = np.asarray(b, dtype=float)
    c_arr = np.asarray(c, dtype=float)
    shape = np.broadcast_shapes(b_arr.shape, c_arr.shape, () if size is None else
                                tuple(np.atleast_1d(size)))
    if np.any(b_arr <= 0):
        raise ValueError("PG shape b must be positive")
    bb = np.ascontiguousarray(np.broadcast_to(b_arr, shape), dtype=float).ravel()
    cc = np.ascontiguousarray(np.broadcast_to(c_arr, shape), dtype=float).ravel()
    out = np.empty(bb.size)
    _backend.kernels().pg_draw(bb, cc, float(b_exact), rng.bit_generator, out)
    if shape == ():
        return float(out[0])
    return out.reshape(shape)


def _as_upper(hi):
    hi = np.asarray(hi, dtype=float)
    return np.where(np.isinf(hi) | (hi < 0), -1, hi).astype(np.int64)


def sample_trunc_nb(r: float, psi, lo, hi, rng):
    """Draw ``y`` with pmf proportional to NB(y; r, psi) on ``lo <= y < hi``.

    ``hi`` may be ``inf`` (or a negative value) for an open upper end.  Raises
    :class:`DegenerateSupportError` carrying the offending flat index when an
    interval has no representable mass.
    """
    rng = as_stream(rng)
    if not r > 0:
        raise ValueError("r must be positive")
    psi_a, lo_a, hi_a = np.broadcast_arrays(np.asarray(psi, float),
                                            np.asarray(lo), np.asarray(hi, float))
    shape = psi_a.shape
    lo_i = np.ascontiguousarray(lo_a, dtype=np.int64).ravel()
    hi_i = np.ascontiguousarray(_as_upper(hi_a), dtype=np.int64).ravel()
    if np.any(lo_i < 0):
        raise ValueError("lower endpoints must be non-negative")
    if np.any((hi_i >= 0) & (hi_i <= lo_i)):
        raise ValueError("empty truncation interval")
    out = np.empty(lo_i.size, dtype=np.int64)
    bad = _backend.kernels().trunc_nb_draw(
        float(r), np.ascontiguousarray(psi_a, dtype=float).ravel(), lo_i, hi_i,
        rng.bit_generator, out)
    if bad >= 0:
        hi_txt = "inf" if hi_i[bad] < 0 else str(hi_i[bad])
        raise DegenerateSupportError(
            f"no NB mass on [{lo_i[bad]}, {hi_txt}) at psi={psi_a.ravel()[bad]!r}", bad)
    if shape == ():
        return int(out[0])
    return out.reshape(shape)


def _guard(mat, label):
    """Jitter a nearly singular SPD matrix; the jitter is logged."""
    eig_min = np.linalg.eigvalsh(mat).min()
    if eig_min < MIN_EIG:
        log.warning("matrix for %s has min eigenvalue %.3g; adding %.0e*I",
                    label or "mvn draw", eig_min, JITTER)
        mat = mat + JITTER * np.eye(mat.shape[0])
    return mat


def sample_mvn(mean, matrix, rng, precision: bool = False, size=None, label=None):
    """Multivariate normal draw via a Cholesky factor.

    With ``precision=True`` the matrix is the precision Q = L L' and the draw
    is ``mean + L'^{-1} e`` (triangular solve, no inverse).
    """
    from scipy.linalg import solve_triangular

    rng = as_stream(rng)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    mat = np.atleast_2d(np.asarray(matrix, dtype=float))
    d = mean.size
    if mat.shape != (d, d):
        raise ValueError(f"matrix shape {mat.shape} does not match mean length {d}")
    mat = _guard(0.5 * (mat + mat.T), label)
    try:
        L = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"Cholesky factorisation failed for {label or 'mvn draw'}") from exc
    n = 1 if size is None else int(size)
    e = rng.standard_normal((d, n))
    if precision:
        draws = solve_triangular(L, e, lower=True, trans="T")
    else:
        draws = L @ e
    draws = mean[:, None] + draws
    return draws[:, 0] if size is None else draws.T


def sample_inv_gamma(a, b, rng, size=None):
    """1 / Gamma(shape a, rate b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("inverse-gamma parameters must be positive")
    rng = as_stream(rng)
    g = rng.standard_gamma(a, size=size)
    out = b / g
    # guard against an exact-zero gamma variate for tiny shapes
    out = np.where(np.isfinite(out), out, np.finfo(float).max)
    return float(out) if np.ndim(out) == 0 else out

