"""Identification of factor draws: scale recovery, varimax, signed permutations.

The working parameters (lambda*, u*, phi) are first mapped back to the
identified scale, then each draw is varimax-rotated and finally a signed
permutation per draw aligns it with a common reference.  Every transform
applied to a loading draw is applied to the matching factor draw so the
products ``Lambda u'`` are unchanged.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MAX_ALIGN_K = 6
ROTATION_STEP_TOL = 1e-13


def recover_scale(lambda_star, u_star, phi):
    """lambda = lambda* phi^{1/2},  u = u* phi^{-1/2}  (column-wise).

    Works on single draws (``2J x K``, ``N x K``, ``K``) or on stacks with a
    leading draw axis.  ``u_star`` may be ``None``.
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0):
        raise ValueError("phi must be positive")
    root = np.sqrt(phi)
    lam = np.asarray(lambda_star) * root[..., None, :]
    u = None if u_star is None else np.asarray(u_star) / root[..., None, :]
    return lam, u


def varimax_criterion(L) -> float:
    """Sum over columns of the variance of the squared loadings."""
    sq = np.asarray(L) ** 2
    return float(np.sum(np.mean(sq ** 2, axis=0) - np.mean(sq, axis=0) ** 2))


@dataclass
class VarimaxInfo:
    converged: bool
    iterations: int
    criterion: float


def varimax(L, tol=1e-10, max_iter=1000, return_info=False):
    """Orthogonal varimax rotation (raw loadings, no Kaiser normalisation).

    Returns ``(L @ Q, Q)``.  Converged once the relative change of the
    criterion drops below ``tol``; iteration then continues until the update
    of ``Q`` is below ``ROTATION_STEP_TOL`` (or ``max_iter``).
    """
    L = np.asarray(L, dtype=float)
    p, k = L.shape
    Q = np.eye(k)
    if k == 1:
        info = VarimaxInfo(True, 0, varimax_criterion(L))
        return (L.copy(), Q, info) if return_info else (L.copy(), Q)
    best = varimax_criterion(L)
    best_Q = Q
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        B = L @ Q
        G = L.T @ (B ** 3 - B * (np.sum(B ** 2, axis=0) / p))
        U, _, Vt = np.linalg.svd(G)
        Q_new = U @ Vt
        step = np.abs(Q_new - Q).max()
        Q = Q_new
        crit = varimax_criterion(L @ Q)
        change = crit - best
        if crit >= best:
            best, best_Q = crit, Q
        if abs(change) <= tol * max(abs(best), 1e-300):
            converged = True
        # the criterion is flat at the optimum: keep polishing Q so that
        # signed-permuted inputs land on the same rotation
        if converged and step <= ROTATION_STEP_TOL:
            break
    if not converged:
        log.warning("varimax did not converge in %d iterations", max_iter)
    elif crit >= best - 1e-12 * abs(best):
        best_Q = Q  # rounding-level criterion noise: keep the polished iterate
    rotated = L @ best_Q
    info = VarimaxInfo(converged, it, best)
    return (rotated, best_Q, info) if return_info else (rotated, best_Q)


def signed_permutations(K: int) -> np.ndarray:
    """All K! 2^K signed permutation matrices, identity first."""
    mats = []
    for perm in itertools.permutations(range(K)):
        for signs in itertools.product((1.0, -1.0), repeat=K):
            T = np.zeros((K, K))
            T[list(perm), range(K)] = signs
            mats.append(T)
    return np.array(mats)


@dataclass
class AlignmentReport:
    """Transforms applied to each draw: ``aligned_m = loadings_m @ rotation_m @ signed_m``."""

    reference: np.ndarray
    rotations: np.ndarray      # M x K x K (varimax)
    permutations: np.ndarray   # M x K, source column of each output column
    signs: np.ndarray          # M x K
    converged: bool
    iterations: int
    final_signs: np.ndarray = field(default=None)

    def signed_matrices(self) -> np.ndarray:
        M, K = self.signs.shape
        T = np.zeros((M, K, K))
        rows = self.permutations
        T[np.arange(M)[:, None], rows, np.arange(K)[None, :]] = self.signs
        return T

    def transforms(self) -> np.ndarray:
        """Full per-draw K x K orthogonal transforms."""
        return self.rotations @ self.signed_matrices()

    def to_dict(self) -> dict:
        return {
            "reference": self.reference.tolist(),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "rotations": self.rotations.tolist(),
            "permutations": self.permutations.tolist(),
            "signs": self.signs.tolist(),
        }


def align_draws(draws, u_draws=None, tol=1e-8, max_iter=100):
    """Rotate every draw by varimax, then align by signed permutations.

    Parameters
    ----------
    draws : array (M, 2J, K)
        Scale-recovered loading draws.
    u_draws : array (M, N, K), optional
        Factor draws receiving the same per-draw transforms.

    Returns
    -------
    aligned : array (M, 2J, K)
    report : AlignmentReport
    aligned_u : array or None (only when ``u_draws`` is given)

    Notes
    -----
    The reference starts as the varimax rotation of the mean draw (or of the
    first rotated draw when the mean has collapsed through sign switching),
    and is replaced by the mean of the aligned draws until it moves by less
    than ``tol``.  Finally each column's sign is fixed so that its
    largest-magnitude mean entry is positive.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 3 or draws.shape[0] < 2:
        raise ValueError("need a stack of at least two loading draws")
    M, _, K = draws.shape
    if K > MAX_ALIGN_K:
        raise ValueError(f"exhaustive signed-permutation search supports K <= "
                         f"{MAX_ALIGN_K}; refit with fewer factors")
    rotations = np.tile(np.eye(K), (M, 1, 1))
    rotated = draws.copy()
    if K > 1:
        for m in range(M):
            rotated[m], rotations[m] = varimax(draws[m])

    reference = varimax(draws.mean(axis=0))[0]
    norms = np.linalg.norm(rotated, axis=(1, 2))
    if np.linalg.norm(reference) < 0.1 * np.median(norms):
        reference = rotated[0].copy()

    T = signed_permutations(K)
    converged = False
    choice = np.zeros(M, dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        cross = np.einsum("mpa,pb->mab", rotated, reference)
        scores = np.einsum("tab,mab->mt", T, cross)
        choice = np.argmax(scores, axis=1)
        aligned = np.einsum("mpa,mab->mpb", rotated, T[choice])
        new_ref = aligned.mean(axis=0)
        delta = np.linalg.norm(new_ref - reference)
        reference = new_ref
        if delta < tol:
            converged = True
            break

    # canonical column signs: largest-|mean| entry positive
    top = np.argmax(np.abs(reference), axis=0)
    final = np.sign(reference[top, np.arange(K)])
    final[final == 0] = 1.0
    reference = reference * final
    Ts = T[choice] * final[None, None, :]
    aligned = np.einsum("mpa,mab->mpb", rotated, Ts)

    perms = np.argmax(np.abs(Ts), axis=1)
    signs = np.take_along_axis(Ts, perms[:, None, :], axis=1)[:, 0, :]
    report = AlignmentReport(reference=reference, rotations=rotations,
                             permutations=perms, signs=signs,
                             converged=converged, iterations=it, final_signs=final)
    if u_draws is None:
        return aligned, report
    u_draws = np.asarray(u_draws, dtype=float)
    full = rotations @ Ts
    aligned_u = np.einsum("mna,mab->mnb", u_draws, full)
    return aligned, report, aligned_u


def summarize(draws, level=0.95):
    """Posterior means and central credible intervals along the first axis.

    Percentiles use linear interpolation between order statistics.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < 2:
        raise ValueError("need at least two draws")
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(draws, [tail, 100 - tail], axis=0, method="linear")
    return draws.mean(axis=0), lo, hi


def outer_mean(lambda_draws):
    """Posterior mean of Lambda Lambda' (2J x 2J) from a stack of loading draws."""
    lam = np.asarray(lambda_draws, dtype=float)
    return np.einsum("mpk,mqk->pq", lam, lam) / lam.shape[0]


@dataclass
class PosteriorDraws:
    """Identified posterior draws.

    ``lambda_`` and ``u`` are scale-recovered, rotated and sign/permutation
    aligned; ``lambda_star``/``u_star`` keep the raw working parameters.
    """

    beta: np.ndarray
    lambda_: np.ndarray
    u: np.ndarray | None
    phi: np.ndarray
    lambda_star: np.ndarray
    u_star: np.ndarray | None
    pi_hat: np.ndarray
    n_draws: int
    z: np.ndarray | None = None
    report: AlignmentReport | None = None

    @property
    def K(self) -> int:
        return self.lambda_.shape[2]

    @property
    def J(self) -> int:
        return self.beta.shape[1] // 2


def identify(raw) -> PosteriorDraws:
    """Scale-recover and align the factor draws of a :class:`~gfzip.gibbs.RawDraws`."""
    K = raw.lambda_star.shape[2]
    report = None
    if K == 0 or raw.n_draws < 2:
        lam, u = raw.lambda_star.copy(), None if raw.u_star is None else raw.u_star.copy()
    else:
        lam, u = recover_scale(raw.lambda_star, raw.u_star, raw.phi)
        if u is None:
            lam, report = align_draws(lam)
        else:
            lam, report, u = align_draws(lam, u)
    return PosteriorDraws(beta=raw.beta, lambda_=lam, u=u, phi=raw.phi,
                          lambda_star=raw.lambda_star, u_star=raw.u_star,
                          pi_hat=raw.pi_hat, n_draws=raw.n_draws, z=raw.z,
                          report=report)
