"""Domain types, grouping rule, link functions and the negative-binomial marginal.

Notation used across the package
--------------------------------
N individuals, J count dimensions, P covariates, K latent factors.  Index
``h`` distinguishes the at-risk (logistic) part ``h = 1`` from the count
(log-link) part ``h = 2``.  Stacked matrices put the ``J`` at-risk rows first
and the ``J`` count rows second, so ``beta`` is ``2J x P`` and the loading
matrix is ``2J x K``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, gammaln, log_expit

__all__ = [
    "GroupingScheme",
    "GroupedDataset",
    "ModelConfig",
    "ChainState",
    "SETTING_1_THRESHOLDS",
    "SETTING_2_THRESHOLDS",
    "group_of",
    "group_interval",
    "linear_predictor",
    "at_risk_prob",
    "poisson_mean",
    "nb_log_pmf",
    "softplus",
]

SETTING_1_THRESHOLDS = (0, 1, 2, 3, 6, 11, 51)
SETTING_2_THRESHOLDS = tuple(range(11)) + (11, 16, 21, 26, 31, 41, 51)


@dataclass(frozen=True)
class GroupingScheme:
    """Ordinal grouping of non-negative counts by lower thresholds.

    Group ``g`` holds the counts ``thresholds[g] <= y < thresholds[g + 1]``;
    the last group is open-ended.
    """

    thresholds: tuple[int, ...]

    def __post_init__(self):
        t = tuple(int(v) for v in self.thresholds)
        if len(t) < 2:
            raise ValueError("a grouping scheme needs at least two groups")
        if t[0] != 0:
            raise ValueError("the first threshold must be 0")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError(f"thresholds must be strictly increasing: {t}")
        object.__setattr__(self, "thresholds", t)

    @property
    def G(self) -> int:
        return len(self.thresholds)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.thresholds, dtype=np.int64)

    @property
    def upper(self) -> np.ndarray:
        """Exclusive upper endpoints; ``-1`` encodes the open top group."""
        return np.append(self.lower[1:], -1)

    @classmethod
    def parse(cls, text: str) -> "GroupingScheme":
        """Parse ``"0,1,2,3,6,11,51"``."""
        try:
            values = [int(tok) for tok in text.replace(" ", "").split(",") if tok]
        except ValueError as exc:
            raise ValueError(f"malformed grouping scheme {text!r}") from exc
        return cls(tuple(values))

    def __str__(self) -> str:
        return ",".join(str(v) for v in self.thresholds)

    @classmethod
    def setting(cls, setting: int) -> "GroupingScheme":
        if setting == 1:
            return cls(SETTING_1_THRESHOLDS)
        if setting == 2:
            return cls(SETTING_2_THRESHOLDS)
        raise ValueError(f"unknown simulation setting {setting!r}")

    @classmethod
    def singletons(cls, cap: int) -> "GroupingScheme":
        """Groups {0}, {1}, ..., {cap - 1}, [cap, inf): exact counts below ``cap``."""
        if cap < 1:
            raise ValueError("cap must be >= 1")
        return cls(tuple(range(cap + 1)))


def group_of(y_star, scheme: GroupingScheme):
    """Group index of a count (scalar or array)."""
    y = np.asarray(y_star)
    if np.any(y < 0):
        raise ValueError("counts must be non-negative")
    g = np.searchsorted(scheme.lower, y, side="right") - 1
    return int(g) if g.ndim == 0 else g


def group_interval(g: int, scheme: GroupingScheme) -> tuple[int, float]:
    """Half-open interval ``[lo, hi)`` of group ``g``; ``hi`` is ``inf`` for the top group."""
    if not 0 <= g < scheme.G:
        raise ValueError(f"group index {g} out of range 0..{scheme.G - 1}")
    lo = scheme.thresholds[g]
    hi = scheme.thresholds[g + 1] if g + 1 < scheme.G else math.inf
    return lo, hi


def linear_predictor(x_i, beta_hj, u_i=None, lambda_hj=None) -> float:
    x_i = np.asarray(x_i, dtype=float)
    beta_hj = np.asarray(beta_hj, dtype=float)
    if x_i.shape != beta_hj.shape:
        raise ValueError(f"covariate/coefficient mismatch: {x_i.shape} vs {beta_hj.shape}")
    eta = float(x_i @ beta_hj)
    if u_i is None and lambda_hj is None:
        return eta
    u_i = np.atleast_1d(np.asarray(u_i, dtype=float))
    lambda_hj = np.atleast_1d(np.asarray(lambda_hj, dtype=float))
    if u_i.shape != lambda_hj.shape:
        raise ValueError(f"factor/loading mismatch: {u_i.shape} vs {lambda_hj.shape}")
    return eta + float(u_i @ lambda_hj)


def at_risk_prob(eta1):
    """Logistic at-risk probability; saturates cleanly for large ``|eta1|``."""
    return expit(eta1)


def poisson_mean(eta2):
    return np.exp(eta2)


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    return -log_expit(-np.asarray(x, dtype=float))


def nb_log_pmf(y, r: float, psi):
    """Log pmf of NB(r, psi): Gamma(y+r)/(Gamma(r) y!) e^{psi y} / (1+e^psi)^{y+r}.

    With ``psi = eta - log r`` the mean is ``exp(eta)`` and the law tends to
    Poisson(exp(eta)) as ``r`` grows.
    """
    y = np.asarray(y, dtype=float)
    psi = np.asarray(psi, dtype=float)
    return (gammaln(y + r) - gammaln(r) - gammaln(y + 1.0)
            + y * psi - (y + r) * softplus(psi))


@dataclass
class GroupedDataset:
    """Observed group indices ``y`` (N x J, ints) and covariates ``x`` (N x P)."""

    y: np.ndarray
    x: np.ndarray
    scheme: GroupingScheme
    labels: Sequence[str] | None = None
    covariate_names: Sequence[str] | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y)
        if self.y.ndim != 2:
            raise ValueError("y must be an N x J matrix")
        if not np.issubdtype(self.y.dtype, np.integer):
            if not np.all(np.mod(self.y, 1) == 0):
                raise ValueError("y must contain integer group indices")
        self.y = self.y.astype(np.int64)
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        N, J = self.y.shape
        if N < 1 or J < 1 or self.x.shape[1] < 1:
            raise ValueError("need N >= 1, J >= 1 and P >= 1")
        if self.x.shape[0] != N:
            raise ValueError(f"x has {self.x.shape[0]} rows but y has {N}")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("covariates contain non-finite values")
        if self.y.min() < 0 or self.y.max() >= self.scheme.G:
            raise ValueError(f"group indices must lie in 0..{self.scheme.G - 1}")
        if self.labels is None:
            self.labels = [f"y{j + 1}" for j in range(J)]
        if self.covariate_names is None:
            self.covariate_names = [f"x{p + 1}" for p in range(self.x.shape[1])]
        if len(self.labels) != J or len(self.covariate_names) != self.x.shape[1]:
            raise ValueError("label counts do not match data dimensions")

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def J(self) -> int:
        return self.y.shape[1]

    @property
    def P(self) -> int:
        return self.x.shape[1]

    @property
    def lower(self) -> np.ndarray:
        return self.scheme.lower[self.y]

    @property
    def upper(self) -> np.ndarray:
        return self.scheme.upper[self.y]

    def group_counts(self) -> np.ndarray:
        """Observed ``c_jg``: J x G table of individuals per group."""
        G = self.scheme.G
        return np.stack([np.bincount(self.y[:, j], minlength=G) for j in range(self.J)])


@dataclass
class ModelConfig:
    K: int = 1
    r: float = 1000.0
    prior_b0: np.ndarray | None = None
    prior_B0: np.ndarray | None = None
    prior_a: np.ndarray | None = None
    prior_b: np.ndarray | None = None
    n_iter: int = 6000
    n_burnin: int = 1000
    thin: int = 1
    seed: int = 0
    pg_exact_max: float = 20.0
    store_u: bool = True
    store_z: bool = False

    def resolved(self, P: int) -> "ModelConfig":
        """Fill default hyperparameters for ``P`` covariates and validate."""
        cfg = ModelConfig(**{f: getattr(self, f) for f in self.__dataclass_fields__})
        cfg.prior_b0 = (np.zeros(P) if cfg.prior_b0 is None
                        else np.asarray(cfg.prior_b0, dtype=float).reshape(P))
        cfg.prior_B0 = (100.0 * np.eye(P) if cfg.prior_B0 is None
                        else np.asarray(cfg.prior_B0, dtype=float).reshape(P, P))
        cfg.prior_a = (np.full(cfg.K, 2.0) if cfg.prior_a is None
                       else np.broadcast_to(np.asarray(cfg.prior_a, float), (cfg.K,)).copy())
        cfg.prior_b = (np.full(cfg.K, 2.0) if cfg.prior_b is None
                       else np.broadcast_to(np.asarray(cfg.prior_b, float), (cfg.K,)).copy())
        cfg.validate()
        return cfg

    def validate(self):
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if not self.r > 0:
            raise ValueError("r must be positive")
        if self.thin < 1 or self.n_iter < 1 or not 0 <= self.n_burnin < self.n_iter:
            raise ValueError("need n_iter >= 1, 0 <= n_burnin < n_iter and thin >= 1")
        if (self.n_iter - self.n_burnin) % self.thin:
            raise ValueError("(n_iter - n_burnin) must be a multiple of thin")
        if self.prior_B0 is not None:
            B0 = np.asarray(self.prior_B0)
            if not np.allclose(B0, B0.T):
                raise ValueError("prior_B0 must be symmetric")
            if np.linalg.eigvalsh(B0).min() <= 0:
                raise ValueError("prior_B0 must be positive definite")
        for name in ("prior_a", "prior_b"):
            v = getattr(self, name)
            if v is not None and np.any(np.asarray(v) <= 0):
                raise ValueError(f"{name} entries must be positive")

    @property
    def n_keep(self) -> int:
        return (self.n_iter - self.n_burnin) // self.thin

    def to_dict(self) -> dict:
        out = {}
        for f in self.__dataclass_fields__:
            v = getattr(self, f)
            out[f] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass
class ChainState:
    """Working-parameter state of one Gibbs iteration.

    ``beta`` rows are (beta_11..beta_1J, beta_21..beta_2J); ``lambda_star`` is
    stacked the same way.  ``omega2`` is only meaningful where ``z == 1``.
    """

    beta: np.ndarray
    lambda_star: np.ndarray
    u_star: np.ndarray
    phi: np.ndarray
    z: np.ndarray
    y_star: np.ndarray
    omega1: np.ndarray
    omega2: np.ndarray

    @property
    def K(self) -> int:
        return self.lambda_star.shape[1]

    @property
    def J(self) -> int:
        return self.beta.shape[0] // 2

    def eta(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Linear predictors (eta1, eta2), each N x J."""
        J = self.J
        lin = x @ self.beta.T
        if self.K:
            lin = lin + self.u_star @ self.lambda_star.T
        return lin[:, :J], lin[:, J:]

    def copy(self) -> "ChainState":
        return ChainState(*(np.array(getattr(self, f)) for f in
                            ("beta", "lambda_star", "u_star", "phi", "z",
                             "y_star", "omega1", "omega2")))

    def check(self, data: GroupedDataset) -> None:
        """Raise if the structural invariants are violated."""
        z = self.z.astype(bool)
        if np.any(~z & (data.y > 0)):
            raise AssertionError("positive observation with z == 0")
        if np.any(self.y_star[~z] != 0):
            raise AssertionError("structural zero with non-zero latent count")
        lo, hi = data.lower, data.upper
        ys = self.y_star
        inside = (ys >= lo) & ((hi < 0) | (ys < hi))
        if np.any(z & ~inside):
            raise AssertionError("latent count outside its observed group")
        if self.K and np.any(self.phi <= 0):
            raise AssertionError("non-positive phi")
        if np.any(self.omega1 <= 0) or np.any(self.omega2[z] <= 0):
            raise AssertionError("non-positive PG variable")
