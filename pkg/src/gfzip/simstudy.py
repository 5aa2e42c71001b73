"""Simulation study: data generation, replication driver and accuracy metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import GroupedDataset, GroupingScheme, ModelConfig, group_of
from .rng import RngStream, as_stream

BETA1_TRUE = np.array([0.5, 0.5])
BETA2_TRUE = np.array([-0.5, -1.0])
LAMBDA1_TRUE = np.array([0.89, 0, 0.25, 0, 0.8, 0, 0.5, 0, 0, 0])
LAMBDA2_TRUE = np.array([0, 0, 0.85, 0.8, 0, 0.75, 0.75, 0, 0.8, 0.8])


@dataclass
class SimTruth:
    beta: np.ndarray      # 2J x P
    lambda1: np.ndarray   # J
    lambda2: np.ndarray   # J
    u: np.ndarray         # N
    z: np.ndarray         # N x J
    y_star: np.ndarray    # N x J
    setting: int

    @property
    def loadings(self) -> np.ndarray:
        """Stacked 2J x 1 loading matrix."""
        return np.concatenate([self.lambda1, self.lambda2])[:, None]

    def true_at_risk_given_zero(self, y: np.ndarray) -> np.ndarray:
        """Per-j share of at-risk individuals among those observed in group 0."""
        zero = y == 0
        with np.errstate(invalid="ignore"):
            return (zero & (self.z == 1)).sum(axis=0) / zero.sum(axis=0)


def generate_dataset(setting: int, n: int, rng) -> tuple[GroupedDataset, SimTruth]:
    """Draw one simulated dataset (J = 10, K = 1, P = 2).

    The latent counts depend only on ``rng``, so both settings applied to the
    same stream give coarsenings of the same underlying sample.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    scheme = GroupingScheme.setting(setting)
    rng = as_stream(rng)
    J = LAMBDA1_TRUE.size
    x = np.column_stack([np.ones(n), rng.standard_normal(n)])
    u = rng.standard_normal(n)
    eta1 = (x @ BETA1_TRUE)[:, None] + u[:, None] * LAMBDA1_TRUE[None, :]
    eta2 = (x @ BETA2_TRUE)[:, None] + u[:, None] * LAMBDA2_TRUE[None, :]
    z = (rng.random((n, J)) < expit(eta1)).astype(np.int64)
    counts = rng.generator.poisson(np.exp(eta2))
    y_star = np.where(z == 1, counts, 0).astype(np.int64)
    y = group_of(y_star, scheme)
    beta = np.vstack([np.tile(BETA1_TRUE, (J, 1)), np.tile(BETA2_TRUE, (J, 1))])
    data = GroupedDataset(y=y, x=x, scheme=scheme,
                          covariate_names=["const", "x"])
    truth = SimTruth(beta=beta, lambda1=LAMBDA1_TRUE.copy(), lambda2=LAMBDA2_TRUE.copy(),
                     u=u, z=z, y_star=y_star, setting=setting)
    return data, truth


MODELS = ("GFZIP", "GZIP", "FZIP")


def fzip_scheme(truth: SimTruth, x: np.ndarray, eps: float = 1e-10) -> GroupingScheme:
    """Singleton groups up to the extreme Poisson quantile of the largest true mean.

    Every realised count falls in its own group, so a fit on this scheme sees
    the exact counts.
    """
    from scipy.stats import poisson

    eta2 = (x @ truth.beta[truth.lambda1.size:].T) + truth.u[:, None] * truth.lambda2
    cap = int(poisson.isf(eps, np.exp(eta2.max()))) + 1
    cap = max(cap, int(truth.y_star.max()) + 2)
    return GroupingScheme.singletons(cap)


def bias_rmse(estimates, truth):
    """Bias and RMSE of replicated estimates along axis 0."""
    est = np.asarray(estimates, dtype=float)
    if est.shape[0] < 1:
        raise ValueError("need at least one replication")
    err = est - np.asarray(truth, dtype=float)
    return err.mean(axis=0), np.sqrt((err ** 2).mean(axis=0))


def _rate(num, den):
    den = np.asarray(den, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)


def classification_rates(pi_hat, y, z_true):
    """Per-j TPR, TNR, FPR, FNR of the rule pi_hat > 0.5 on cells with y == 0.

    Rates with an empty denominator are NaN (missing), not zero.
    """
    pi_hat, y, z_true = np.asarray(pi_hat), np.asarray(y), np.asarray(z_true)
    zero = y == 0
    pos = pi_hat > 0.5
    true1 = zero & (z_true == 1)
    true0 = zero & (z_true == 0)
    n1, n0 = true1.sum(axis=0), true0.sum(axis=0)
    return {
        "TPR": _rate((pos & true1).sum(axis=0), n1),
        "FNR": _rate((~pos & true1).sum(axis=0), n1),
        "TNR": _rate((~pos & true0).sum(axis=0), n0),
        "FPR": _rate((pos & true0).sum(axis=0), n0),
    }


def at_risk_proportion(pi_hat, y):
    """Share of zero responses classified at risk (pi_hat > 0.5), per j; NaN if no zeros."""
    zero = np.asarray(y) == 0
    pos = np.asarray(pi_hat) > 0.5
    return _rate((pos & zero).sum(axis=0), zero.sum(axis=0))


@dataclass
class FitSummary:
    """Per-replication outputs of one model fit."""

    rep: int
    setting: int
    model: str
    beta_hat: np.ndarray
    ll_hat: np.ndarray | None
    rates: dict
    r_hat: np.ndarray
    r_true: np.ndarray
    seconds: float


def _model_config(model: str, config: ModelConfig) -> ModelConfig:
    cfg = ModelConfig(**{f: getattr(config, f) for f in config.__dataclass_fields__})
    if model == "GZIP":
        cfg.K = 0
        cfg.prior_a = cfg.prior_b = None
    cfg.store_u = False
    cfg.store_z = False
    return cfg


def fit_replicate(rep: int, setting: int, model: str, n: int, config: ModelConfig,
                  rng) -> FitSummary:
    """Generate replication ``rep`` and fit one model to it."""
    import time

    from .gibbs import run_chain
    from .postprocess import identify, outer_mean

    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    rng = as_stream(rng)
    data, truth = generate_dataset(setting, n, rng.substream(rep, "data"))
    if model == "FZIP":
        scheme = fzip_scheme(truth, data.x)
        data = GroupedDataset(y=group_of(truth.y_star, scheme), x=data.x, scheme=scheme,
                              covariate_names=data.covariate_names)
    cfg = _model_config(model, config)
    t0 = time.perf_counter()
    raw, _ = run_chain(data, cfg, rng.substream(rep, model, "chain"))
    post = identify(raw)
    seconds = time.perf_counter() - t0
    ll_hat = outer_mean(post.lambda_) if post.K else None
    return FitSummary(
        rep=rep, setting=setting, model=model,
        beta_hat=post.beta.mean(axis=0), ll_hat=ll_hat,
        rates=classification_rates(post.pi_hat, data.y, truth.z),
        r_hat=at_risk_proportion(post.pi_hat, data.y),
        r_true=truth.true_at_risk_given_zero(data.y),
        seconds=seconds,
    )


def _job(args):
    rep, setting, model, n, config, seed, key = args
    try:
        return fit_replicate(rep, setting, model, n, config, RngStream(seed, key)), None
    except Exception as exc:  # logged and excluded by the caller
        return None, (rep, setting, model, repr(exc))


@dataclass
class ReplicationResults:
    fits: dict             # (setting, model) -> list[FitSummary]
    failures: list
    n: int
    R: int

    def _truth_beta(self, J):
        return np.vstack([np.tile(BETA1_TRUE, (J, 1)), np.tile(BETA2_TRUE, (J, 1))])

    def keys(self):
        return sorted(self.fits, key=lambda k: (k[0], MODELS.index(k[1])))

    def beta_table(self) -> list[dict]:
        """Bias/RMSE per (h, j, p) plus J-averaged rows (``j == 'avg'``)."""
        rows = []
        for setting, model in self.keys():
            fits = self.fits[(setting, model)]
            if not fits:
                continue
            est = np.stack([f.beta_hat for f in fits])
            J = est.shape[1] // 2
            bias, rmse = bias_rmse(est, self._truth_beta(J))
            for h in (1, 2):
                blk = slice((h - 1) * J, h * J)
                for p in range(est.shape[2]):
                    for j in range(J):
                        rows.append(dict(model=model, setting=setting, h=h, j=j + 1,
                                         p=p + 1, bias=bias[blk][j, p],
                                         abs_bias=abs(bias[blk][j, p]),
                                         rmse=rmse[blk][j, p], n_reps=len(fits)))
                    rows.append(dict(model=model, setting=setting, h=h, j="avg", p=p + 1,
                                     bias=bias[blk][:, p].mean(),
                                     abs_bias=np.abs(bias[blk][:, p]).mean(),
                                     rmse=rmse[blk][:, p].mean(), n_reps=len(fits)))
        return rows

    def beta_summary(self, model, setting, h, p) -> dict:
        for row in self.beta_table():
            if (row["model"], row["setting"], row["h"], row["j"], row["p"]) == \
                    (model, setting, h, "avg", p):
                return row
        raise KeyError((model, setting, h, p))

    def ll_table(self) -> list[dict]:
        """Bias/RMSE of each unique element of vec(Lambda Lambda')."""
        rows = []
        truth = np.concatenate([LAMBDA1_TRUE, LAMBDA2_TRUE])[:, None]
        ll_true = truth @ truth.T
        for setting, model in self.keys():
            fits = [f for f in self.fits[(setting, model)] if f.ll_hat is not None]
            if not fits:
                continue
            bias, rmse = bias_rmse(np.stack([f.ll_hat for f in fits]), ll_true)
            a, b = np.triu_indices(ll_true.shape[0])
            for i, k in zip(a, b):
                rows.append(dict(model=model, setting=setting, row=i + 1, col=k + 1,
                                 bias=bias[i, k], rmse=rmse[i, k], n_reps=len(fits)))
        return rows

    def ll_boxplot(self) -> list[dict]:
        """Five-number summaries of the vec(Lambda Lambda') bias and RMSE."""
        rows = []
        table = self.ll_table()
        for setting, model in self.keys():
            sub = [r for r in table if r["model"] == model and r["setting"] == setting]
            if not sub:
                continue
            for stat in ("bias", "rmse"):
                v = np.array([r[stat] for r in sub])
                q = np.percentile(v, [0, 25, 50, 75, 100])
                rows.append(dict(model=model, setting=setting, statistic=stat,
                                 min=q[0], q1=q[1], median=q[2], q3=q[3], max=q[4]))
        return rows

    def rates_table(self) -> list[dict]:
        rows = []
        for setting, model in self.keys():
            fits = self.fits[(setting, model)]
            if not fits:
                continue
            J = fits[0].r_hat.size
            for j in range(J):
                row = dict(model=model, setting=setting, j=j + 1)
                for name in ("TPR", "TNR", "FPR", "FNR"):
                    vals = np.array([f.rates[name][j] for f in fits])
                    ok = ~np.isnan(vals)
                    row[name] = vals[ok].mean() if ok.any() else np.nan
                    row[f"{name}_n"] = int(ok.sum())
                rows.append(row)
        return rows

    def at_risk_table(self) -> list[dict]:
        rows = []
        for setting, model in self.keys():
            fits = self.fits[(setting, model)]
            if not fits:
                continue
            r_hat = np.stack([f.r_hat for f in fits])
            r_true = np.stack([f.r_true for f in fits])
            for j in range(r_hat.shape[1]):
                rows.append(dict(model=model, setting=setting, j=j + 1,
                                 R_hat=np.nanmean(r_hat[:, j]),
                                 R_true=np.nanmean(r_true[:, j]), n_reps=len(fits)))
        return rows

    def write(self, out_dir, manifest: str = "") -> list[str]:
        """Write the four table families (plus the LL' boxplot summary) as CSV."""
        from .io import write_table

        tables = {
            "beta_bias_rmse.csv": self.beta_table(),
            "lambda_outer_bias_rmse.csv": self.ll_table(),
            "lambda_outer_boxplot.csv": self.ll_boxplot(),
            "classification_rates.csv": self.rates_table(),
            "at_risk_proportion.csv": self.at_risk_table(),
        }
        paths = []
        for name, rows in tables.items():
            paths.append(write_table(f"{out_dir}/{name}", rows, manifest))
        if self.failures:
            paths.append(write_table(
                f"{out_dir}/failures.csv",
                [dict(rep=r, setting=s, model=m, error=e) for r, s, m, e in self.failures],
                manifest))
        return paths


def run_replications(R: int, setting, models=MODELS, config: ModelConfig | None = None,
                     rng=0, n: int = 1000, n_jobs: int = 1, out_dir=None,
                     manifest: str = "") -> ReplicationResults:
    """Replicate the simulation design ``R`` times for each setting and model.

    Chains are keyed by (replication, model) only, so a model whose data do
    not depend on the grouping (FZIP) gives identical results in both
    settings.  Failed fits are logged and excluded; see ``failures``.
    """
    import logging
    from concurrent.futures import ProcessPoolExecutor

    log = logging.getLogger(__name__)
    config = config or ModelConfig()
    rng = as_stream(rng)
    settings = [setting] if isinstance(setting, (int, np.integer)) else list(setting)
    jobs = [(rep, s, m, n, config, rng.seed, rng.key)
            for s in settings for m in models for rep in range(R)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_job(job))
            if results[-1][0] is not None:
                f = results[-1][0]
                log.info("rep %d setting %d %s done in %.1fs", f.rep, f.setting,
                         f.model, f.seconds)
    fits = {(s, m): [] for s in settings for m in models}
    failures = []
    for res, err in results:
        if err is not None:
            log.warning("replication failed and excluded: %s", err)
            failures.append(err)
        else:
            fits[(res.setting, res.model)].append(res)
    for v in fits.values():
        v.sort(key=lambda f: f.rep)
    out = ReplicationResults(fits=fits, failures=failures, n=n, R=R)
    if out_dir is not None:
        out.write(out_dir, manifest)
    return out
