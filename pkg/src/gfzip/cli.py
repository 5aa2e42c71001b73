"""Command-line interface: ``gfzip simulate | fit | evaluate | replicate``.

Exit codes: 0 success, 1 invalid input or arguments, 2 runtime failure.
Every flag may also be given in a JSON config file (``--config``); flags on
the command line take precedence over the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import io as gio
from .model import GroupingScheme, ModelConfig

log = logging.getLogger("gfzip")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Invalid arguments or inputs (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# Built-in defaults; a config file overrides these, explicit flags override both.
DEFAULTS = {
    "simulate": dict(setting=1, n=1000, seed=0),
    "fit": dict(scheme=None, y_cols=None, n_dims=None, x_cols=None, add_intercept=False,
                k=1, r=1000.0, iters=6000, burnin=1000, thin=1, seed=0, chains=1,
                store_u=True, pg_exact_max=20.0),
    "evaluate": dict(data=None, scheme=None, y_cols=None, n_dims=None, x_cols=None,
                     add_intercept=None, truth=None, seed=0, ppl_draws=None, marginal_u=False,
                     level=0.95),
    "replicate": dict(R=10, settings="1", models="GFZIP,GZIP,FZIP", n=1000, k=1,
                      iters=6000, burnin=1000, thin=1, seed=0, jobs=1),
}


def _csv_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gfzip", description="Bayesian factor zero-inflated Poisson model "
                "for multiple grouped count outcomes.")
    p.add_argument("--version", action="version", version=f"gfzip {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="log progress (-vv for debug output)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON file whose keys mirror the long flags "
                        "(dashes or underscores); explicit flags win")
        sp.add_argument("--out", required=False, help="output directory")

    s = sub.add_parser("simulate", help="draw one simulated dataset")
    common(s)
    s.add_argument("--setting", type=int, choices=(1, 2), help="grouping setting (default 1)")
    s.add_argument("--n", type=int, help="number of individuals (default 1000)")
    s.add_argument("--seed", type=int, help="random seed (default 0)")

    f = sub.add_parser("fit", help="run the Gibbs sampler on a grouped dataset")
    common(f)
    f.add_argument("data", nargs="?", help="dataset CSV with a header row")
    f.add_argument("--scheme", help='group thresholds, e.g. "0,1,2,3,6,11,51"')
    f.add_argument("--y-cols", help="comma-separated response columns (names or indices)")
    f.add_argument("--n-dims", type=int,
                   help="number of leading response columns (alternative to --y-cols)")
    f.add_argument("--x-cols", help="comma-separated covariate columns (default: all others)")
    f.add_argument("--add-intercept", action="store_true", default=None,
                   help="prepend a column of ones to the covariates")
    f.add_argument("--k", type=int, help="number of latent factors; 0 fits GZIP (default 1)")
    f.add_argument("--r", type=float, help="negative-binomial size (default 1000)")
    f.add_argument("--iters", type=int, help="total sweeps (default 6000)")
    f.add_argument("--burnin", type=int, help="discarded sweeps (default 1000)")
    f.add_argument("--thin", type=int, help="thinning interval (default 1)")
    f.add_argument("--seed", type=int, help="random seed (default 0)")
    f.add_argument("--chains", type=int, help="independent chains, run in parallel (default 1)")
    f.add_argument("--pg-exact-max", type=float,
                   help="largest Polya-Gamma shape drawn exactly (default 20)")
    f.add_argument("--no-store-u", dest="store_u", action="store_false", default=None,
                   help="do not keep factor-score draws (disables conditional PPL)")

    e = sub.add_parser("evaluate", help="metrics and plot tables for fitted runs")
    common(e)
    e.add_argument("runs", nargs="*", help="one or more fit output directories")
    e.add_argument("--data", help="dataset CSV (default: the one recorded by fit)")
    e.add_argument("--scheme")
    e.add_argument("--y-cols")
    e.add_argument("--n-dims", type=int)
    e.add_argument("--x-cols")
    e.add_argument("--add-intercept", action="store_true", default=None)
    e.add_argument("--truth", help="directory with truth.csv/truth_params.csv from simulate")
    e.add_argument("--seed", type=int, help="seed for predictive simulation (default 0)")
    e.add_argument("--ppl-draws", type=int, help="evaluate PPL on this many evenly spaced draws")
    e.add_argument("--marginal-u", action="store_true", default=None,
                   help="simulate fresh factors for the predictive counts")
    e.add_argument("--level", type=float, help="credible level (default 0.95)")

    r = sub.add_parser("replicate", help="replicated simulation study")
    common(r)
    r.add_argument("--R", type=int, help="replications (default 10)")
    r.add_argument("--settings", help='comma-separated settings (default "1")')
    r.add_argument("--models", help='subset of "GFZIP,GZIP,FZIP"')
    r.add_argument("--n", type=int)
    r.add_argument("--k", type=int)
    r.add_argument("--iters", type=int)
    r.add_argument("--burnin", type=int)
    r.add_argument("--thin", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int, help="worker processes (default 1)")
    return p


def _resolve(args) -> argparse.Namespace:
    """Merge built-in defaults < config file < explicit flags."""
    merged = dict(DEFAULTS[args.command])
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        known = set(merged) | {"out", "data", "runs"}
        for key, val in cfg.items():
            k = key.replace("-", "_")
            if k not in known:
                raise UsageError(f"unknown config key {key!r}")
            merged[k] = val
    for key, val in vars(args).items():
        if val is not None and not (key == "runs" and val == []):
            merged[key] = val
    for key in ("out", "data"):
        merged.setdefault(key, None)
    return argparse.Namespace(**merged)


def _check_positive(name, val, allow_zero=False):
    if val is None or (val < 0 if allow_zero else val < 1):
        raise UsageError(f"--{name.replace('_', '-')} must be "
                         f"{'>= 0' if allow_zero else '>= 1'} (got {val})")


def _require_out(a):
    if not a.out:
        raise UsageError("--out is required")
    return gio.ensure_dir(a.out)


def _scheme(text):
    if text is None:
        raise UsageError("--scheme is required")
    try:
        return GroupingScheme.parse(text) if isinstance(text, str) else GroupingScheme(text)
    except ValueError as exc:
        raise UsageError(f"--scheme: {exc}") from None


# ---------------------------------------------------------------- simulate

def cmd_simulate(a) -> int:
    from .simstudy import generate_dataset

    _check_positive("n", a.n)
    if a.setting not in (1, 2):
        raise UsageError("--setting must be 1 or 2")
    out = _require_out(a)
    conf = {"command": "simulate", "setting": a.setting, "n": a.n, "seed": a.seed}
    man = gio.manifest_line(a.seed, conf)
    data, truth = generate_dataset(a.setting, a.n, a.seed)
    gio.write_dataset(out / "data.csv", data, man)
    gio.write_truth(out, truth, man)
    (out / "scheme.txt").write_text(str(data.scheme) + "\n", encoding="utf-8")
    log.info("wrote %s", out)
    return EXIT_OK


# --------------------------------------------------------------------- fit

def _model_config(a) -> ModelConfig:
    _check_positive("k", a.k, allow_zero=True)
    _check_positive("iters", a.iters)
    _check_positive("thin", a.thin)
    _check_positive("burnin", a.burnin, allow_zero=True)
    if a.burnin >= a.iters:
        raise UsageError("--burnin must be smaller than --iters")
    if (a.iters - a.burnin) % a.thin:
        raise UsageError("(--iters - --burnin) must be a multiple of --thin")
    if not a.r > 0:
        raise UsageError("--r must be positive")
    return ModelConfig(K=a.k, r=float(a.r), n_iter=a.iters, n_burnin=a.burnin,
                       thin=a.thin, seed=a.seed, store_u=bool(a.store_u),
                       pg_exact_max=float(a.pg_exact_max))


def _load_data(a, scheme):
    if not a.data:
        raise UsageError("a dataset CSV is required")
    if not Path(a.data).exists():
        raise UsageError(f"dataset {a.data} not found")
    y_cols = _csv_list(a.y_cols) if a.y_cols else None
    x_cols = _csv_list(a.x_cols) if a.x_cols else None
    if y_cols is None and a.n_dims is None:
        raise UsageError("declare the response columns with --y-cols or --n-dims")
    return gio.read_dataset(a.data, scheme, y_cols=y_cols, n_dims=a.n_dims, x_cols=x_cols,
                            add_intercept=bool(a.add_intercept))


def _chain_job(job):
    from .gibbs import run_chain
    from .rng import RngStream

    data, config, seed, c = job
    t0 = time.perf_counter()
    raw, diag = run_chain(data, config, RngStream(seed, ("chain", c)))
    return raw, {"total_seconds": time.perf_counter() - t0,
                 "mean_sweep_seconds": float(diag.sweep_seconds.mean())}


def _merge_raw(raws):
    from .gibbs import RawDraws

    if len(raws) == 1:
        return raws[0]
    cat = lambda name: (None if getattr(raws[0], name) is None
                        else np.concatenate([getattr(r, name) for r in raws]))
    return RawDraws(beta=cat("beta"), lambda_star=cat("lambda_star"), phi=cat("phi"),
                    u_star=cat("u_star"), z=cat("z"),
                    z_sum=sum(r.z_sum for r in raws), n_draws=sum(r.n_draws for r in raws))


def summary_rows(post, data, level=0.95) -> list[dict]:
    """Posterior mean and central interval of every beta and loading entry."""
    from .postprocess import summarize

    rows = []
    J = data.J
    blocks = [("beta", post.beta, list(data.covariate_names))]
    if post.K:
        blocks.append(("lambda", post.lambda_, [f"factor{k + 1}" for k in range(post.K)]))
    for name, draws, cols in blocks:
        mean, lo, hi = summarize(draws, level)
        for r in range(2 * J):
            for c, label in enumerate(cols):
                rows.append(dict(parameter=name, h=r // J + 1, j=r % J + 1,
                                 dimension=data.labels[r % J], index=c + 1, term=label,
                                 mean=mean[r, c], lower=lo[r, c], upper=hi[r, c],
                                 excludes_zero=int(lo[r, c] > 0 or hi[r, c] < 0)))
    return rows


def at_risk_rows(pi_hat, data) -> list[dict]:
    from .simstudy import at_risk_proportion

    R = at_risk_proportion(pi_hat, data.y)
    zeros = (data.y == 0).sum(axis=0)
    return [dict(j=j + 1, dimension=data.labels[j], R_hat=R[j], n_zero=int(zeros[j]))
            for j in range(data.J)]


def cmd_fit(a) -> int:
    from .postprocess import identify

    scheme = _scheme(a.scheme)
    config = _model_config(a)
    _check_positive("chains", a.chains)
    data = _load_data(a, scheme)
    out = _require_out(a)
    run_conf = {"command": "fit", "data": str(Path(a.data).resolve()), "scheme": str(scheme),
                "y_cols": a.y_cols, "n_dims": a.n_dims, "x_cols": a.x_cols,
                "add_intercept": bool(a.add_intercept), "chains": a.chains,
                "model": config.to_dict()}
    man = gio.manifest_line(a.seed, run_conf)
    jobs = [(data, config, a.seed, c) for c in range(a.chains)]
    if a.chains > 1:
        with ProcessPoolExecutor(max_workers=a.chains) as pool:
            results = list(pool.map(_chain_job, jobs))
    else:
        results = [_chain_job(jobs[0])]
    raws = [r for r, _ in results]
    if a.chains > 1:
        for c, (raw, t) in enumerate(results):
            gio.save_raw_draws(out / f"chain_{c + 1}", raw, config, a.seed, t, man)
    raw = _merge_raw(raws)
    timings = {"chains": [t for _, t in results]}
    gio.save_raw_draws(out, raw, config, a.seed, timings, man)
    post = identify(raw)
    gio.save_aligned(out, post, man)
    gio.write_table(out / "summaries.csv", summary_rows(post, data), man)
    gio.write_matrix(out / "pi_hat.csv", post.pi_hat, list(data.labels), man)
    gio.write_table(out / "at_risk.csv", at_risk_rows(post.pi_hat, data), man)
    with open(out / "run.json", "w", encoding="utf-8") as fh:
        json.dump(run_conf, fh, indent=2, sort_keys=True, default=gio._jsonable)
        fh.write("\n")
    log.info("fit written to %s", out)
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

def ci_excludes_zero(lower, upper):
    """True where a credible interval lies entirely on one side of zero."""
    lower, upper = np.asarray(lower), np.asarray(upper)
    return (lower > 0) | (upper < 0)


def outer_rows(ll, labels, name="LL'") -> list[dict]:
    """Long-format Lambda Lambda' matrix: one row per (h, j, h', j') cell."""
    J = len(labels)
    rows = []
    for a in range(2 * J):
        for b in range(2 * J):
            rows.append(dict(matrix=name, h=a // J + 1, j=a % J + 1, h2=b // J + 1,
                             j2=b % J + 1, row=labels[a % J], col=labels[b % J],
                             value=ll[a, b]))
    return rows


def _run_data(a, run_dir):
    with open(Path(run_dir) / "run.json", encoding="utf-8") as fh:
        rc = json.load(fh)
    ns = argparse.Namespace(
        data=a.data or rc["data"],
        y_cols=a.y_cols if a.data else rc["y_cols"],
        n_dims=a.n_dims if a.data else rc["n_dims"],
        x_cols=a.x_cols if a.data else rc["x_cols"],
        add_intercept=a.add_intercept if a.add_intercept is not None else rc["add_intercept"])
    return _load_data(ns, _scheme(a.scheme or rc["scheme"])), rc


def cmd_evaluate(a) -> int:
    from .evaluate import ppl_components
    from .postprocess import outer_mean, summarize
    from .simstudy import bias_rmse, classification_rates

    runs = a.runs if isinstance(a.runs, list) else [a.runs]
    if not runs:
        raise UsageError("give at least one fit directory")
    for run in runs:
        if not (Path(run) / "manifest.json").exists() or not (Path(run) / "run.json").exists():
            raise UsageError(f"{run} is not a fit output directory")
    if a.truth and not (Path(a.truth) / "truth.csv").exists():
        raise UsageError(f"truth files not found in {a.truth}")
    out = _require_out(a)
    truth = gio.read_truth(a.truth) if a.truth else None
    conf = {"command": "evaluate", "runs": [str(Path(r).resolve()) for r in runs],
            "truth": a.truth, "seed": a.seed, "ppl_draws": a.ppl_draws,
            "marginal_u": bool(a.marginal_u)}
    man = gio.manifest_line(a.seed, conf)

    ppl_rows, rate_rows, risk_rows, coef_rows, ll_rows, err_rows, box_rows = ([] for _ in
                                                                              range(7))
    for run in runs:
        post, info = gio.load_aligned(run)
        data, _ = _run_data(a, run)
        if data.N != post.pi_hat.shape[0] or data.J != post.J:
            raise UsageError(f"dataset does not match the draws in {run}")
        label = Path(run).name
        K = post.K
        marginal = bool(a.marginal_u) or (K > 0 and post.u is None)
        total, var_t, fit_t = ppl_components(post, data, rng=a.seed, marginal_u=marginal,
                                             max_draws=a.ppl_draws)
        ppl_rows.append(dict(model=label, K=K, PPL=total, variance_term=var_t,
                             fit_term=fit_t, n_draws=post.n_draws,
                             predictive="marginal" if marginal else "conditional"))
        for row in at_risk_rows(post.pi_hat, data):
            risk_rows.append(dict(model=label, **row))
        for row in summary_rows(post, data, a.level):
            coef_rows.append(dict(model=label, **row))
        ll = outer_mean(post.lambda_) if K else np.zeros((2 * data.J, 2 * data.J))
        for row in outer_rows(ll, list(data.labels)):
            ll_rows.append(dict(model=label, **row))
        if truth is None:
            continue
        if truth.z.shape != data.y.shape:
            raise UsageError("truth does not match the dataset dimensions")
        rates = classification_rates(post.pi_hat, data.y, truth.z)
        true_R = truth.true_at_risk_given_zero(data.y)
        for j in range(data.J):
            rate_rows.append(dict(model=label, j=j + 1, dimension=data.labels[j],
                                  **{k: v[j] for k, v in rates.items()},
                                  R_true=true_R[j]))
        bmean = summarize(post.beta, a.level)[0]
        bias, rmse = bias_rmse(bmean[None], truth.beta)
        for r in range(2 * data.J):
            for p in range(data.P):
                err_rows.append(dict(model=label, parameter="beta", h=r // data.J + 1,
                                     j=r % data.J + 1, index=p + 1, bias=bias[r, p],
                                     rmse=rmse[r, p]))
        ll_true = truth.loadings @ truth.loadings.T
        lb, lr = bias_rmse(ll[None], ll_true)
        iu = np.triu_indices(2 * data.J)
        for a_, b_ in zip(*iu):
            err_rows.append(dict(model=label, parameter="LL'", h=a_ + 1, j=b_ + 1, index="",
                                 bias=lb[a_, b_], rmse=lr[a_, b_]))
        for stat, v in (("bias", lb[iu]), ("rmse", lr[iu])):
            q = np.percentile(v, [0, 25, 50, 75, 100])
            box_rows.append(dict(model=label, statistic=stat, min=q[0], q1=q[1],
                                 median=q[2], q3=q[3], max=q[4]))

    gio.write_table(out / "ppl.csv", ppl_rows, man)
    gio.write_table(out / "at_risk.csv", risk_rows, man)
    gio.write_table(out / "coefficients.csv", coef_rows, man)
    gio.write_table(out / "lambda_outer.csv", ll_rows, man)
    if truth is not None:
        gio.write_table(out / "classification_rates.csv", rate_rows, man)
        gio.write_table(out / "bias_rmse.csv", err_rows, man)
        gio.write_table(out / "lambda_outer_boxplot.csv", box_rows, man)
    log.info("metrics written to %s", out)
    return EXIT_OK


# --------------------------------------------------------------- replicate

def cmd_replicate(a) -> int:
    from .simstudy import MODELS, run_replications

    _check_positive("R", a.R)
    _check_positive("n", a.n)
    _check_positive("jobs", a.jobs)
    try:
        settings = [int(s) for s in _csv_list(a.settings)]
    except ValueError:
        raise UsageError("--settings must be a comma-separated list of 1 and 2") from None
    if not settings or any(s not in (1, 2) for s in settings):
        raise UsageError("--settings must be a comma-separated list of 1 and 2")
    models = _csv_list(a.models)
    bad = [m for m in models if m not in MODELS]
    if bad or not models:
        raise UsageError(f"unknown models {bad}; choose from {','.join(MODELS)}")
    a.r, a.store_u, a.pg_exact_max = 1000.0, False, 20.0
    config = _model_config(a)
    out = _require_out(a)
    conf = {"command": "replicate", "R": a.R, "settings": settings, "models": models,
            "n": a.n, "model": config.to_dict()}
    man = gio.manifest_line(a.seed, conf)
    res = run_replications(a.R, settings, models, config, a.seed, n=a.n, n_jobs=a.jobs,
                           out_dir=out, manifest=man)
    if res.failures:
        log.warning("%d replication(s) failed and were excluded", len(res.failures))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate,
            "replicate": cmd_replicate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)
                            [min(args.verbose, 2)],
                            format="%(levelname)s %(name)s: %(message)s")
        resolved = _resolve(args)
        return COMMANDS[args.command](resolved)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (gio.DataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # runtime failure: chain errors, I/O, ...
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
