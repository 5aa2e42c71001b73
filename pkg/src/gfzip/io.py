"""CSV persistence for datasets, draws and result tables.

Every file starts with one ``#`` manifest line (package version, seed and a
hash of the run configuration).  Floats are written with 17 significant
digits so that a write/read round trip is lossless; missing values are empty
cells.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

from . import __version__
from .gibbs import RawDraws
from .model import GroupedDataset, GroupingScheme

__all__ = [
    "DataError",
    "config_hash",
    "manifest_line",
    "fmt",
    "write_table",
    "read_table",
    "write_matrix",
    "read_matrix",
    "read_dataset",
    "write_dataset",
    "write_truth",
    "read_truth",
    "save_raw_draws",
    "load_raw_draws",
    "save_aligned",
    "load_aligned",
]


class DataError(ValueError):
    """Malformed input file; ``line`` is the 1-based line number when known."""

    def __init__(self, message, path=None, line=None):
        where = "" if path is None else f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def config_hash(config) -> str:
    """Short stable hash of a configuration mapping."""
    if hasattr(config, "to_dict"):
        config = config.to_dict()
    text = json.dumps(config, sort_keys=True, default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def manifest_line(seed=None, config=None) -> str:
    return (f"# gfzip {__version__} seed={'' if seed is None else seed} "
            f"config={config_hash(config or {})}")


def fmt(v) -> str:
    """Format one cell: ints verbatim, floats at 17 significant digits, NaN empty."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else "%.17g" % v
    return str(v)


def _open_write(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="", encoding="utf-8")


def _data_lines(fh):
    """Yield (line_number, row) skipping '#' manifest/comment lines."""
    for n, row in enumerate(csv.reader(fh), start=1):
        if row and row[0].startswith("#"):
            continue
        yield n, row


def write_table(path, rows: list[dict], manifest: str = "") -> str:
    """Write a list of dicts (common keys, insertion order) as CSV."""
    with _open_write(path) as fh:
        fh.write((manifest or manifest_line()) + "\n")
        if not rows:
            return str(path)
        cols = list(rows[0])
        for r in rows[1:]:
            cols += [c for c in r if c not in cols]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([fmt(r.get(c)) for c in cols])
    return str(path)


def _parse_cell(s):
    if s == "":
        return math.nan
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_table(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = _data_lines(fh)
        try:
            _, header = next(lines)
        except StopIteration:
            return []
        return [dict(zip(header, map(_parse_cell, row))) for _, row in lines]


def write_matrix(path, arr, header, manifest: str = "") -> str:
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise ValueError("matrix shape does not match header")
    integer = np.issubdtype(arr.dtype, np.integer)
    with _open_write(path) as fh:
        fh.write((manifest or manifest_line()) + "\n")
        fh.write(",".join(header) + "\n")
        for row in arr:
            if integer:
                fh.write(",".join(str(int(v)) for v in row) + "\n")
            else:
                fh.write(",".join(fmt(float(v)) for v in row) + "\n")
    return str(path)


def read_matrix(path, dtype=float):
    """Return ``(header, array)``; an empty body gives a ``0 x C`` array."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = _data_lines(fh)
        _, header = next(lines)
        rows = []
        for n, row in lines:
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", path, n)
            rows.append(row)
    if not rows:
        return header, np.empty((0, len(header)), dtype=dtype)
    return header, np.array(rows, dtype=float).astype(dtype)


# ---------------------------------------------------------------- datasets

def _resolve_cols(spec, header, what):
    out = []
    for c in spec:
        if c in header:
            out.append(header.index(c))
        elif str(c).isdigit() and int(c) < len(header):
            out.append(int(c))
        else:
            raise DataError(f"{what} column {c!r} not in header {header}")
    return out


def read_dataset(path, scheme: GroupingScheme, y_cols=None, n_dims=None, x_cols=None,
                 add_intercept: bool = False) -> GroupedDataset:
    """Read a grouped dataset CSV.

    Columns are mapped either by name/index lists (``y_cols``, ``x_cols``) or
    positionally: the first ``n_dims`` columns are group indices and the rest
    covariates.  Errors carry the offending line number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        lines = _data_lines(fh)
        try:
            _, header = next(lines)
        except StopIteration:
            raise DataError("file is empty", path) from None
        header = [h.strip() for h in header]
        if y_cols is None:
            if n_dims is None:
                raise DataError("declare the response columns (y_cols or n_dims)", path)
            if not 1 <= n_dims < len(header) + (1 if add_intercept else 0):
                raise DataError(f"n_dims={n_dims} incompatible with {len(header)} columns",
                                path)
            yi = list(range(n_dims))
        else:
            yi = _resolve_cols(y_cols, header, "response")
        if x_cols is None:
            xi = [k for k in range(len(header)) if k not in yi]
        else:
            xi = _resolve_cols(x_cols, header, "covariate")
        ys, xs = [], []
        for n, row in lines:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", path, n)
            yrow = []
            for k in yi:
                cell = row[k].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"group index {cell!r} in column {header[k]!r} is not "
                                    "an integer", path, n) from None
                if not v.is_integer():
                    raise DataError(f"group index {cell!r} in column {header[k]!r} is not "
                                    "an integer", path, n)
                if not 0 <= v < scheme.G:
                    raise DataError(f"group index {int(v)} in column {header[k]!r} outside "
                                    f"0..{scheme.G - 1}", path, n)
                yrow.append(int(v))
            xrow = []
            for k in xi:
                try:
                    xrow.append(float(row[k]))
                except ValueError:
                    raise DataError(f"covariate {row[k]!r} in column {header[k]!r} is not "
                                    "numeric", path, n) from None
            ys.append(yrow)
            xs.append(xrow)
    if not ys:
        raise DataError("no data rows", path)
    x = np.array(xs, dtype=float).reshape(len(xs), len(xi))
    names = [header[k] for k in xi]
    if add_intercept:
        x = np.column_stack([np.ones(len(xs)), x])
        names = ["const"] + names
    if x.shape[1] == 0:
        raise DataError("no covariate columns (use add_intercept)", path)
    return GroupedDataset(y=np.array(ys, dtype=np.int64), x=x, scheme=scheme,
                          labels=[header[k] for k in yi], covariate_names=names)


def write_dataset(path, data: GroupedDataset, manifest: str = "") -> str:
    with _open_write(path) as fh:
        fh.write((manifest or manifest_line()) + "\n")
        fh.write(",".join(list(data.labels) + list(data.covariate_names)) + "\n")
        for yrow, xrow in zip(data.y, data.x):
            fh.write(",".join([str(int(v)) for v in yrow] + [fmt(float(v)) for v in xrow])
                     + "\n")
    return str(path)


def write_truth(out_dir, truth, manifest: str = "") -> list[str]:
    """``truth.csv`` (per individual: u, z_j, y*_j) and ``truth_params.csv``."""
    out_dir = Path(out_dir)
    J = truth.z.shape[1]
    header = ["u"] + [f"z{j + 1}" for j in range(J)] + [f"ystar{j + 1}" for j in range(J)]
    with _open_write(out_dir / "truth.csv") as fh:
        fh.write((manifest or manifest_line()) + "\n")
        fh.write(",".join(header) + "\n")
        for u, z, ys in zip(truth.u, truth.z, truth.y_star):
            fh.write(",".join([fmt(float(u))] + [str(int(v)) for v in z]
                              + [str(int(v)) for v in ys]) + "\n")
    rows = []
    for r in range(2 * J):
        for p in range(truth.beta.shape[1]):
            rows.append(dict(parameter="beta", h=r // J + 1, j=r % J + 1, index=p + 1,
                             value=float(truth.beta[r, p])))
    for h, lam in ((1, truth.lambda1), (2, truth.lambda2)):
        for j in range(J):
            rows.append(dict(parameter="lambda", h=h, j=j + 1, index=1,
                             value=float(lam[j])))
    rows.append(dict(parameter="setting", h="", j="", index="", value=truth.setting))
    write_table(out_dir / "truth_params.csv", rows, manifest)
    return [str(out_dir / "truth.csv"), str(out_dir / "truth_params.csv")]


def read_truth(out_dir):
    """Inverse of :func:`write_truth`."""
    from .simstudy import SimTruth

    out_dir = Path(out_dir)
    header, arr = read_matrix(out_dir / "truth.csv")
    J = (len(header) - 1) // 2
    rows = read_table(out_dir / "truth_params.csv")
    betas = [r for r in rows if r["parameter"] == "beta"]
    P = max(r["index"] for r in betas)
    beta = np.zeros((2 * J, P))
    lam = np.zeros((2, J))
    setting = 0
    for r in rows:
        if r["parameter"] == "beta":
            beta[(r["h"] - 1) * J + r["j"] - 1, r["index"] - 1] = r["value"]
        elif r["parameter"] == "lambda":
            lam[r["h"] - 1, r["j"] - 1] = r["value"]
        elif r["parameter"] == "setting":
            setting = int(r["value"])
    return SimTruth(beta=beta, lambda1=lam[0], lambda2=lam[1], u=arr[:, 0],
                    z=arr[:, 1:J + 1].astype(np.int64),
                    y_star=arr[:, J + 1:].astype(np.int64), setting=setting)


# ------------------------------------------------------------------- draws

def _row_labels(J):
    return [(h, j) for h in (1, 2) for j in range(1, J + 1)]


def beta_header(J, P):
    return [f"beta_h{h}_j{j}_p{p}" for h, j in _row_labels(J) for p in range(1, P + 1)]


def loading_header(J, K, name="lambda"):
    return [f"{name}_h{h}_j{j}_k{k}" for h, j in _row_labels(J) for k in range(1, K + 1)]


def _flat(a):
    return a.reshape(a.shape[0], -1)


def save_raw_draws(out_dir, raw: RawDraws, config, seed=None, timings=None,
                   manifest: str = "") -> list[str]:
    """One CSV per parameter group (row = retained iteration) plus ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    M, J2, P = raw.beta.shape
    J, K = J2 // 2, raw.K
    paths = [write_matrix(out_dir / "beta.csv", _flat(raw.beta), beta_header(J, P), manifest)]
    paths.append(write_matrix(out_dir / "lambda_star.csv", _flat(raw.lambda_star),
                              loading_header(J, K, "lambda_star"), manifest))
    paths.append(write_matrix(out_dir / "phi.csv", raw.phi,
                              [f"phi_k{k + 1}" for k in range(K)], manifest))
    N = raw.z_sum.shape[0]
    if raw.u_star is not None:
        paths.append(write_matrix(out_dir / "u_star.csv", _flat(raw.u_star),
                                  [f"u_star_i{i + 1}_k{k + 1}" for i in range(N)
                                   for k in range(K)], manifest))
    paths.append(write_matrix(out_dir / "z_sum.csv", raw.z_sum,
                              [f"j{j + 1}" for j in range(J)], manifest))
    cfg = config.to_dict() if hasattr(config, "to_dict") else dict(config)
    info = {
        "version": __version__,
        "seed": seed,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "n_draws": int(raw.n_draws),
        "N": int(N), "J": int(J), "P": int(P), "K": int(K),
        "timings": timings or {},
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    paths.append(str(out_dir / "manifest.json"))
    return paths


def load_raw_draws(out_dir) -> tuple[RawDraws, dict]:
    out_dir = Path(out_dir)
    if not (out_dir / "manifest.json").exists():
        raise FileNotFoundError(f"{out_dir} is not a draws directory (no manifest.json)")
    with open(out_dir / "manifest.json", encoding="utf-8") as fh:
        info = json.load(fh)
    N, J, P, K = info["N"], info["J"], info["P"], info["K"]
    _, beta = read_matrix(out_dir / "beta.csv")
    M = beta.shape[0]
    _, lam = read_matrix(out_dir / "lambda_star.csv")
    _, phi = read_matrix(out_dir / "phi.csv")
    u = None
    if (out_dir / "u_star.csv").exists():
        u = read_matrix(out_dir / "u_star.csv")[1].reshape(M, N, K)
    _, z_sum = read_matrix(out_dir / "z_sum.csv")
    raw = RawDraws(beta=beta.reshape(M, 2 * J, P), lambda_star=lam.reshape(M, 2 * J, K),
                   phi=phi.reshape(M, K), u_star=u, z=None, z_sum=z_sum,
                   n_draws=info["n_draws"])
    return raw, info


def save_aligned(out_dir, post, manifest: str = "") -> list[str]:
    """Aligned ``lambda.csv``/``u.csv`` and the transform log ``alignment.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    M, J2, K = post.lambda_.shape
    paths = [write_matrix(out_dir / "lambda.csv", _flat(post.lambda_),
                          loading_header(J2 // 2, K), manifest)]
    if post.u is not None and K:
        N = post.u.shape[1]
        paths.append(write_matrix(out_dir / "u.csv", _flat(post.u),
                                  [f"u_i{i + 1}_k{k + 1}" for i in range(N)
                                   for k in range(K)], manifest))
    report = post.report.to_dict() if post.report is not None else {"identity": True}
    with open(out_dir / "alignment.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True)
        fh.write("\n")
    paths.append(str(out_dir / "alignment.json"))
    return paths


def load_aligned(out_dir):
    """Return identified draws of a fitted run directory."""
    from .postprocess import PosteriorDraws

    out_dir = Path(out_dir)
    raw, info = load_raw_draws(out_dir)
    M, J2, K = raw.lambda_star.shape
    lam = raw.lambda_star
    u = raw.u_star
    if K and (out_dir / "lambda.csv").exists():
        lam = read_matrix(out_dir / "lambda.csv")[1].reshape(M, J2, K)
        if (out_dir / "u.csv").exists():
            u = read_matrix(out_dir / "u.csv")[1].reshape(M, -1, K)
    post = PosteriorDraws(beta=raw.beta, lambda_=lam, u=u, phi=raw.phi,
                          lambda_star=raw.lambda_star, u_star=raw.u_star,
                          pi_hat=raw.pi_hat, n_draws=raw.n_draws)
    return post, info


def ensure_dir(path) -> Path:
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise NotADirectoryError(f"{p} exists and is not a directory")
    os.makedirs(p, exist_ok=True)
    return p
