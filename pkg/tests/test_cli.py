import json
import subprocess
import sys

import numpy as np
import pytest

from gfzip.cli import _resolve, build_parser, ci_excludes_zero, main
from gfzip.io import read_matrix, read_table

FAST = ["--iters", "30", "--burnin", "10"]


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file()}


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--setting", "1", "--n", "60", "--seed", "7",
                 "--out", str(out)]) == 0
    return out


def _fit(sim_dir, out, *extra):
    return main(["fit", str(sim_dir / "data.csv"), "--n-dims", "10",
                 "--scheme", "0,1,2,3,6,11,51", "--seed", "3", "--out", str(out),
                 *FAST, *extra])


def test_simulate_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["simulate", "--setting", "1", "--n", "100", "--seed", "7",
                     "--out", str(d)]) == 0
    fa, fb = _files(a), _files(b)
    assert fa == fb
    assert {"data.csv", "truth.csv", "truth_params.csv", "scheme.txt"} <= set(fa)
    assert fa["scheme.txt"] == b"0,1,2,3,6,11,51\n"
    assert fa["data.csv"].startswith(b"# gfzip ")


def test_simulate_setting2_scheme(tmp_path):
    assert main(["simulate", "--setting", "2", "--n", "5", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "scheme.txt").read_text().strip() == \
        "0,1,2,3,4,5,6,7,8,9,10,11,16,21,26,31,41,51"


@pytest.mark.parametrize("argv", [
    ["simulate", "--n", "0", "--out", "X"],
    ["simulate", "--setting", "3", "--out", "X"],
    ["simulate", "--n", "10"],
    ["fit", "--scheme", "0,1", "--out", "X"],
    ["nonsense"],
])
def test_usage_errors_exit_1(argv, tmp_path, capsys):
    argv = [str(tmp_path / a) if a == "X" else a for a in argv]
    assert main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_fit_k0_and_summary_schema(sim_dir, tmp_path):
    out = tmp_path / "gzip"
    assert _fit(sim_dir, out, "--k", "0") == 0
    rows = read_table(out / "summaries.csv")
    assert {r["parameter"] for r in rows} == {"beta"}
    assert len(rows) == 2 * 10 * 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["K"] == 0


def test_fit_outputs_and_rerun_identical(sim_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _fit(sim_dir, a, "--k", "1") == 0
    assert _fit(sim_dir, b, "--k", "1") == 0
    assert (a / "summaries.csv").read_bytes() == (b / "summaries.csv").read_bytes()
    rows = read_table(a / "summaries.csv")
    lam = [r for r in rows if r["parameter"] == "lambda"]
    assert sorted((r["h"], r["j"], r["index"]) for r in lam) == \
        [(h, j, 1) for h in (1, 2) for j in range(1, 11)]
    for r in lam:
        assert r["lower"] <= r["mean"] <= r["upper"]
    header, pi = read_matrix(a / "pi_hat.csv")
    assert pi.shape == (60, 10) and np.all((pi >= 0) & (pi <= 1))
    assert len(read_table(a / "at_risk.csv")) == 10
    for name in ("beta.csv", "lambda_star.csv", "phi.csv", "lambda.csv", "run.json"):
        assert (a / name).exists()


def test_fit_two_chains_layout(sim_dir, tmp_path):
    out = tmp_path / "two"
    assert _fit(sim_dir, out, "--chains", "2", "--no-store-u") == 0
    _, b1 = read_matrix(out / "chain_1" / "beta.csv")
    _, b2 = read_matrix(out / "chain_2" / "beta.csv")
    _, b = read_matrix(out / "beta.csv")
    np.testing.assert_array_equal(b, np.vstack([b1, b2]))
    assert not np.array_equal(b1, b2)


def test_fit_reports_malformed_line(tmp_path, capsys):
    p = tmp_path / "d.csv"
    p.write_text("y1,x\n0,1.0\n9,0.5\n")
    code = main(["fit", str(p), "--n-dims", "1", "--scheme", "0,1,3", "--out",
                 str(tmp_path / "o"), *FAST])
    assert code == 1
    assert "d.csv:3" in capsys.readouterr().err


def test_evaluate_with_and_without_truth(sim_dir, tmp_path):
    run = tmp_path / "run"
    assert _fit(sim_dir, run, "--k", "1") == 0
    plain = tmp_path / "plain"
    assert main(["evaluate", str(run), "--out", str(plain), "--ppl-draws", "5"]) == 0
    names = {p.name for p in plain.iterdir()}
    assert {"ppl.csv", "at_risk.csv", "coefficients.csv", "lambda_outer.csv"} <= names
    assert not {"bias_rmse.csv", "classification_rates.csv"} & names
    ppl = read_table(plain / "ppl.csv")
    assert len(ppl) == 1 and ppl[0]["PPL"] == pytest.approx(
        ppl[0]["variance_term"] + ppl[0]["fit_term"])
    ll = read_table(plain / "lambda_outer.csv")
    M = np.zeros((20, 20))
    for r in ll:
        M[(r["h"] - 1) * 10 + r["j"] - 1, (r["h2"] - 1) * 10 + r["j2"] - 1] = r["value"]
    np.testing.assert_array_equal(M, M.T)

    full = tmp_path / "full"
    assert main(["evaluate", str(run), "--truth", str(sim_dir), "--out", str(full),
                 "--ppl-draws", "5"]) == 0
    names = {p.name for p in full.iterdir()}
    assert {"bias_rmse.csv", "classification_rates.csv", "lambda_outer_boxplot.csv"} <= names
    assert main(["evaluate", str(tmp_path / "nope"), "--out", str(full)]) == 1


def test_ci_excludes_zero():
    assert ci_excludes_zero(-0.2, -0.1)
    assert not ci_excludes_zero(-0.1, 0.2)
    np.testing.assert_array_equal(ci_excludes_zero([0.1, -1, 0], [0.3, 1, 1]),
                                  [True, False, False])


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"iters": 50, "burnin": 5, "seed": 4}))
    p = build_parser()
    a = _resolve(p.parse_args(["fit", "d.csv", "--config", str(cfg), "--seed", "9"]))
    assert (a.iters, a.burnin, a.seed, a.thin) == (50, 5, 9, 1)
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["fit", "d.csv", "--config", str(cfg)]) == 1


def test_runtime_error_exits_2(sim_dir, tmp_path, monkeypatch):
    import gfzip.gibbs as gibbs

    def boom(*args, **kwargs):
        raise RuntimeError("chain exploded")

    monkeypatch.setattr(gibbs, "run_chain", boom)
    assert _fit(sim_dir, tmp_path / "o") == 2


def test_replicate_smoke(tmp_path):
    out = tmp_path / "rep"
    assert main(["replicate", "--R", "1", "--models", "GZIP", "--n", "40", "--k", "0",
                 *FAST, "--out", str(out)]) == 0
    assert (out / "beta_bias_rmse.csv").exists()
    assert main(["replicate", "--models", "ZIP", "--out", str(out)]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "gfzip", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "fit", "evaluate", "replicate"):
        assert cmd in res.stdout


def _schema_columns():
    from importlib.resources import files

    schema = json.loads(files("gfzip").joinpath("schemas/results_schema.json").read_text())
    return {name: t["columns"] for name, t in schema["tables"].items()}


def _header(path):
    with open(path) as fh:
        fh.readline()
        return fh.readline().strip().split(",")


def test_written_tables_match_schema(sim_dir, tmp_path):
    cols = _schema_columns()
    run = tmp_path / "run"
    assert _fit(sim_dir, run, "--k", "1") == 0
    ev = tmp_path / "ev"
    assert main(["evaluate", str(run), "--truth", str(sim_dir), "--out", str(ev),
                 "--ppl-draws", "3"]) == 0
    rep = tmp_path / "rep"
    assert main(["replicate", "--R", "1", "--models", "GFZIP", "--n", "40", *FAST,
                 "--out", str(rep)]) == 0
    seen = 0
    for d, producer in ((run, "fit"), (ev, "evaluate"), (rep, "replicate")):
        for p in d.glob("*.csv"):
            if p.name not in cols:
                continue
            header = _header(p)
            assert set(header) <= set(cols[p.name]), (producer, p.name, header)
            required = [c for c, note in cols[p.name].items()
                        if not note.startswith(("evaluate only", "replicate only"))]
            assert set(required) <= set(header), (producer, p.name, header)
            seen += 1
    assert seen >= 12
