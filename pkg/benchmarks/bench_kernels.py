"""Compare the compiled and pure-numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--n 10000]

Times Polya-Gamma draws at the shapes the sampler uses (b = 1 for the
logistic part, b = r + y* above the exact threshold for the count part),
interval-truncated negative-binomial draws, and a full Gibbs sweep at the
simulation-study size.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from gfzip import _backend
from gfzip.distributions import sample_pg, sample_trunc_nb
from gfzip.gibbs import init_state, sweep
from gfzip.model import ModelConfig
from gfzip.rng import RngStream
from gfzip.simstudy import generate_dataset


def cases(n):
    gen = np.random.default_rng(0)
    c = gen.normal(0, 2, n)
    b_small = np.ones(n)
    b_mid = gen.integers(1, 8, n).astype(float)
    b_large = 1000.0 + gen.poisson(2, n)
    psi = gen.normal(0, 1, n) - np.log(1000.0)
    lo = gen.choice([0, 1, 2, 3, 6, 11, 51], n)
    hi = np.select([lo == 0, lo == 1, lo == 2, lo == 3, lo == 6, lo == 11], [1, 2, 3, 6, 11, 51], -1)
    keep = lo > 0
    data, _ = generate_dataset(1, 1000, 0)
    cfg = ModelConfig(K=1).resolved(data.P)

    def sweep_case():
        rng = RngStream(1)
        state = init_state(data, cfg, rng)
        return lambda: sweep(state, data, cfg, rng, 0)

    return {
        "pg b=1": lambda rng: sample_pg(b_small, c, rng),
        "pg b in 1..7": lambda rng: sample_pg(b_mid, c, rng),
        "pg b~1000 (normal)": lambda rng: sample_pg(b_large, c, rng),
        "trunc nb": lambda rng: sample_trunc_nb(1000.0, psi[keep], lo[keep], hi[keep], rng),
        "gibbs sweep N=1000": sweep_case,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=10000, help="batch size for kernel cases")
    a = ap.parse_args(argv)
    backends = _backend.available()
    print(f"{'case':<22}" + "".join(f"{b:>14}" for b in backends) + "     speed-up")
    for name, make in cases(a.n).items():
        best = {}
        for b in backends:
            with _backend.use_backend(b):
                if name.startswith("gibbs"):
                    fn = make()
                else:
                    rng = RngStream(0)
                    fn = lambda: make(rng)  # noqa: E731
                fn()  # warm-up
                best[b] = min(timeit.repeat(fn, number=1, repeat=a.repeat))
        line = f"{name:<22}" + "".join(f"{best[b] * 1e3:>12.2f}ms" for b in backends)
        if "cython" in best:
            line += f"  {best['python'] / best['cython']:>8.1f}x"
        print(line)


if __name__ == "__main__":
    main()
