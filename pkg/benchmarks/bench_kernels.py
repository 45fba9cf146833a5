"""Time the compiled propagation kernels against the numpy versions.

Run ``python3 benchmarks/bench_kernels.py [--n 750] [--queries 200]``.
"""
import argparse
import timeit

import numpy as np

from twotiergp import _kernels_py

try:
    from twotiergp import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _cases(n, queries, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-3, 3, n)
    W = rng.normal(size=(n, n))
    W = W + W.T
    cx = rng.uniform(size=n)
    Z = np.ascontiguousarray(z[:, None])
    nus = rng.uniform(-3, 3, queries)
    ts = rng.uniform(0.01, 1.0, queries)
    return {
        "ctilde_batch": lambda mod, fam: mod.ctilde_batch(z, nus, ts, 1.0, fam),
        "ctilde_matrix": lambda mod, fam: mod.ctilde_matrix(z, 0.2, 0.4, 1.0, fam),
        "weighted_pair_sum": lambda mod, fam: mod.weighted_pair_sum(
            W, cx, Z, np.array([0.2]), np.array([0.4]), np.array([1.0]), fam),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=750, help="training rows")
    p.add_argument("--queries", type=int, default=200, help="query points for ctilde_batch")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1

    print(f"N={args.n}, queries={args.queries}; best of {args.repeat} (ms)")
    print(f"{'kernel':20}{'family':>8}{'numpy':>12}{'cython':>12}{'speedup':>10}")
    for name, fn in _cases(args.n, args.queries).items():
        for fam, label in ((0, "exp"), (1, "sqexp")):
            np.testing.assert_allclose(fn(_ckernels, fam), fn(_kernels_py, fam), rtol=1e-10)
            t_py = min(timeit.repeat(lambda: fn(_kernels_py, fam), number=1, repeat=args.repeat)) * 1e3
            t_c = min(timeit.repeat(lambda: fn(_ckernels, fam), number=1, repeat=args.repeat)) * 1e3
            print(f"{name:20}{label:>8}{t_py:12.2f}{t_c:12.2f}{t_py / t_c:9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
