"""Compare the compiled and numpy quadrature kernels.

    python benchmarks/bench_agq.py [--groups 50 100 400] [--repeat 20]

Times one marginal-likelihood evaluation (the inner loop of a GLMM fit) and
one full binomial fit per backend, and checks that both agree.
"""
import argparse
import time

import numpy as np
from scipy.special import roots_hermite

from curvebic import kernels
from curvebic.core import Dataset, Family, GroupedDataset, ModelSpec
from curvebic.fitters import fit_glmm


def make_problem(groups, per_group, q, rng):
    n = groups * per_group
    starts = np.arange(0, n + 1, per_group, dtype=np.int64)
    x = rng.normal(size=n)
    Z = np.column_stack([np.ones(n), x])[:, :q]
    L = np.diag([0.8, 0.4][:q])
    b = rng.normal(size=(groups, q)) @ L.T
    eta = -0.3 + 0.7 * x
    lin = eta + np.sum(Z * np.repeat(b, per_group, axis=0), axis=1)
    y = (rng.random(n) < 1 / (1 + np.exp(-lin))).astype(float)
    return eta, y, np.ascontiguousarray(Z @ L), starts, x


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--groups", type=int, nargs="+", default=[50, 200, 800])
    ap.add_argument("--per-group", type=int, default=10)
    ap.add_argument("--nagq", type=int, default=7)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    nodes, weights = roots_hermite(args.nagq)
    logw = np.log(weights)
    rng = np.random.default_rng(args.seed)

    print(f"{'q':>2} {'groups':>7} " + " ".join(f"{b + ' ms':>12}" for b in backends)
          + f" {'speedup':>8} {'max |diff|':>11}")
    for q in (1, 2):
        for g in args.groups:
            eta, y, w, starts, _ = make_problem(g, args.per_group, q, rng)
            res, times = {}, {}
            for b in backends:
                modes = np.zeros((g, q))
                res[b] = kernels.agq_loglik(eta, y, w, starts, kernels.BINOMIAL, nodes, logw,
                                            modes, backend=b)
                times[b] = best_of(lambda: kernels.agq_loglik(
                    eta, y, w, starts, kernels.BINOMIAL, nodes, logw, np.zeros((g, q)),
                    backend=b), args.repeat)
            diff = max(float(np.max(np.abs(res[b] - res["python"]))) for b in backends)
            speed = times["python"] / times.get("cython", times["python"])
            print(f"{q:>2} {g:>7} " + " ".join(f"{1e3 * times[b]:>12.3f}" for b in backends)
                  + f" {speed:>8.1f} {diff:>11.2e}")

    # one end-to-end fit per backend
    g = args.groups[0]
    eta, y, _, starts, x = make_problem(g, args.per_group, 1, rng)
    group = np.repeat(np.arange(g), args.per_group)
    base = Dataset(y, x[:, None], ("x",))
    data = GroupedDataset(base, group, tuple(str(i) for i in range(g)))
    spec = ModelSpec(Family.GLMM_BINOMIAL, ("x",), (), intercept_random=True)
    print(f"\nfull random-intercept fit, {g} groups x {args.per_group}:")
    for b in backends:
        t0 = time.perf_counter()
        f = fit_glmm(data, spec, nAGQ=args.nagq, backend=b)
        print(f"  {b:>7}: {time.perf_counter() - t0:.3f} s  loglik {f.loglik:.10f}")


if __name__ == "__main__":
    main()
