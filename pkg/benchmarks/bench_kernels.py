#!/usr/bin/env python3
"""Time the compiled kernels against the pure-numpy reference backend.

Covers the two hot paths: the sparse bilinear (convection) contraction that
dominates large path ensembles, and one explicit value-function time step on
1-d/2-d/3-d boxes.  Both backends are run on identical inputs; results are
checked to agree before any timing is reported.

    python3 benchmarks/bench_kernels.py [--repeats N] [--batch N]
"""

import argparse
import time

import numpy as np

from nscontrol.galerkin import build_torus_system
from nscontrol.kernels import available_backends, make_bilinear, \
    make_hjb_stepper


def best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_bilinear(rows, rng, batch, repeats):
    for m, dim in ((8, 1), (16, 3)):
        sys_ = build_torus_system(m, dim)
        X = rng.normal(size=(batch, m))
        Y = rng.normal(size=(batch, m))
        fns = {b: make_bilinear(m, sys_.tensor_ijk, sys_.tensor_vals, b)
               for b in available_backends()}
        outs = {b: fn(X, Y) for b, fn in fns.items()}
        if len(outs) == 2:
            assert np.allclose(outs["native"], outs["reference"],
                               rtol=1e-12, atol=1e-14)
        times = {b: best_of(lambda fn=fn: fn(X, Y), repeats)
                 for b, fn in fns.items()}
        rows.append((f"bilinear m={m} {dim}d "
                     f"({len(sys_.tensor_vals)} nnz, batch {batch})", times))


def bench_stepper(rows, rng, repeats):
    for shape in ((4001,), (201, 201), (41, 41, 41)):
        ndim = len(shape)
        kw = dict(h=np.full(ndim, 0.05), q=np.full(ndim, 0.5),
                  b_weights=np.ones(ndim), saturation=1.0, dt=1e-4,
                  drift=rng.normal(size=shape + (ndim,)),
                  source=rng.normal(size=shape))
        u = rng.normal(size=shape)
        fns = {b: make_hjb_stepper(shape, backend=b, **kw)
               for b in available_backends()}
        outs = {b: fn(u) for b, fn in fns.items()}
        if len(outs) == 2:
            assert np.allclose(outs["native"], outs["reference"],
                               rtol=1e-12, atol=1e-13)
        times = {b: best_of(lambda fn=fn: fn(u), repeats)
                 for b, fn in fns.items()}
        rows.append((f"hjb step {'x'.join(map(str, shape))}", times))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7,
                    help="best-of-N timing (default 7)")
    ap.add_argument("--batch", type=int, default=200_000,
                    help="bilinear batch size (default 200000)")
    args = ap.parse_args()

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    rng = np.random.default_rng(0)
    rows = []
    bench_bilinear(rows, rng, args.batch, args.repeats)
    bench_stepper(rows, rng, args.repeats)

    width = max(len(name) for name, _ in rows)
    header = f"{'kernel':<{width}}"
    for b in backends:
        header += f"{b:>14}"
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, times in rows:
        line = f"{name:<{width}}"
        for b in backends:
            line += f"{times[b] * 1e3:>12.3f}ms"
        if len(backends) == 2:
            line += f"{times['reference'] / times['native']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
