"""Compiled kernels vs the pure-Python fallback.

Times a batch forward pass, a per-sample gradient and a full SGD epoch on
a chaotic-forecast-sized network (n=9, K=3) and checks that both paths
agree.  Run with ``python3 benchmarks/bench_kernels.py [--rules 2] [--samples 978]``.
"""

import argparse
import timeit

import numpy as np

from it2forecast import backend
from it2forecast.gradients import random_instance


def network(rules, seed=0):
    rng = np.random.default_rng(seed)
    while True:
        p, _, _ = random_instance(rng, n_max=9, M_max=rules, K_max=3)
        if (p.n, p.M, p.K) == (9, rules, 3):
            return p, rng


def best_of(fn, repeat=5, number=1):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rules", type=int, default=2)
    ap.add_argument("--samples", type=int, default=978)
    args = ap.parse_args()
    if backend.NAME != "cython":
        raise SystemExit("compiled kernels not built; reinstall the package with a C compiler")

    p, rng = network(args.rules)
    X = rng.uniform(size=(args.samples, 9))
    T = rng.uniform(size=(args.samples, 3))
    order = rng.permutation(args.samples)

    # agreement first
    gap = np.max(np.abs(backend.predict_batch(p, X, True) - backend.predict_batch(p, X, False)))
    ga = backend.sample_gradient(p, X[0], T[0], True, True)
    gb = backend.sample_gradient(p, X[0], T[0], True, False)
    ggap = max(np.max(np.abs(np.asarray(getattr(ga, f)) - np.asarray(getattr(gb, f))))
               for f in ("m1", "m2", "sigma", "c", "s", "q_o"))
    print(f"n=9 M={args.rules} K=3, {args.samples} samples; max prediction gap {gap:.1e}, "
          f"max gradient gap {ggap:.1e}")

    rows = []
    for label, fn in (
        ("predict batch", lambda native: backend.predict_batch(p, X, native)),
        ("sample gradient", lambda native: backend.sample_gradient(p, X[0], T[0], True, native)),
        ("SGD epoch", lambda native: backend.sgd_epoch(p.copy(), X, T, order, 0.03, True, native)),
    ):
        fast = best_of(lambda: fn(True), number=20)
        slow = best_of(lambda: fn(False), repeat=3)
        rows.append((label, fast, slow))

    print(f"{'operation':<16} {'cython':>12} {'python':>12} {'speedup':>9}")
    for label, fast, slow in rows:
        print(f"{label:<16} {fast * 1e3:>9.3f} ms {slow * 1e3:>9.3f} ms {slow / fast:>8.0f}x")


if __name__ == "__main__":
    main()
