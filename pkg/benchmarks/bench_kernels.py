"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--fit]

Prints best-of-``repeat`` wall time per call for each hot kernel at the sizes
one outer solver iteration uses, and with ``--fit`` the time of a whole fit
under each backend (run in subprocesses so the backend is chosen at import).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from nail import _fallback

try:
    from nail import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None

FIT_SNIPPET = """
import time
from nail import BACKEND
from nail.data import SyntheticSpec, synthesize
from nail.solver import SolverConfig, fit
ds, _ = synthesize(SyntheticSpec(seed=0))
t0 = time.perf_counter()
_, trace = fit(ds, SolverConfig(seed=0, max_outer=50), record_substeps=False)
print(BACKEND, time.perf_counter() - t0, trace.iterations)
"""


def cases(rng):
    n, d, l, k = 200, 28, 8, 10
    R = rng.normal(size=(n, d))
    O = rng.random((n, d)) < 0.8
    Z = rng.normal(scale=3.0, size=(n, l))
    Y = rng.integers(0, 2, (n, l)).astype(float)
    OY = rng.random((n, l)) < 0.5
    A = rng.normal(size=(n, k, k + 3))
    G = A @ A.transpose(0, 2, 1) + 1e-3 * np.eye(k)
    h = rng.normal(size=(n, k))
    return {
        "l21_rows": (lambda m: m.l21_rows(R, O.view(np.uint8) if m is _ckernels else O, 1e-8)),
        "focal_terms": (lambda m: m.focal_terms(Z, Y, OY.view(np.uint8) if m is _ckernels else OY,
                                                2.0, 0.5, 1e-12)),
        "nnqp_batch": (lambda m: m.nnqp_batch(G, h, True)),
    }


def bench(repeat: int):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}")
    for name, call in cases(rng).items():
        py = min(timeit.repeat(lambda: call(_fallback), number=1, repeat=repeat))
        if _ckernels is None:
            print(f"{name:<14}{py * 1e3:>14.3f}{'n/a':>14}{'':>10}")
            continue
        cy = min(timeit.repeat(lambda: call(_ckernels), number=1, repeat=repeat))
        print(f"{name:<14}{py * 1e3:>14.3f}{cy * 1e3:>14.3f}{py / cy:>9.1f}x")


def bench_fit():
    for pure in ("1", "0"):
        env = dict(os.environ, NAIL_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", FIT_SNIPPET], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"fit ({out[0]} backend): {float(out[1]):.2f}s for {out[2]} outer iterations")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--fit", action="store_true", help="also time a 50-iteration fit per backend")
    args = parser.parse_args(argv)
    bench(args.repeat)
    if args.fit:
        bench_fit()


if __name__ == "__main__":
    main()
