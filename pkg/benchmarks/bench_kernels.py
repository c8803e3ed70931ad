"""Time the numba kernels against their pure-numpy counterparts.

    python3 benchmarks/bench_kernels.py --frames 2000 --repeat 5
"""

import argparse
import time
from dataclasses import dataclass

import numpy as np

from streamdec import kernels as K
from streamdec._jit import HAVE_NUMBA


@dataclass
class Result:
    name: str
    numba_ms: float
    numpy_ms: float

    @property
    def speedup(self) -> float:
        return self.numpy_ms / self.numba_ms if self.numba_ms > 0 else float("nan")


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return 1000.0 * best


def cases(T, V, D, rng):
    probs = rng.dirichlet(np.full(V, 0.3), T)
    labels = rng.integers(1, V, 12).astype(np.int64)
    p = rng.uniform(0.01, 0.99, T)
    prev = rng.dirichlet(np.ones(T))
    keys = rng.normal(size=(T, D))
    wqb = rng.normal(size=D)
    vhat = rng.normal(size=D)
    vhat /= np.linalg.norm(vhat)
    H = rng.normal(size=(T, D))
    w = rng.dirichlet(np.ones(T))
    ref = rng.integers(0, 30, 300).astype(np.int64)
    hyp = rng.integers(0, 30, 280).astype(np.int64)

    def energy(ns):
        out = np.zeros(T)
        return lambda: ns.energy_rows(wqb, keys, vhat, 1.0, -4.0, 0, T, out)

    return {
        "ctc_full_forward": lambda ns: (lambda: ns.ctc_full_forward(probs, labels, 0)),
        "energy_rows": energy,
        "weighted_rows": lambda ns: (lambda: ns.weighted_rows(w, H, 0, T)),
        "hma_row_direct": lambda ns: (lambda: ns.hma_row_direct(p[:400], prev[:400])),
        "hma_row_recursive": lambda ns: (lambda: ns.hma_row_recursive(p, prev)),
        "smocha_row_product": lambda ns: (lambda: ns.smocha_row_product(p)),
        "edit_distance": lambda ns: (lambda: ns.edit_distance(ref, hyp)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=2000)
    ap.add_argument("--vocab", type=int, default=30)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(args.seed)
    results = []
    for name, make in cases(args.frames, args.vocab, args.dim, rng).items():
        nb, npy = make(K.NUMBA), make(K.NUMPY)
        nb()  # compile outside the timing
        results.append(Result(name, _best_of(nb, args.repeat), _best_of(npy, args.repeat)))
    print(f"{'kernel':<22}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for r in results:
        print(f"{r.name:<22}{r.numba_ms:>12.3f}{r.numpy_ms:>12.3f}{r.speedup:>10.1f}")
    return results


if __name__ == "__main__":
    main()
