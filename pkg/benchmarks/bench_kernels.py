"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--sequences 500]

Each kernel runs once per backend to warm up (numba compiles on first call),
then the best of ``--repeat`` timings is reported, along with the maximum
absolute difference between the two backends' outputs.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from fsseg import kernels
from fsseg.crf import StateSpace


def _best(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _maxdiff(a, b):
    if isinstance(a, tuple):
        return max(_maxdiff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore"):   # -inf - -inf where both sides agree
        diff = np.where(a == b, 0.0, np.abs(a - b))
    return float(np.max(diff, initial=0.0))


def make_cases(n_sequences: int, seed: int):
    rng = np.random.default_rng(seed)
    space = StateSpace(2)
    lengths = rng.integers(3, 41, size=n_sequences)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    unary = space.unary(rng.normal(size=(offsets[-1], 2)), offsets)
    pair = space.pair(rng.normal(size=(2, 2, 2)))
    long_u = space.unary(rng.normal(size=(40, 2)))
    d, h, n = 50, 50, 40
    x = rng.normal(size=(n, d))
    Wx = rng.normal(scale=0.1, size=(4 * h, d))
    Wh = rng.normal(scale=0.1, size=(4 * h, h))
    b = np.zeros(4 * h)
    H, C, G = kernels.NUMPY.lstm_forward(x, Wx, Wh, b, False)
    dH = rng.normal(size=H.shape)
    return {
        "corpus_expectations": lambda: kernels.corpus_expectations(unary, offsets, pair),
        "forward (n=40)": lambda: kernels.forward(long_u, pair),
        "viterbi (n=40)": lambda: kernels.viterbi(long_u, pair),
        "lstm_forward (40x50)": lambda: kernels.lstm_forward(x, Wx, Wh, b),
        "lstm_backward (40x50)": lambda: kernels.lstm_backward(dH, x, Wx, Wh, H, C, G),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sequences", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if kernels.NUMBA is None:
        print("numba is not importable; nothing to compare")
        return 1

    cases = make_cases(args.sequences, args.seed)
    prev = kernels.backend()
    print(f"{'kernel':<24}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}{'max diff':>12}")
    try:
        for name, fn in cases.items():
            kernels.use_backend("numpy")
            ref = fn()
            t_np = _best(fn, args.repeat)
            kernels.use_backend("numba")
            out = fn()
            t_nb = _best(fn, args.repeat)
            print(f"{name:<24}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}"
                  f"{t_np / t_nb:>9.1f}x{_maxdiff(ref, out):>12.2e}")
    finally:
        kernels.use_backend(prev)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
