"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--vocab 256] [--repeat 2000]
"""
import argparse
import timeit

import numpy as np

from biralab import _pykernels

try:
    from biralab import _ckernels
except ImportError:
    _ckernels = None


def cases(vocab: int):
    l = np.random.default_rng(0).normal(scale=3, size=vocab)
    return {
        "softmax": lambda k: k.softmax(l, 0.7),
        "nucleus_probs": lambda k: k.nucleus_probs(l, 0.7, 0.95),
        "sample_nucleus": lambda k: k.sample_nucleus(l, 0.7, 0.95, 0.37),
        "permutation": lambda k: k.permutation(12345, vocab),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--vocab", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; only the numpy fallback is timed")
    print(f"{'kernel':16s} {'numpy us':>10s} {'cython us':>10s} {'speedup':>8s}")
    for name, fn in cases(args.vocab).items():
        py = min(timeit.repeat(lambda: fn(_pykernels), number=args.repeat, repeat=3)) / args.repeat * 1e6
        if _ckernels is None:
            print(f"{name:16s} {py:10.2f} {'-':>10s} {'-':>8s}")
            continue
        cy = min(timeit.repeat(lambda: fn(_ckernels), number=args.repeat, repeat=3)) / args.repeat * 1e6
        print(f"{name:16s} {py:10.2f} {cy:10.2f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
