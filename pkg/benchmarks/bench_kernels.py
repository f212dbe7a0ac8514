"""Time the numba kernels against their numpy/python fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Each kernel is run once first so JIT compilation is not timed.
"""

import argparse
import timeit

import numpy as np

from stgan import _accel


def cases(rng):
    a = rng.integers(0, 50, size=30)
    b = rng.integers(0, 50, size=30)
    yield "lcs_length (30x30 tokens)", "lcs_length", (a, b)
    pts = rng.standard_normal((512, 2))
    centers = rng.standard_normal((8, 2))
    yield "min_sqdist (512 pts, 8 centers)", "min_sqdist", (pts, centers)
    table = rng.standard_normal((2000, 50))
    yield "argmin_sqdist (2000x50 table)", "argmin_sqdist", (table[0] + 0.1, table)
    m = rng.standard_normal((64, 16, 8))
    yield "pairwise_l1_similarity (64,16,8)", "pairwise_l1_similarity", (m,)
    g = rng.standard_normal((64, 16))
    yield "pairwise_l1_similarity_grad (64,16,8)", "pairwise_l1_similarity_grad", (m, g)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _accel.numba is None:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':42s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, name, inputs in cases(rng):
        py = getattr(_accel, name + "_py")
        nb = getattr(_accel, name + "_nb")
        ref, fast = py(*inputs), nb(*inputs)
        assert np.allclose(ref, fast, rtol=1e-10, atol=1e-12), name
        t_py = min(timeit.repeat(lambda: py(*inputs), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: nb(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:42s} {t_py:10.3f} {t_nb:10.3f} {t_py / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
