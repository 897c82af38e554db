"""Compare the two labeling backends on random masks.

Run as a script:

    python3 benchmarks/bench_labeling.py
    python3 benchmarks/bench_labeling.py --big   # adds a 512x512x400 case

Both backends must produce bit-identical root labels; the script checks
that while timing them.
"""

import argparse
import statistics
import time

import numpy as np

from ppglkit._labeling import label_foreground

CASES = [
    ((64, 64, 40), 0.30, 3),
    ((128, 128, 100), 0.01, 3),
    ((128, 128, 100), 0.30, 3),
    ((256, 256, 200), 0.01, 3),
]
BIG_CASE = ((512, 512, 400), 0.01, 1)


def make_fg(dims, density, seed):
    rng = np.random.default_rng(seed)
    n = dims[0] * dims[1] * dims[2]
    mask = rng.random(n) < density
    return np.flatnonzero(mask).astype(np.int64)


def run_once(fg_idx, dims, connectivity, backend):
    t0 = time.perf_counter()
    roots = label_foreground(fg_idx, *dims, connectivity, backend=backend)
    return time.perf_counter() - t0, roots


def bench(dims, density, repeats, connectivity):
    fg_idx = make_fg(dims, density, seed=hash((dims, density)) % 2**32)
    # first numba call may compile; do not let that pollute the timing
    label_foreground(fg_idx[:64].copy(), *dims, connectivity, backend="numba")

    times = {}
    roots = {}
    for backend in ("numba", "numpy"):
        samples = []
        for _ in range(repeats):
            dt, r = run_once(fg_idx, dims, connectivity, backend)
            samples.append(dt)
        times[backend] = statistics.median(samples)
        roots[backend] = r
    if not np.array_equal(roots["numba"], roots["numpy"]):
        raise AssertionError(f"backends disagree on {dims} density {density}")
    return len(fg_idx), times


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--big", action="store_true", help="include the 512x512x400 case")
    parser.add_argument("--connectivity", type=int, default=26, choices=(6, 26))
    args = parser.parse_args()

    cases = CASES + ([BIG_CASE] if args.big else [])
    print(f"connectivity {args.connectivity}")
    print(f"{'dims':>14} {'density':>8} {'fg voxels':>10} {'numba':>9} {'numpy':>9} {'ratio':>7}")
    for dims, density, repeats in cases:
        n_fg, times = bench(dims, density, repeats, args.connectivity)
        ratio = times["numpy"] / times["numba"]
        print(
            f"{str(dims):>14} {density:>8.2f} {n_fg:>10d}"
            f" {times['numba']:>8.3f}s {times['numpy']:>8.3f}s {ratio:>6.1f}x"
        )


if __name__ == "__main__":
    main()
