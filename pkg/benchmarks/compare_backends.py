"""Time the bit kernels and the full grouping pass on both backends.

Flips KVCRUSH_BACKEND in-process (the dispatcher re-reads it on every
call), so one run produces a side-by-side table:

    python3 benchmarks/compare_backends.py --sizes 4096,16384,65536
"""

import argparse
import os
import statistics
import time

import numpy as np

from kvcrush import _kernels as kernels
from kvcrush.grouping import kvcrush_group


def median_ms(fn, reps):
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return statistics.median(samples) / 1e6


def bench_backend(name, sizes, width, n_buckets, reps, rng_seed):
    os.environ[kernels.ENV_VAR] = name
    kernels.warm_up()
    rng = np.random.default_rng(rng_seed)
    rows = []
    for n in sizes:
        bits = rng.integers(0, 2, size=(n, width), dtype=np.uint8)
        packed = kernels.pack_bits(bits)
        ref = packed[0].copy()
        bucket_of = rng.integers(0, n_buckets, size=n).astype(np.int64)
        # One warm call per measured function so first-touch costs
        # (page faults, caches) stay out of the medians.
        kernels.hamming_to_ref(packed, ref)
        kernels.hamming_paired(packed, packed)
        kernels.bucket_bit_counts(bits, bucket_of, n_buckets)
        kvcrush_group(bits, n_buckets, rng_seed=rng_seed)
        rows.append(
            {
                "n": n,
                "to_ref": median_ms(lambda: kernels.hamming_to_ref(packed, ref), reps),
                "paired": median_ms(lambda: kernels.hamming_paired(packed, packed), reps),
                "tally": median_ms(
                    lambda: kernels.bucket_bit_counts(bits, bucket_of, n_buckets), reps
                ),
                "group": median_ms(
                    lambda: kvcrush_group(bits, n_buckets, rng_seed=rng_seed), reps
                ),
            }
        )
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--sizes", default="4096,16384,65536",
                    help="comma-separated fingerprint counts")
    ap.add_argument("--width", type=int, default=32, help="bits per fingerprint")
    ap.add_argument("--buckets", type=int, default=64)
    ap.add_argument("--reps", type=int, default=9, help="samples per median")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    backends = ["numpy"] + (["numba"] if kernels.HAS_NUMBA else [])
    if not kernels.HAS_NUMBA:
        print("numba not importable; timing numpy only")

    saved = os.environ.get(kernels.ENV_VAR)
    try:
        results = {b: bench_backend(b, sizes, args.width, args.buckets,
                                    args.reps, args.seed) for b in backends}
    finally:
        if saved is None:
            os.environ.pop(kernels.ENV_VAR, None)
        else:
            os.environ[kernels.ENV_VAR] = saved

    cols = [("to_ref", "anchor dist"), ("paired", "paired dist"),
            ("tally", "bucket tally"), ("group", "full grouping")]
    print(f"\nwidth={args.width} buckets={args.buckets} "
          f"median of {args.reps} runs, times in ms\n")
    header = f"{'n':>8}  {'backend':<7}" + "".join(f"{label:>14}" for _, label in cols)
    print(header)
    print("-" * len(header))
    for i, n in enumerate(sizes):
        for b in backends:
            row = results[b][i]
            line = f"{n:>8}  {b:<7}" + "".join(f"{row[key]:>14.3f}" for key, _ in cols)
            print(line)
        if "numba" in results:
            speedups = "".join(
                f"{results['numpy'][i][key] / max(results['numba'][i][key], 1e-9):>13.1f}x"
                for key, _ in cols
            )
            print(f"{'':>8}  {'speedup':<7}{speedups}")
        print()


if __name__ == "__main__":
    main()
