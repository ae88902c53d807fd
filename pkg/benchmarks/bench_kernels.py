"""Compare the compiled and pure-Python kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the median wall time per call for each backend and the speed-up, and
checks that both backends return the same values.
"""

import argparse
import time

import numpy as np

from wmsync import kernels
from wmsync.geometry import RstParams, rst_matrix


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "cython":
        print("compiled kernels unavailable; only the python backend can run")
        return 1

    rng = np.random.default_rng(0)
    img = rng.uniform(0, 255, (512, 512))
    inv = np.linalg.inv(rst_matrix(RstParams(30.0, 1.2, 0.9, 0.05, -0.1)))
    means = rng.uniform(0, 30, 200_000)
    bits = rng.integers(0, 2, means.size)

    cases = {
        "warp_affine 512x512": lambda b: kernels.warp_affine(img, inv, (512, 512), backend=b),
        "qim_quantize 200k": lambda b: kernels.qim_quantize(means, 3.0, bits, backend=b),
    }
    print(f"{'kernel':24s} {'python ms':>10s} {'cython ms':>10s} {'speed-up':>9s}  max|diff|")
    for name, fn in cases.items():
        diff = float(np.max(np.abs(fn("python") - fn("cython"))))
        tp = _median_time(lambda: fn("python"), args.repeat)
        tc = _median_time(lambda: fn("cython"), args.repeat)
        print(f"{name:24s} {1e3 * tp:10.2f} {1e3 * tc:10.2f} {tp / tc:8.1f}x  {diff:.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
