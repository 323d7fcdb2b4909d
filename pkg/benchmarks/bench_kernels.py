#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the hot paths (convolution forward/backward, max-pooling, bilinear
resize/rotate) at desk scale and, with ``--size full``, at the full
250x333-pixel geometry.  Numba timings exclude JIT compilation (one warmup
call per kernel).

Usage::

    python benchmarks/bench_kernels.py [--size desk|full] [--repeat N]
"""

import argparse
import time

import numpy as np

from contaminet import kernels

SIZES = {
    # batch, in-channels, H, W, filters, kernel, image H, image W
    "desk": dict(n=64, c=3, h=36, w=47, f=8, k=3, img_h=80, img_w=106),
    "full": dict(n=16, c=3, h=234, w=311, f=8, k=3, img_h=500, img_w=666),
}


def time_call(fn, repeat):
    fn()  # warmup (JIT compile + cache touch)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def build_cases(spec, rng):
    xp = rng.normal(size=(spec["n"], spec["c"], spec["h"] + 2, spec["w"] + 2))
    wt = rng.normal(size=(spec["f"], spec["c"], spec["k"], spec["k"]))
    b = rng.normal(size=spec["f"])
    ho = xp.shape[2] - spec["k"] + 1
    wo = xp.shape[3] - spec["k"] + 1
    gy = rng.normal(size=(spec["n"], spec["f"], ho, wo))
    pool_in = rng.normal(size=(spec["n"], spec["f"], spec["h"], spec["w"]))
    img = rng.uniform(0, 255, size=(spec["img_h"], spec["img_w"], 3))
    return [
        ("conv2d_forward", lambda: kernels.conv2d_forward(xp, wt, b, 1)),
        ("conv2d_input_grad", lambda: kernels.conv2d_input_grad(gy, wt, 1, xp.shape[2], xp.shape[3])),
        ("conv2d_weight_grad", lambda: kernels.conv2d_weight_grad(xp, gy, 1, spec["k"], spec["k"])),
        ("maxpool_forward", lambda: kernels.maxpool_forward(pool_in, 2, 2)),
        ("resize_bilinear", lambda: kernels.resize_bilinear(img, spec["h"], spec["w"])),
        ("rotate_bilinear", lambda: kernels.rotate_bilinear(img, 0.17)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", choices=sorted(SIZES), default="desk")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    spec = SIZES[args.size]
    backends = kernels.available()
    print(f"size={args.size} {spec}  backends={backends}  repeat={args.repeat}")
    results = {}
    for name in backends:
        previous = kernels.select(name)
        rng = np.random.default_rng(0)
        for case, fn in build_cases(spec, rng):
            results.setdefault(case, {})[name] = time_call(fn, args.repeat)
        kernels.select(previous)

    width = max(len(c) for c in results)
    both = "numba" in results[next(iter(results))] and "numpy" in results[next(iter(results))]
    header = f"{'kernel':<{width}}" + "".join(f"  {b:>12}" for b in backends)
    if both:
        header += f"  {'numba gain':>11}"  # numpy time / numba time; >1 means numba wins
    print(header)
    for case, timings in results.items():
        row = f"{case:<{width}}" + "".join(f"  {timings[b] * 1e3:>10.2f}ms" for b in backends)
        if both:
            row += f"  {timings['numpy'] / timings['numba']:>10.2f}x"
        print(row)


if __name__ == "__main__":
    main()
