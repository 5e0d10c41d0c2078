#!/usr/bin/env python3
"""Compare the compiled convolution core against the numpy fallback.

Times each backend on the convolution shapes the detection pipeline
actually runs (feature stack on a full frame, one training patch, and a
fused forward pass), then prints a table with the per-shape speedup.

Usage: python benchmarks/kernel_benchmark.py [--image-size 512] [--reps 5]
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from forest2fcn import kernels
from forest2fcn.convnet import default_feature_network, forward, fuse, output_shape
from forest2fcn.forest import TrainConfig, train_forest
from forest2fcn.netmap import map_forest


def time_call(fn, reps):
    fn()  # warm allocator and BLAS threads
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def conv_cases(image_size):
    rng = np.random.default_rng(0)
    cases = []
    for (name, h, w, ci, co, k, s) in [
        ("frame 3->32 k3", image_size, image_size, 3, 32, 3, 1),
        ("frame 32->32 k3 s2", image_size - 2, image_size - 2, 32, 32, 3, 2),
        ("mid 32->64 k3", image_size // 2, image_size // 2, 32, 64, 3, 1),
        ("deep 64->128 k3", image_size // 4, image_size // 4, 64, 128, 3, 1),
        ("patch 3->32 k3", 32, 32, 3, 32, 3, 1),
    ]:
        x = rng.uniform(size=(h, w, ci)).astype(np.float32)
        wt = rng.normal(0, 0.1, size=(k, k, ci, co)).astype(np.float32)
        b = np.zeros(co, dtype=np.float32)
        cases.append((name, x, wt, b, s))
    return cases


def fused_model(rng):
    feature = default_feature_network(rng)
    kh, kw, cf = output_shape(feature, (32, 32, 3))
    patches = rng.uniform(size=(40, 32, 32, 3)).astype(np.float32)
    feats = np.stack([forward(feature, p).reshape(-1) for p in patches])
    f = train_forest(feats.astype(np.float64), rng.integers(0, 3, size=40),
                     TrainConfig(n_trees=3, max_depth=5, rng_seed=1))
    return fuse(feature, map_forest(f))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--image-size", type=int, default=512)
    parser.add_argument("--reps", type=int, default=5)
    args = parser.parse_args()

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("note: compiled core not built (run `python setup.py build_ext "
              "--inplace`); timing the numpy fallback only")

    rows = []
    for name, x, wt, b, s in conv_cases(args.image_size):
        timings = {}
        for backend in backends:
            kernels.use_backend(backend)
            timings[backend] = time_call(lambda: kernels.conv2d(x, wt, b, s, 0),
                                         args.reps)
        rows.append((name, timings))

    rng = np.random.default_rng(7)
    model = fused_model(rng)
    image = rng.uniform(size=(args.image_size, args.image_size, 3)).astype(np.float32)
    timings = {}
    for backend in backends:
        kernels.use_backend(backend)
        timings[backend] = time_call(lambda: forward(model, image), args.reps)
    rows.append((f"fused forward {args.image_size}px", timings))

    width = max(len(name) for name, _ in rows)
    header = f"{'case':<{width}}  " + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, timings in rows:
        line = f"{name:<{width}}  " + "".join(f"{timings[b] * 1e3:9.2f} ms" for b in backends)
        if len(backends) == 2:
            line += f"{timings['python'] / timings['compiled']:9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
