"""Time the compiled and pure-numpy kernels on VGG-11-shaped inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--batch N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from egoaudio import kernels

# (in_channels, out_channels, height, width) at 1/16 width, one entry per pooling stage
SHAPES = [(1, 4, 331, 248), (4, 8, 165, 124), (8, 16, 82, 62), (16, 32, 41, 31), (32, 32, 20, 15)]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run(repeat: int, batch: int) -> None:
    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}  batch={batch}  best of {repeat}")
    header = f"{'shape (C,K,H,W)':<22}{'op':<10}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}"
    print(header)
    for c, k, h, w in SHAPES:
        x = rng.standard_normal((batch, c, h, w)).astype(np.float32)
        wt = rng.standard_normal((k, c, 3, 3)).astype(np.float32)
        b = rng.standard_normal(k).astype(np.float32)
        gy = rng.standard_normal((batch, k, h, w)).astype(np.float32)
        rows: dict[str, list[float]] = {}
        for name in backends:
            with kernels.use_backend(name):
                y = kernels.conv3x3_forward(x, wt, b)
                pooled, idx = kernels.maxpool2x2_forward(y)
                rows.setdefault("conv fwd", []).append(best_of(lambda: kernels.conv3x3_forward(x, wt, b), repeat))
                rows.setdefault("conv bwd", []).append(best_of(lambda: kernels.conv3x3_backward(x, wt, gy), repeat))
                rows.setdefault("pool fwd", []).append(best_of(lambda: kernels.maxpool2x2_forward(y), repeat))
                rows.setdefault("pool bwd", []).append(
                    best_of(lambda: kernels.maxpool2x2_backward(pooled, idx, h, w), repeat))
        for op, ts in rows.items():
            line = f"{str((c, k, h, w)):<22}{op:<10}" + "".join(f"{t * 1e3:>10.2f}ms" for t in ts)
            if len(ts) > 1:
                line += f"{ts[backends.index('python')] / ts[backends.index('cython')]:>9.2f}x"
            print(line)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=6)
    args = ap.parse_args()
    run(args.repeat, args.batch)


if __name__ == "__main__":
    main()
