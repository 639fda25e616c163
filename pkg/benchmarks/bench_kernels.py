"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the four hot kernels on training-sized tensors, then a full SAM
training step of the stability network at the default fast-mode resolution.

Usage: python3 benchmarks/bench_kernels.py [--quick]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gripstab.nn import kernels_py
from gripstab.nn.kernels import backend

try:
    from gripstab.nn import _kernels as kernels_c
except ImportError:
    kernels_c = None


def _time(fn, *args, repeat: int = 5) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(repeat: int) -> None:
    rng = np.random.default_rng(0)
    cases = [
        # (label, B, C, H(padded), W(padded), kh, kw, sh, sw)
        ("conv 3x3 s1 64ch 120x160", 16, 64, 122, 162, 3, 3, 1, 1),
        ("conv 3x3 s2 128ch 60x80", 16, 128, 62, 82, 3, 3, 2, 2),
        ("conv 7x7 s2 3ch 120x160", 16, 3, 126, 166, 7, 7, 2, 2),
    ]
    print(f"{'kernel':38s} {'pure':>10s} {'compiled':>10s} {'speedup':>8s}")
    for label, b, c, h, w, kh, kw, sh, sw in cases:
        x = rng.standard_normal((b, c, h, w), dtype=np.float32)
        oh = (h - kh) // sh + 1
        ow = (w - kw) // sw + 1
        tp = _time(kernels_py.im2col, x, kh, kw, sh, sw, oh, ow, repeat=repeat)
        if kernels_c is not None:
            tc = _time(kernels_c.im2col, x, kh, kw, sh, sw, oh, ow,
                       repeat=repeat)
            print(f"im2col  {label:30s} {tp*1e3:8.2f}ms {tc*1e3:8.2f}ms "
                  f"{tp/tc:7.2f}x")
            cols = kernels_c.im2col(x, kh, kw, sh, sw, oh, ow)
        else:
            print(f"im2col  {label:30s} {tp*1e3:8.2f}ms {'-':>10s}")
            cols = kernels_py.im2col(x, kh, kw, sh, sw, oh, ow)
        tp = _time(kernels_py.col2im, cols, b, c, h, w, kh, kw, sh, sw, oh,
                   ow, repeat=repeat)
        if kernels_c is not None:
            tc = _time(kernels_c.col2im, cols, b, c, h, w, kh, kw, sh, sw,
                       oh, ow, repeat=repeat)
            print(f"col2im  {label:30s} {tp*1e3:8.2f}ms {tc*1e3:8.2f}ms "
                  f"{tp/tc:7.2f}x")
        else:
            print(f"col2im  {label:30s} {tp*1e3:8.2f}ms {'-':>10s}")

    for label, b, c, h, w, k, s in [
        ("pool 2x2 s2 64ch 60x80", 16, 64, 60, 80, 2, 2),
        ("pool 2x2 s2 512ch 8x10", 16, 512, 8, 10, 2, 2),
    ]:
        x = rng.standard_normal((b, c, h, w), dtype=np.float32)
        oh = -(-max(h - k, 0) // s) + 1
        ow = -(-max(w - k, 0) // s) + 1
        tp = _time(kernels_py.maxpool_forward, x, k, k, s, s, oh, ow,
                   repeat=repeat)
        if kernels_c is not None:
            tc = _time(kernels_c.maxpool_forward, x, k, k, s, s, oh, ow,
                       repeat=repeat)
            print(f"maxpool {label:30s} {tp*1e3:8.2f}ms {tc*1e3:8.2f}ms "
                  f"{tp/tc:7.2f}x")
            y, idx = kernels_c.maxpool_forward(x, k, k, s, s, oh, ow)
        else:
            print(f"maxpool {label:30s} {tp*1e3:8.2f}ms {'-':>10s}")
            y, idx = kernels_py.maxpool_forward(x, k, k, s, s, oh, ow)
        g = rng.standard_normal(y.shape, dtype=np.float32)
        tp = _time(kernels_py.maxpool_backward, g, idx, h, w, k, k, s, s,
                   repeat=repeat)
        if kernels_c is not None:
            tc = _time(kernels_c.maxpool_backward, g, idx, h, w, k, k, s, s,
                       repeat=repeat)
            print(f"poolbwd {label:30s} {tp*1e3:8.2f}ms {tc*1e3:8.2f}ms "
                  f"{tp/tc:7.2f}x")
        else:
            print(f"poolbwd {label:30s} {tp*1e3:8.2f}ms {'-':>10s}")


def bench_training_step(resolution: tuple[int, int], batch: int) -> None:
    from gripstab.datasets import ArrayDataset
    from gripstab.models import build_snn
    from gripstab.training import TrainConfig, train_single

    h, w = resolution
    rng = np.random.default_rng(0)
    left = rng.uniform(0, 1, (batch, 3, h, w)).astype(np.float32)
    right = rng.uniform(0, 1, (batch, 3, h, w)).astype(np.float32)
    labels = rng.uniform(0.2, 0.8, batch).astype(np.float32)
    ds = ArrayDataset(left, right, labels,
                      tuple(f"p{i}" for i in range(batch)), ("x",) * batch)
    cfg = TrainConfig(batch_size=batch, max_epochs=1, max_steps=2,
                      eval_every=10)
    spec = build_snn((h, w, 3))
    t0 = time.perf_counter()
    train_single(spec, ds, None, cfg)
    dt = (time.perf_counter() - t0) / 2
    print(f"\nSNN SAM step  {h}x{w} batch {batch} "
          f"[{backend()} backend]: {dt:.2f} s/step")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--quick", action="store_true",
                    help="fewer repeats, skip the training-step benchmark")
    args = ap.parse_args()
    repeat = 2 if args.quick else 5
    if kernels_c is None:
        print("compiled kernels unavailable; timing the pure backend only\n")
    bench_kernels(repeat)
    if not args.quick:
        bench_training_step((120, 160), 16)


if __name__ == "__main__":
    main()
