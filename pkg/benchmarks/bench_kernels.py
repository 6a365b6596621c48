#!/usr/bin/env python3
"""Times the compiled kernels against the numpy fallback.

Run after building the extension (pip install -e . --no-build-isolation):

    python3 benchmarks/bench_kernels.py

Covers the three hot kernels at loss-batch and metric-pool sizes. The
compiled path wins where per-call overhead and temporaries dominate
(small batches, fused KL); the numpy path leans on BLAS for the big
pooled matrices, so expect the margin to narrow there.
"""

from __future__ import annotations

import time

import numpy as np

from refine_kit.kernels import _numpy

try:
    from refine_kit.kernels import _hot
except ImportError:
    _hot = None


def bench(fn, *args, repeats=7, min_time=0.05):
    # One warmup, then repeat each measurement enough times to fill min_time.
    fn(*args)
    loops = 1
    while True:
        start = time.perf_counter()
        for _ in range(loops):
            fn(*args)
        elapsed = time.perf_counter() - start
        if elapsed >= min_time:
            break
        loops *= 4
    best = elapsed / loops
    for _ in range(repeats - 1):
        start = time.perf_counter()
        for _ in range(loops):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / loops)
    return best


def fmt(seconds: float) -> str:
    if seconds < 1e-3:
        return f"{seconds * 1e6:8.1f} us"
    return f"{seconds * 1e3:8.2f} ms"


def main() -> None:
    if _hot is None:
        print("compiled extension not built; showing numpy only")
    rng = np.random.default_rng(0)
    rows = []

    for b in (8, 64, 256, 1024):
        scores = np.ascontiguousarray(rng.standard_normal((b, b)) * 5.0)
        target = np.ascontiguousarray(np.eye(b) * 0.5 + 0.5 / b)
        rows.append((f"row_softmax        B={b:<5}", scores, None, "row_softmax"))
        rows.append((f"kl_grad_from_logits B={b:<4}", scores, target, "kl_grad_from_logits"))
    for m in (256, 1000, 4000):
        feats = np.ascontiguousarray(rng.standard_normal((m, 32)))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        rows.append((f"rbf_pair_sum       M={m:<5}", feats, None, "rbf_pair_sum"))

    header = f"{'kernel / size':<28} {'numpy':>12}"
    if _hot is not None:
        header += f" {'cython':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for label, a, b_arg, name in rows:
        args = (a,) if b_arg is None else (a, b_arg)
        t_np = bench(getattr(_numpy, name), *args)
        line = f"{label:<28} {fmt(t_np):>12}"
        if _hot is not None:
            t_cy = bench(getattr(_hot, name), *args)
            line += f" {fmt(t_cy):>12} {t_np / t_cy:>8.2f}x"
        print(line)


if __name__ == "__main__":
    main()
