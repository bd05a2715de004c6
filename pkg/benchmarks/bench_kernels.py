"""Compare the compiled and numpy kernel backends on desk-model shapes.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from selfverify import kernels

CASES = {
    # name: (input batch shape, weight shape, stride, pad)
    "conv 3->16 @32x32": ((64, 3, 32, 32), (16, 3, 3, 3), 1, 1),
    "conv 16->32 @16x16": ((64, 16, 16, 16), (32, 16, 3, 3), 1, 1),
    "conv 1->16 @98x13": ((64, 1, 98, 13), (16, 1, 3, 3), 1, 1),
}


def _conv_calls(xshape, wshape, stride, pad, rng):
    x = rng.standard_normal(xshape).astype(np.float32)
    w = rng.standard_normal(wshape).astype(np.float32)
    b = rng.standard_normal(wshape[0]).astype(np.float32)
    out = kernels.conv2d_forward(x, w, b, stride, pad)
    g = np.ones_like(out)
    h, wd = xshape[2:]
    return {
        "forward": lambda: kernels.conv2d_forward(x, w, b, stride, pad),
        "backward": lambda: kernels.conv2d_backward_input(g, w, h, wd, stride, pad),
    }


def _pool_calls(rng):
    x = rng.standard_normal((64, 16, 32, 32)).astype(np.float32)
    out, idx = kernels.maxpool_forward(x, 2, 2)
    g = np.ones_like(out)
    return {
        "forward": lambda: kernels.maxpool_forward(x, 2, 2),
        "backward": lambda: kernels.maxpool_backward(g, idx, 32, 32),
    }


def time_backend(name, repeat):
    kernels.use_backend(name)
    rng = np.random.default_rng(0)
    rows = {}
    for case, args in CASES.items():
        for op, fn in _conv_calls(*args, rng).items():
            rows[f"{case} {op}"] = min(timeit.repeat(fn, number=1, repeat=repeat))
    for op, fn in _pool_calls(rng).items():
        rows[f"maxpool 2x2 @32x32 {op}"] = min(timeit.repeat(fn, number=1, repeat=repeat))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    original = kernels.BACKEND
    try:
        py = time_backend("python", args.repeat)
        if "cython" not in kernels.BACKENDS:
            print("compiled backend not built; python timings only")
            for k, v in py.items():
                print(f"{k:<34}{v * 1e3:>10.2f} ms")
            return
        cy = time_backend("cython", args.repeat)
    finally:
        kernels.use_backend(original)
    print(f"{'kernel (batch 64)':<34}{'python':>10}{'cython':>10}{'speedup':>9}")
    for k in py:
        print(f"{k:<34}{py[k] * 1e3:>8.2f}ms{cy[k] * 1e3:>8.2f}ms{py[k] / cy[k]:>8.1f}x")


if __name__ == "__main__":
    main()
