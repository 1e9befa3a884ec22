"""Compiled kernels vs their numpy twins, plus one full training step.

    python3 benchmarks/bench_kernels.py [--batch 512] [--repeat 5]

Shapes follow the desk trunk on an 11x23 netflow window.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from flowsynth.neural import _kernels_py as fallback
from flowsynth.neural import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(batch, rng):
    x1 = rng.random((batch, 8, 11, 23), dtype=np.float32)
    x2 = rng.random((batch, 16, 6, 12), dtype=np.float32)
    cols = kernels.fallback.im2col3x3(x1)
    pooled, idx = fallback.maxpool2_forward(x1)
    xs = np.sort(rng.random(20000))
    ys = rng.integers(0, 3, 20000)
    return [
        ("im2col3x3 (8,11,23)", lambda k: k.im2col3x3(x1)),
        ("im2col3x3 (16,6,12)", lambda k: k.im2col3x3(x2)),
        ("col2im3x3 (8,11,23)", lambda k: k.col2im3x3(cols, *x1.shape)),
        ("maxpool2_forward", lambda k: k.maxpool2_forward(x1)),
        ("maxpool2_backward", lambda k: k.maxpool2_backward(pooled, idx, x1.shape)),
        ("best_gini_split n=20000", lambda k: k.best_gini_split(xs, ys, 3)),
    ]


def train_step_time(repeat):
    """Time one head's forward+backward in a child process per backend."""
    code = (
        "import time, numpy as np\n"
        "from flowsynth.neural import Network, kernels\n"
        "from flowsynth.neural.network import DESK_TRUNK, with_flatten\n"
        "rng = np.random.default_rng(0)\n"
        "net = Network(with_flatten(DESK_TRUNK), (1, 11, 23), rng)\n"
        "x = rng.random((512, 1, 11, 23), dtype=np.float32)\n"
        "best = 1e9\n"
        f"for _ in range({repeat}):\n"
        "    t = time.perf_counter(); out = net.forward(x, True); net.backward(np.ones_like(out))\n"
        "    best = min(best, time.perf_counter() - t)\n"
        "print(kernels.BACKEND, best)\n"
    )
    out = {}
    for pure in (False, True):
        env = dict(os.environ)
        env.pop("FLOWSYNTH_PURE_PYTHON", None)
        if pure:
            env["FLOWSYNTH_PURE_PYTHON"] = "1"
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        name, secs = res.stdout.split()
        out[name] = float(secs)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.compiled is None:
        sys.exit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in kernel_cases(args.batch, rng):
        c = best_of(lambda: fn(kernels.compiled), args.repeat)
        p = best_of(lambda: fn(fallback), args.repeat)
        print(f"{name:28s} {c * 1e3:10.2f} {p * 1e3:10.2f} {p / c:8.2f}")
    step = train_step_time(args.repeat)
    print(f"{'desk trunk fwd+bwd':28s} {step['cython'] * 1e3:10.2f} {step['numpy'] * 1e3:10.2f} "
          f"{step['numpy'] / step['cython']:8.2f}")


if __name__ == "__main__":
    main()
