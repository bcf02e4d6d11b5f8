"""Compiled vs numpy kernels: per-kernel timings and one full enhancement iteration.

    python benchmarks/bench_kernels.py [--size 128] [--repeat 20]
"""

import argparse
import statistics
import time

import numpy as np

from rseed import decoder as dec
from rseed import kernels
from rseed.losses import LossWeights, compute_losses, illumination_target
from rseed.retinex import GammaParam, RetinexState
from rseed.tensor import Tensor


def timeit(fn, repeat):
    fn()
    samples = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t)
    return statistics.median(samples)


def kernel_cases(size, channels=16):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((size, size, channels)).astype(np.float32)
    cols = rng.standard_normal((size * size, 9 * channels)).astype(np.float32)
    half = rng.standard_normal((size // 2, size // 2, channels)).astype(np.float32)
    return {
        "im2col 3x3 reflect": lambda b: kernels.im2col(x, 3, True, backend=b),
        "col2im 3x3 reflect": lambda b: kernels.col2im(cols, x.shape, 3, True, backend=b),
        "upsample2x": lambda b: kernels.upsample2x(half, backend=b),
        "upsample2x backward": lambda b: kernels.upsample2x_backward(x, backend=b),
    }


def iteration(size):
    arch = dec.Arch()
    w_r = dec.init_random(arch, 0)
    w_l = dec.init_random(arch.with_out(1), 1)
    rng = np.random.default_rng(2)
    image = Tensor(rng.uniform(0.02, 0.3, (3, size, size)))
    target = illumination_target(image)
    z_r = dec.init_seed(arch, size, size, rng)
    z_l = dec.init_seed(arch, size, size, rng)
    gamma = GammaParam()
    weights = LossWeights()

    def step():
        z_r.grad = z_l.grad = gamma.tensor.grad = None
        state = RetinexState(dec.decode(z_r, w_r), dec.decode(z_l, w_l), gamma.tensor)
        total, _ = compute_losses(image, target, state, weights)
        total.backward()

    return step


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = kernels.AVAILABLE
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND}); image {args.size}x{args.size}")
    print(f"{'case':<28}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    rows = [(name, [timeit(lambda: fn(b), args.repeat) for b in backends])
            for name, fn in kernel_cases(args.size).items()]
    step = iteration(args.size)
    full = []
    for b in backends:
        with kernels.use_backend(b):
            full.append(timeit(step, max(3, args.repeat // 4)))
    rows.append(("full iteration (fwd+bwd)", full))
    for name, times in rows:
        line = f"{name:<28}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[1] / times[0]:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
