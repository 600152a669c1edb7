"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--batch N]
"""

import argparse
import timeit

import numpy as np

from splitlab import _kernels_py

try:
    from splitlab import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(batch):
    g = np.random.default_rng(0)
    x = g.standard_normal((batch, 4, 28, 28))
    cols = _kernels_py.im2col(x, 3, 1)
    out, arg = _kernels_py.maxpool_forward(x, 2)
    g_pool = g.standard_normal(out.shape)
    return {
        "im2col k=3": lambda m: m.im2col(x, 3, 1),
        "col2im k=3": lambda m: m.col2im(cols, x.shape, 3, 1),
        "maxpool fwd k=2": lambda m: m.maxpool_forward(x, 2),
        "maxpool bwd k=2": lambda m: m.maxpool_backward(g_pool, arg, x.shape, 2),
        "total variation": lambda m: m.total_variation(x),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--batch", type=int, default=64)
    args = p.parse_args(argv)
    print(f"{'kernel':<18}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(args.batch).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:<18}{t_py:>12.2f}{'n/a':>12}{'':>10}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{t_py:>12.2f}{t_c:>12.2f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
