"""Compare the compiled and pure-Python patch kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Times im2col, col2im and a full conv2d forward+backward on shapes typical
of the 32x32 visual models, once per backend, and checks both backends
agree exactly.
"""

import argparse
import timeit

import numpy as np

from somnus import autodiff as ad
from somnus import kernels
from somnus.kernels import _fallback

try:
    from somnus.kernels import _ext
except ImportError:
    _ext = None

CASES = [
    # (batch, channels, size, kernel, stride, pad)
    (32, 1, 32, 4, 2, 1),
    (32, 16, 16, 3, 1, 1),
    (32, 32, 8, 3, 1, 1),
]


def _use(impl):
    kernels.im2col, kernels.col2im = impl.im2col, impl.col2im


def _conv_step(x, w, b, stride, pad):
    xt, wt, bt = (ad.Tensor(a, requires_grad=True) for a in (x, w, b))
    ad.backward(ad.sum_all(ad.conv2d(xt, wt, bt, stride, pad)))
    return xt.grad


def bench(impl, case, repeat):
    n, c, size, k, s, p = case
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, c, size, size))
    w = rng.standard_normal((16, c, k, k))
    b = np.zeros(16)
    out = (size + 2 * p - k) // s + 1
    cols = impl.im2col(x, k, s, p, out, out)
    _use(impl)
    timings = {
        "im2col": min(timeit.repeat(lambda: impl.im2col(x, k, s, p, out, out),
                                    number=1, repeat=repeat)),
        "col2im": min(timeit.repeat(lambda: impl.col2im(cols, x.shape, k, s, p, out, out),
                                    number=1, repeat=repeat)),
        "conv fwd+bwd": min(timeit.repeat(lambda: _conv_step(x, w, b, s, p),
                                          number=1, repeat=repeat)),
    }
    return timings, (cols, _conv_step(x, w, b, s, p))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = [("python", _fallback)] + ([("cython", _ext)] if _ext is not None else [])
    if _ext is None:
        print("compiled extension not built; timing the fallback only")
    saved = kernels.im2col, kernels.col2im
    try:
        print(f"{'case':<24}{'op':<14}" + "".join(f"{n:>12}" for n, _ in backends)
              + ("     speedup" if len(backends) == 2 else ""))
        for case in CASES:
            results = [bench(impl, case, args.repeat) for _, impl in backends]
            if len(results) == 2:
                for a, b in zip(results[0][1], results[1][1]):
                    assert np.array_equal(a, b), "backends disagree"
            label = "B={} C={} {}x{} k{} s{}".format(case[0], case[1], case[2], case[2],
                                                    case[3], case[4])
            for op in results[0][0]:
                times = [r[0][op] for r in results]
                line = f"{label:<24}{op:<14}" + "".join(f"{1e3 * t:>10.2f}ms" for t in times)
                if len(times) == 2:
                    line += f"{times[0] / times[1]:>11.1f}x"
                print(line)
    finally:
        kernels.im2col, kernels.col2im = saved


if __name__ == "__main__":
    main()
