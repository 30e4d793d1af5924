"""Time the compiled kernels against the numpy fallback on pipeline-sized shapes.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from siamcar.kernels import backends

# (label, C, H, W, K, k, stride, pad): the toy backbone on a 128 px search crop
CONV_CASES = [
    ("stem 3->8 k4 s4", 3, 128, 128, 8, 4, 4, 0),
    ("stage1 8->8 k4 s2", 8, 32, 32, 8, 4, 2, 1),
    ("stage2 8->8 k3 s1", 8, 16, 16, 8, 3, 1, 1),
    ("head tower 16->16 k3", 16, 9, 9, 16, 3, 1, 1),
]
XCORR_CASES = [
    ("xcorr 24ch 16x16 * 8x8", 24, 16, 8),
]


def bench(fn, repeat):
    timer = timeit.Timer(fn)
    n, _ = timer.autorange()
    return min(timer.repeat(repeat, n)) / n


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = backends()
    rng = np.random.default_rng(0)
    names = sorted(impls)
    print(f"{'case':34s}" + "".join(f"{n + ' (us)':>16s}" for n in names) + f"{'speedup':>10s}")

    def report(label, fns):
        t = {n: bench(fns[n], args.repeat) for n in names}
        speed = t["python"] / t["cython"] if "cython" in t else float("nan")
        print(f"{label:34s}" + "".join(f"{t[n] * 1e6:16.1f}" for n in names) + f"{speed:10.2f}x")

    for label, C, H, W, K, k, s, p in CONV_CASES:
        x, w = rng.normal(size=(C, H, W)), rng.normal(size=(K, C, k, k))
        g = rng.normal(size=impls["python"].conv2d_forward(x, w, s, p).shape)
        report(label + " fwd", {n: (lambda m=m: m.conv2d_forward(x, w, s, p)) for n, m in impls.items()})
        report(label + " bwd", {n: (lambda m=m: (m.conv2d_backward_input(g, w, H, W, s, p),
                                                 m.conv2d_backward_weight(g, x, k, k, s, p)))
                                for n, m in impls.items()})
    for label, C, sx, sz in XCORR_CASES:
        x, z = rng.normal(size=(C, sx, sx)), rng.normal(size=(C, sz, sz))
        g = rng.normal(size=(C, sx - sz + 1, sx - sz + 1))
        report(label + " fwd", {n: (lambda m=m: m.xcorr_forward(x, z)) for n, m in impls.items()})
        report(label + " bwd", {n: (lambda m=m: m.xcorr_backward(g, x, z)) for n, m in impls.items()})


if __name__ == "__main__":
    main()
