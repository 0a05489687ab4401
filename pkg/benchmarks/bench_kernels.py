"""Compare the numba kernels with their pure-numpy fallbacks.

Each pair is warmed up once (so compilation is excluded), checked for
agreement, then timed with ``timeit``.  Run with ``python benchmarks/bench_kernels.py``.
"""

import argparse
import timeit

import numpy as np

from tinytarget import _kernels


def make_cases(rng, scale):
    n = 200 * scale
    boxes_a = np.column_stack([rng.uniform(0, 512, (n, 2)), rng.uniform(1, 32, (n, 2))])
    boxes_b = np.column_stack([rng.uniform(0, 512, (n, 2)), rng.uniform(1, 32, (n, 2))])
    side = 128 * scale
    mask = rng.random((side, side)) < 0.05
    image = rng.random((side, side))
    levels, h, c, k = 3, 16 * scale, 16, 9
    feat = rng.standard_normal((levels, h, h, c))
    pos_x = rng.uniform(-1, h, (h, h, k))
    pos_y = rng.uniform(-1, h, (h, h, k))
    mod = rng.standard_normal((h, h, k))
    weights = rng.standard_normal((levels, levels, k))
    return {
        "pairwise_iou": (boxes_a, boxes_b),
        "pairwise_w2": (boxes_a, boxes_b),
        "label8": (mask,),
        "local_stats3": (image,),
        "deform_aggregate": (feat, pos_x, pos_y, mod, weights),
    }


def same(name, a, b):
    if name == "label8":
        return a[1] == b[1] and np.array_equal(a[0] > 0, b[0] > 0)
    if isinstance(a, tuple):
        return all(np.allclose(x, y, rtol=1e-12, atol=1e-12) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scale", type=int, default=1, help="problem-size multiplier")
    parser.add_argument("--repeat", type=int, default=5, help="timing repeats (best is reported)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    cases = make_cases(np.random.default_rng(args.seed), args.scale)
    print(f"{'kernel':<18} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}  agree")
    for name, inputs in cases.items():
        jit_fn = getattr(_kernels, f"{name}_jit")
        np_fn = getattr(_kernels, f"{name}_np")
        agree = same(name, jit_fn(*inputs), np_fn(*inputs))
        t_jit = min(timeit.repeat(lambda: jit_fn(*inputs), number=1, repeat=args.repeat))
        t_np = min(timeit.repeat(lambda: np_fn(*inputs), number=1, repeat=args.repeat))
        print(f"{name:<18} {t_jit * 1e3:>10.3f} {t_np * 1e3:>10.3f} {t_np / t_jit:>7.1f}x  {agree}")


if __name__ == "__main__":
    main()
