"""Time each hot kernel under both backends and check they agree.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from ofx import _pykernels, kernels


def cases():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 255, (120, 160))
    blur = np.zeros((9, 9))
    blur[4, 1:8] = 1 / 7
    gauss = np.full((3, 3), 1 / 9)
    acts = rng.standard_normal((16, 32, 120, 160)).astype(np.float32)
    cols = rng.standard_normal((16, 32 * 9, 120 * 160)).astype(np.float32)
    valid = rng.random((120, 160)) > 0.3
    return [
        ("correlate2d 120x160, 9x9 blur", "correlate2d", (img, blur, True)),
        ("correlate2d 120x160, 3x3", "correlate2d", (img, gauss, True)),
        ("im2col3x3 16x32x120x160 f32", "im2col3x3", (acts,)),
        ("col2im3x3 16x288x19200 f32", "col2im3x3", (cols, 120, 160)),
        ("extend_rows 120x160", "extend_rows", (img, valid)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": _pykernels}
    if "cython" in kernels.BACKENDS:
        backends["cython"] = kernels.BACKENDS["cython"]
    else:
        print("compiled backend not built; timing the fallback only")
    print(f"{'kernel':<34}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}  identical")
    for label, fn, argv in cases():
        times, outs = {}, {}
        for name, mod in backends.items():
            f = getattr(mod, fn)
            outs[name] = f(*argv)
            n = 1 if fn in ("im2col3x3", "col2im3x3") else 20
            times[name] = min(timeit.repeat(lambda: f(*argv), number=n, repeat=args.repeat)) / n
        row = f"{label:<34}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if "cython" in times:
            a, b = outs["python"], outs["cython"]
            same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) else np.array_equal(a, b)
            row += f"{times['python'] / times['cython']:>9.2f}x  {same}"
        print(row)


if __name__ == "__main__":
    main()
