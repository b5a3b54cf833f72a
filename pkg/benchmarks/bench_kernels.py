"""Time the compiled kernels against their pure-Python twins.

Run from the repository root:  python3 benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from tinytransducer import _kernels_py

try:
    from tinytransducer import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def cases(rng):
    for n in (10, 60, 200):
        ref = rng.integers(3, 13, size=n).astype(np.int64)
        hyp = ref.copy()
        flip = rng.random(n) < 0.2
        hyp[flip] = rng.integers(3, 13, size=int(flip.sum()))
        hyp = hyp[rng.random(n) > 0.1]
        yield f"edit_align n={n}", "edit_align", (ref, hyp)
    for rows, vocab, d in ((64, 16, 64), (2048, 16, 64), (2048, 64, 768)):
        index = rng.integers(0, vocab, size=rows).astype(np.int64)
        src = rng.normal(size=(rows, d)).astype(np.float32)
        yield f"scatter_add {rows}x{d} -> {vocab}", "scatter_add_rows", (vocab, index, src)


def run_one(mod, fn, args, repeat):
    if fn == "edit_align":
        call = lambda: mod.edit_align(*args)
    else:
        vocab, index, src = args
        dest = np.zeros((vocab, src.shape[1]), dtype=np.float32)
        call = lambda: mod.scatter_add_rows(dest, index, src)
    n = max(1, repeat)
    return min(timeit.repeat(call, number=n, repeat=3)) / n


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<32}{'python (us)':>14}{'cython (us)':>14}{'speedup':>10}")
    for label, fn, a in cases(rng):
        t_py = run_one(_kernels_py, fn, a, args.repeat)
        if _compiled is None:
            print(f"{label:<32}{1e6 * t_py:>14.1f}{'n/a':>14}{'':>10}")
            continue
        t_c = run_one(_compiled, fn, a, args.repeat)
        print(f"{label:<32}{1e6 * t_py:>14.1f}{1e6 * t_c:>14.1f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
