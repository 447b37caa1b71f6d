"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import sys
import timeit

import numpy as np

from mvutil import _kernels_py as py
from mvutil.conjugate import selection_curves
from mvutil.envelope import concavify
from mvutil.utility import eval_utility, s_shaped

try:
    from mvutil import _kernels as cy
except ImportError:
    sys.exit("compiled extension missing; run `python3 setup.py build_ext --inplace` first")


def cases(rng):
    curves = selection_curves(concavify(s_shaped(60.0, 0.5, 2.25)))
    y = np.exp(rng.uniform(-6, 3, 200_000))
    sel = (y, curves.breaks, curves.lo_at, curves.hi_at, curves.const, curves.shift, curves.scale, curves.expo,
           curves.at_zero[0], curves.at_inf, 0, 1e-12)

    u = s_shaped(60.0, 0.5, 2.25)
    xs = np.linspace(0, 200, 801)
    us = np.asarray(eval_utility(u, xs), dtype=float)
    chord = (xs, us, rng.uniform(0, 200, 40))

    v = rng.normal(size=(256, 401))
    c = np.sort(rng.uniform(0, 10, (256, 401)), axis=1)
    lag = (v, c, 0.7)

    ev = rng.normal(size=(5, 12))
    ec = rng.uniform(0, 1, (5, 12))
    enum = (ev, ec, 2.5, 1e-12)
    return [
        ("select_eval (2e5 slopes)", "select_eval", sel),
        ("chord_sup (801 grid, 40 queries)", "chord_sup", chord),
        ("lagrangian_argmax (256 x 401)", "lagrangian_argmax", lag),
        ("enumerate_best (12^5 assignments)", "enumerate_best", enum),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<38}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for label, name, a in cases(rng):
        t_py = min(timeit.repeat(lambda: getattr(py, name)(*a), number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(lambda: getattr(cy, name)(*a), number=1, repeat=args.repeat))
        print(f"{label:<38}{1e3 * t_py:>12.2f}{1e3 * t_cy:>12.2f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
