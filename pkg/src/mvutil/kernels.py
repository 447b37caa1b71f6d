"""Kernel dispatch: the compiled extension when available, numpy otherwise.

Set ``MVUTIL_PURE=1`` to force the pure-Python implementations.
"""

from __future__ import annotations

import os

if os.environ.get("MVUTIL_PURE"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _kernels_py as _impl

        BACKEND = "python"

import numpy as np


def select_eval(y, breaks, lo_at, hi_at, const, shift, scale, expo, at_zero, at_inf, which, tol):
    return _impl.select_eval(np.ascontiguousarray(y, dtype=float), breaks, lo_at, hi_at, const, shift, scale, expo,
                             float(at_zero), float(at_inf), int(which), float(tol))


def chord_sup(xs, us, xq):
    return _impl.chord_sup(np.ascontiguousarray(xs, dtype=float), np.ascontiguousarray(us, dtype=float),
                           np.ascontiguousarray(xq, dtype=float))


def lagrangian_argmax(values, costs, lam):
    return _impl.lagrangian_argmax(np.ascontiguousarray(values, dtype=float), np.ascontiguousarray(costs, dtype=float),
                                   float(lam))


def enumerate_best(values, costs, budget, tol=1e-12):
    return _impl.enumerate_best(np.ascontiguousarray(values, dtype=float), np.ascontiguousarray(costs, dtype=float),
                                float(budget), float(tol))
