"""Pure-Python/numpy versions of the hot loops in ``_kernels.pyx``."""

from __future__ import annotations

import math

import numpy as np


def select_eval(y, breaks, lo_at, hi_at, const, shift, scale, expo, at_zero, at_inf, which, tol):
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    n = breaks.size
    i = np.searchsorted(breaks, y, side="left")
    ic = np.minimum(i, max(n - 1, 0))
    ip = np.maximum(i - 1, 0)
    at_break = np.full(y.shape, -1, dtype=np.int64)
    if n:
        hit_r = (i < n) & (np.abs(breaks[ic] - y) <= tol)
        hit_l = (i > 0) & (np.abs(y - breaks[ip]) <= tol)
        at_break[hit_l] = ip[hit_l]
        at_break[hit_r] = ic[hit_r]
    vals_at = lo_at if which == 0 else hi_at
    on = at_break >= 0
    out[on] = vals_at[at_break[on]]
    off = ~on
    k = i[off]
    e = expo[k]
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        curve = shift[k] + np.power(scale[k] / y[off], e)
    out[off] = np.where(e == 0.0, const[k], curve)
    out[y == 0.0] = at_zero
    out[np.isposinf(y)] = at_inf
    return out


def chord_sup(xs, us, xq):
    """``max`` over grid pairs ``a <= x <= c`` of the chord through ``(a, U(a))``, ``(c, U(c))``."""
    xs = np.asarray(xs, dtype=float)
    us = np.asarray(us, dtype=float)
    out = np.full(len(xq), -np.inf)
    for q, x in enumerate(xq):
        left = np.nonzero((xs <= x) & np.isfinite(us))[0]
        right = np.nonzero(xs >= x)[0]
        if left.size == 0 or right.size == 0:
            continue
        a = xs[left][:, None]
        ua = us[left][:, None]
        c = xs[right][None, :]
        uc = us[right][None, :]
        width = c - a
        with np.errstate(divide="ignore", invalid="ignore"):
            ch = np.where(width > 0, ((x - a) * uc + (c - x) * ua) / np.where(width > 0, width, 1.0), np.where(a == x, ua, -np.inf))
        ch = np.where(np.isnan(ch), -np.inf, ch)
        out[q] = ch.max()
    return out


def lagrangian_argmax(values, costs, lam):
    """Per-row argmax of ``values - lam * costs``; ties go to the cheaper column."""
    obj = values - lam * costs
    best = obj.max(axis=1, keepdims=True)
    tol = 1e-12 * np.maximum(1.0, np.abs(best))
    ok = obj >= best - tol
    masked = np.where(ok, costs, np.inf)
    return masked.argmin(axis=1)


def enumerate_best(values, costs, budget, tol):
    """Exhaustive search over one column per row; returns ``(value, columns)``.

    Rows are visited depth first with the cheapest completion used to prune
    branches that cannot meet the budget.
    """
    values = np.asarray(values, dtype=float)
    costs = np.asarray(costs, dtype=float)
    m, g = values.shape
    min_tail = np.zeros(m + 1)
    for i in range(m - 1, -1, -1):
        min_tail[i] = min_tail[i + 1] + costs[i].min()
    best = -math.inf
    best_cols = None
    cols = [0] * m

    def rec(i, cost, val):
        nonlocal best, best_cols
        if i == m:
            if val > best:
                best = val
                best_cols = list(cols)
            return
        for j in range(g):
            c = cost + costs[i, j]
            if c + min_tail[i + 1] > budget + tol:
                continue
            cols[i] = j
            rec(i + 1, c, val + values[i, j])

    rec(0, 0.0, 0.0)
    return best, (np.array(best_cols, dtype=np.int64) if best_cols is not None else None)
