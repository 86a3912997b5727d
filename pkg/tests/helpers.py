"""Finite-difference utilities shared by the gradient tests."""

import numpy as np


def as_float64(params):
    return {k: v.astype(np.float64) for k, v in params.items()}


def central_difference(f, params, eps=1e-5):
    """Numerical gradient of scalar ``f(params)`` w.r.t. every entry."""
    out = {}
    for k, p in params.items():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            hi = f(params)
            p[i] = old - eps
            lo = f(params)
            p[i] = old
            g[i] = (hi - lo) / (2 * eps)
        out[k] = g
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for k in analytic:
        a, n = np.asarray(analytic[k], np.float64), np.asarray(numeric[k], np.float64)
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        # entries where both are ~0 are exactly consistent
        err[(np.abs(a) < 1e-9) & (np.abs(n) < 1e-9)] = 0.0
        worst = max(worst, float(err.max()))
    return worst


# acceptance lines, printed in the terminal summary by conftest
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    return passed
