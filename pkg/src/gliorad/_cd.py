"""Elastic-net weighted-least-squares coordinate descent kernel.

Both the logistic and the Cox fit reduce each outer likelihood step to

    min  0.5 * sum_i w_i (z_i - b - x_i . beta)^2
         + lam1 * ||beta||_1 + 0.5 * lam2 * ||beta||_2^2

with ``w`` already divided by n so the quadratic part approximates a mean
loss. The kernel owns only this subproblem; outer loops live in
:mod:`gliorad.modeling`.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def enet_wls(X, w, r, beta, b, use_intercept, lam1, lam2, tol, max_passes):
    """Cyclic coordinate descent with an active-set strategy.

    ``X`` must be Fortran-ordered so column sweeps are contiguous. ``r``
    holds the current residual z - b - X beta and is updated in place,
    as is ``beta``. A full sweep runs first; while it keeps moving, sweeps
    restrict to the ever-active set, and a final full sweep must pass the
    tolerance before the solve counts as converged.

    Returns (intercept, passes_used, converged).
    """
    n, p = X.shape
    xv = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += w[i] * X[i, j] * X[i, j]
        xv[j] = s
    wsum = 0.0
    for i in range(n):
        wsum += w[i]
    active = np.zeros(p, np.bool_)
    for j in range(p):
        active[j] = beta[j] != 0.0
    passes = 0
    full = True
    while passes < max_passes:
        maxd = 0.0
        if use_intercept and wsum > 0.0:
            num = 0.0
            for i in range(n):
                num += w[i] * r[i]
            db = num / wsum
            if db != 0.0:
                b += db
                for i in range(n):
                    r[i] -= db
                if abs(db) > maxd:
                    maxd = abs(db)
        for j in range(p):
            if not (full or active[j]):
                continue
            if xv[j] <= 0.0:
                continue
            bj = beta[j]
            rho = bj * xv[j]
            for i in range(n):
                rho += w[i] * X[i, j] * r[i]
            if rho > lam1:
                bn = (rho - lam1) / (xv[j] + lam2)
            elif rho < -lam1:
                bn = (rho + lam1) / (xv[j] + lam2)
            else:
                bn = 0.0
            d = bn - bj
            if d != 0.0:
                beta[j] = bn
                for i in range(n):
                    r[i] -= d * X[i, j]
                active[j] = True
                if abs(d) > maxd:
                    maxd = abs(d)
        passes += 1
        if maxd < tol:
            if full:
                return b, passes, True
            full = True
        else:
            full = False
    return b, passes, False
