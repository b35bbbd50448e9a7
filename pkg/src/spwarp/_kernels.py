"""Compiled inner loops for the sampler.

These mirror :class:`spwarp.diffeo.Warp` and the Hermite template for the
hot paths (one call per Metropolis-Hastings step); the test suite checks
them against the NumPy implementations.
"""

import math

import numpy as np
from numba import njit

_SQRT2 = math.sqrt(2.0)


@njit(cache=True)
def warp_series(y):
    """Sine-series coefficients c (c[0] = 1) of the warp for unconstrained y."""
    p = y.size
    big = 0.0
    for j in range(p):
        big = max(big, abs(y[j]))
    if big == 0.0:
        c = np.zeros(2 * p + 1)
        c[0] = 1.0
        return c
    ss = 0.0
    for j in range(p):
        ss += (y[j] / big) ** 2
    size = big * math.sqrt(ss)
    r = math.pi * size / math.hypot(1.0, size)
    beta = y * (r / size)
    if r < 1e-6:
        r2 = r * r
        sinc = 1.0 - r2 / 6.0 + r2 * r2 / 120.0
    else:
        sinc = math.sin(r) / r
    B = 2.0 * math.cos(r) * sinc
    C = sinc * sinc
    c = np.zeros(2 * p + 1)
    for j in range(p):
        bj = beta[j]
        c[j + 1] += B * _SQRT2 * bj
        for k in range(p):
            prod = C * bj * beta[k]
            c[j + k + 2] += prod
            d = j - k
            if d < 0:
                d = -d
            if d > 0:
                c[d] += prod
    c[0] = 1.0
    return c


@njit(cache=True)
def warp_value(c, t):
    """gamma(t) and gamma'(t) from series coefficients, scalar t."""
    if t <= 0.0:
        return 0.0, 1.0 + np.sum(c[1:])
    g = t
    d = 1.0
    if t >= 1.0:
        for m in range(1, c.size):
            d += c[m] * (-1.0) ** m
        return 1.0, d
    for m in range(1, c.size):
        a = math.pi * m * t
        g += c[m] * math.sin(a) / (math.pi * m)
        d += c[m] * math.cos(a)
    return min(max(g, 0.0), 1.0), d


@njit(cache=True)
def warp_inverse(c, targets, tol):
    """Bisection to width 1e-3, then safeguarded Newton; one root per target.

    Iteration stops when both |gamma(t) - y| and the last correction are at
    most ``tol``, so ``t`` is resolved even where gamma is nearly flat.
    """
    out = np.empty(targets.size)
    for i in range(targets.size):
        y = targets[i]
        if y <= 0.0:
            out[i] = 0.0
            continue
        if y >= 1.0:
            out[i] = 1.0
            continue
        lo, hi = 0.0, 1.0
        while hi - lo > 1e-3:
            mid = 0.5 * (lo + hi)
            if warp_value(c, mid)[0] > y:
                hi = mid
            else:
                lo = mid
        t = 0.5 * (lo + hi)
        for _ in range(200):
            g, d = warp_value(c, t)
            resid = g - y
            if resid == 0.0:
                break
            if resid > 0.0:
                hi = t
            else:
                lo = t
            step = t - resid / d if d > 0.0 else -1.0
            if step <= lo or step >= hi:
                step = 0.5 * (lo + hi)
            # stop once both the residual and the Newton correction are small
            if abs(resid) <= tol and abs(step - t) <= tol:
                t = step
                break
            t = step
            if hi - lo <= 1e-15:
                break
        out[i] = t
    return out


@njit(cache=True)
def hermite_values(nodes, lam, u):
    out = np.empty(u.size)
    last = nodes.size - 2
    for i in range(u.size):
        x = u[i]
        k = 0
        while k < last and x >= nodes[k + 1]:
            k += 1
        width = nodes[k + 1] - nodes[k]
        t = (x - nodes[k]) / width
        h = (2.0 * t - 3.0) * t * t + 1.0
        out[i] = lam[k] * h + lam[k + 1] * (1.0 - h)
    return out


@njit(cache=True)
def heights(z, n_heights, first_step):
    lam = np.empty(n_heights)
    lam[0] = z[0]
    s = first_step
    for k in range(1, n_heights):
        lam[k] = lam[k - 1] + s * math.exp(z[k])
        s = -s
    return lam


@njit(cache=True)
def hermite_sse(z, n_heights, first_step, nodes, S, y):
    """Residual sum of squares of the Hermite model over a sine table."""
    p = (S.shape[1] - 1) // 2
    lam = heights(z, n_heights, first_step)
    c = warp_series(z[n_heights : n_heights + p])
    u = np.clip(S @ c, 0.0, 1.0)
    f = hermite_values(nodes, lam, u)
    total = 0.0
    for i in range(y.size):
        r = y[i] - f[i]
        total += r * r
    return total
