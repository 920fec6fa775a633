"""Independent reference computations used by the tests.

None of these call into the risk-set code paths they check.
"""
import math

import numpy as np


def explicit_loglik(x, time, status, beta):
    """Breslow partial log-likelihood for one covariate, looped subject by subject."""
    ll = 0.0
    for i in range(len(time)):
        if status[i] != 1:
            continue
        denom = sum(math.exp(beta * x[j]) for j in range(len(time)) if time[j] >= time[i])
        ll += beta * x[i] - math.log(denom)
    return ll


def golden_max(f, lo=-10.0, hi=10.0, tol=1e-11):
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2


def brute_force_beta(x, time, status):
    return golden_max(lambda b: explicit_loglik(x, time, status, b))


def random_binary_instance(rng, n_max=10):
    """Small one-binary-covariate instance whose partial-likelihood maximiser is interior."""
    while True:
        n = int(rng.integers(4, n_max + 1))
        time = rng.integers(1, 8, size=n).astype(float)
        status = rng.integers(0, 2, size=n)
        x = rng.integers(0, 2, size=n).astype(float)
        if status.sum() == 0 or x.min() == x.max():
            continue
        b = brute_force_beta(x, time, status)
        f = lambda v: explicit_loglik(x, time, status, v)
        curvature = 2 * f(b) - f(b + 0.5) - f(b - 0.5)
        if abs(b) < 8 and curvature > 1e-4:
            return x, time, status, b


def finite_difference_gradient(x, time, status, beta, h=1e-5):
    return (explicit_loglik(x, time, status, beta + h) - explicit_loglik(x, time, status, beta - h)) / (2 * h)


def hand_nelson_aalen(time, status, t):
    total = 0.0
    for u in sorted(set(time[i] for i in range(len(time)) if status[i] == 1)):
        if u > t:
            break
        d = sum(1 for i in range(len(time)) if time[i] == u and status[i] == 1)
        r = sum(1 for i in range(len(time)) if time[i] >= u)
        total += d / r
    return total


def type7_quantile(values, q):
    v = sorted(values)
    h = (len(v) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (h - lo) * (v[hi] - v[lo])


def type4_quantile(values, q):
    """Linear interpolation of the empirical CDF: position n*q among 1-based order statistics."""
    v = sorted(values)
    h = len(v) * q
    if h <= 1:
        return v[0]
    if h >= len(v):
        return v[-1]
    k = math.floor(h)
    return v[k - 1] + (h - k) * (v[k] - v[k - 1])
