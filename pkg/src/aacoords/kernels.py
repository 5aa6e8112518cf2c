"""
Integration kernels
===================

Dormand-Prince 5(4) with PI step-size control for autonomous fields of the
form ``x' = sum_j coef[j] * X_j(x)``, where ``field(x)`` returns the
matrix whose rows are the ``X_j(x)``.  Both kernels are compiled with
numba when the backend allows it; the same source runs as plain Python
otherwise.

Status codes returned by the kernels:

====  =========================================
0     success
1     step budget exhausted
2     escaped the ball of radius ``escape``
3     non-finite state or derivative
4     step size underflow
====  =========================================
"""

import numpy as np

from ._backend import jit

OK, MAX_STEPS, ESCAPED, NONFINITE, UNDERFLOW = 0, 1, 2, 3, 4

STATUS_TEXT = {
    OK: "ok",
    MAX_STEPS: "step budget exhausted",
    ESCAPED: "trajectory left the domain ball",
    NONFINITE: "non-finite state",
    UNDERFLOW: "step size underflow",
}

# Dormand-Prince tableau
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)


@jit
def _rhs(field, coef, x):
    F = field(x)
    n = x.shape[0]
    d = np.zeros(n)
    for j in range(coef.shape[0]):
        c = coef[j]
        if c != 0.0:
            for i in range(n):
                d[i] += c * F[j, i]
    return d


@jit
def _norm(x):
    s = 0.0
    for i in range(x.shape[0]):
        s += x[i] * x[i]
    return np.sqrt(s)


@jit
def _finite(x):
    for i in range(x.shape[0]):
        if not np.isfinite(x[i]):
            return False
    return True


@jit
def _advance(field, coef, x, k1, t_span, atol, rtol, h_max, max_steps, escape, h0):
    """
    Integrate from ``x`` over a signed time ``t_span`` in place.

    Returns ``(status, steps, h_next, k1)``; ``x`` holds the final state.
    """
    n = x.shape[0]
    direction = 1.0 if t_span >= 0.0 else -1.0
    remaining = abs(t_span)
    h = h0
    err_old = 1e-4
    steps = 0
    y = np.empty(n)
    ynew = np.empty(n)
    while remaining > 0.0:
        if steps >= max_steps:
            return MAX_STEPS, steps, h, k1
        last = False
        # fold a round-off sized remainder into the final step
        if h >= remaining or remaining - h <= 1e-12 * abs(t_span):
            h = remaining
            last = True
        if not last and h < 1e-14 * (1.0 + abs(t_span)):
            return UNDERFLOW, steps, h, k1
        hs = direction * h
        for i in range(n):
            y[i] = x[i] + hs * A21 * k1[i]
        k2 = _rhs(field, coef, y)
        for i in range(n):
            y[i] = x[i] + hs * (A31 * k1[i] + A32 * k2[i])
        k3 = _rhs(field, coef, y)
        for i in range(n):
            y[i] = x[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        k4 = _rhs(field, coef, y)
        for i in range(n):
            y[i] = x[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        k5 = _rhs(field, coef, y)
        for i in range(n):
            y[i] = x[i] + hs * (
                A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]
            )
        k6 = _rhs(field, coef, y)
        for i in range(n):
            ynew[i] = x[i] + hs * (
                B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]
            )
        k7 = _rhs(field, coef, ynew)
        steps += 1
        if not (_finite(ynew) and _finite(k7)):
            # treat as a rejected step; shrink hard
            h *= 0.1
            if h < 1e-14 * (1.0 + abs(t_span)):
                return NONFINITE, steps, h, k1
            continue
        err = 0.0
        for i in range(n):
            e = hs * (
                E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]
            )
            sc = atol + rtol * max(abs(x[i]), abs(ynew[i]))
            err += (e / sc) ** 2
        err = np.sqrt(err / n)
        if err <= 1.0:
            # PI controller (Hairer-Wanner, beta = 0.04)
            fac = err ** 0.17 / err_old ** 0.04 if err > 0.0 else 0.1
            fac = min(5.0, max(0.1, fac / 0.9))
            err_old = max(err, 1e-4)
            for i in range(n):
                x[i] = ynew[i]
                k1[i] = k7[i]
            if last:
                remaining = 0.0
            else:
                remaining -= h
            if _norm(x) > escape:
                return ESCAPED, steps, h, k1
            h = min(h / fac, h_max)
        else:
            fac = min(5.0, max(0.2, err ** 0.2 / 0.9))
            h = h / fac
    return OK, steps, h, k1


@jit
def _initial_step(k1, x, t_span, h_max):
    fx = _norm(k1)
    sx = _norm(x)
    if fx == 0.0:
        h = abs(t_span)
    else:
        h = 0.01 * max(sx, 1e-3) / fx
    return min(max(h, 1e-10), h_max, max(abs(t_span), 1e-300))


@jit
def integrate(field, coef, x0, t_end, atol, rtol, h_max, max_steps, escape):
    """
    Flow ``x0`` for signed time ``t_end`` along ``coef . X``.

    Returns ``(x, status, steps)``.
    """
    x = x0.copy()
    if t_end == 0.0:
        return x, OK, 0
    k1 = _rhs(field, coef, x)
    if not _finite(k1):
        return x, NONFINITE, 0
    h = _initial_step(k1, x, t_end, h_max)
    status, steps, h, k1 = _advance(
        field, coef, x, k1, t_end, atol, rtol, h_max, max_steps, escape, h
    )
    return x, status, steps


@jit
def sample(field, coef, x0, times, atol, rtol, h_max, max_steps, escape):
    """
    States at the sorted signed ``times`` (all of one sign) along ``coef . X``.

    Returns ``(states, status, n_done)``; rows past ``n_done`` are
    undefined when ``status`` is not OK.
    """
    n = x0.shape[0]
    m = times.shape[0]
    out = np.empty((m, n))
    x = x0.copy()
    k1 = _rhs(field, coef, x)
    if not _finite(k1):
        return out, NONFINITE, 0
    t = 0.0
    h = -1.0
    total = 0
    for k in range(m):
        span = times[k] - t
        if span != 0.0:
            if h < 0.0:
                h = _initial_step(k1, x, span, h_max)
            status, steps, h, k1 = _advance(
                field, coef, x, k1, span, atol, rtol, h_max, max_steps - total, escape, h
            )
            total += steps
            if status != OK:
                return out, status, k
            t = times[k]
        for i in range(n):
            out[k, i] = x[i]
    return out, OK, m
