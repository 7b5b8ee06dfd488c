"""Compiled scalar kernels shared by the Python API and the epoch loop.

Every public operation that touches a single instance (predict, sgd_step,
td_step, ...) goes through these functions, so the per-instance Python path
and the compiled epoch loop are bit-identical by construction.

Controller state rows are laid out as (v1, v2, z1, z2, z3, u_prev) for ADRC
and (err_sum, err_prev) for PID. ADRC gain vectors are
(h, td_accel, beta1, beta2, beta3, b, b0, b1, b2); PID gain vectors are
(kp, ki, kd).
"""

import math

import numpy as np
from numba import njit

KIND_SGD = 0
KIND_PID = 1
KIND_ADRC = 2

ADRC_STATE_WIDTH = 6
PID_STATE_WIDTH = 2


@njit(cache=True)
def sgn(x):
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


@njit(cache=True)
def dot_rows(x, y, m, n):
    s = 0.0
    for k in range(x.shape[1]):
        s += x[m, k] * y[n, k]
    return s


@njit(cache=True)
def sgd_update(x, y, m, n, err, eta, lam):
    """Simultaneous update of rows x[m] and y[n]; False if any entry overflows."""
    ok = True
    for k in range(x.shape[1]):
        xo = x[m, k]
        yo = y[n, k]
        xn = xo + eta * (err * yo - lam * xo)
        yn = yo + eta * (err * xo - lam * yo)
        x[m, k] = xn
        y[n, k] = yn
        if not (math.isfinite(xn) and math.isfinite(yn)):
            ok = False
    return ok


@njit(cache=True)
def td_update(v1, v2, target, h, td_accel):
    l = -td_accel * sgn(v1 - target + v2 * abs(v2) / (2.0 * td_accel))
    return v1 + h * v2, v2 + h * l


@njit(cache=True)
def eso_update(z1, z2, z3, u_prev, prediction, h, beta1, beta2, beta3, b):
    e1 = z1 - prediction
    return (
        z1 + h * (z2 - beta1 * e1),
        z2 + h * (z3 - beta2 * e1 + b * u_prev),
        z3 - h * beta3 * e1,
    )


@njit(cache=True)
def ec_output(target, prediction, v2, z2, z3, b0, b1, b2):
    e1 = target - prediction
    e2 = v2 - z2
    u0 = b1 * e1 + b2 * e2
    return (u0 - z3) / b0


@njit(cache=True)
def adrc_tick(states, i, target, prediction, g):
    h = g[0]
    v1, v2 = td_update(states[i, 0], states[i, 1], target, h, g[1])
    z1, z2, z3 = eso_update(
        states[i, 2], states[i, 3], states[i, 4], states[i, 5],
        prediction, h, g[2], g[3], g[4], g[5],
    )
    u = ec_output(target, prediction, v2, z2, z3, g[6], g[7], g[8])
    states[i, 0] = v1
    states[i, 1] = v2
    states[i, 2] = z1
    states[i, 3] = z2
    states[i, 4] = z3
    states[i, 5] = u
    return u


@njit(cache=True)
def pid_tick(states, i, target, prediction, g):
    e = target - prediction
    u = g[0] * e + g[1] * states[i, 0] + g[2] * (e - states[i, 1])
    states[i, 0] += e
    states[i, 1] = e
    return u


@njit(cache=True)
def refine_one(kind, states, i, target, prediction, g):
    if kind == KIND_ADRC:
        return adrc_tick(states, i, target, prediction, g)
    if kind == KIND_PID:
        return pid_tick(states, i, target, prediction, g)
    return target - prediction


@njit(cache=True)
def run_epoch(x, y, rows, cols, vals, order, kind, gains, states, ticks, eta, lam):
    """One pass over ``order``; returns -1 or the index of the diverged instance."""
    for j in range(order.shape[0]):
        i = order[j]
        m = rows[i]
        n = cols[i]
        target = vals[i]
        prediction = dot_rows(x, y, m, n)
        err = refine_one(kind, states, i, target, prediction, gains)
        if ticks.shape[0] > 0:
            ticks[i] += 1
        if not math.isfinite(err):
            return i
        if not sgd_update(x, y, m, n, err, eta, lam):
            return i
    return -1


@njit(cache=True)
def squared_error_sum(x, y, rows, cols, vals, lo, hi):
    """Neumaier-compensated sum of squared residuals over instances [lo, hi)."""
    s = 0.0
    c = 0.0
    for i in range(lo, hi):
        r = vals[i] - dot_rows(x, y, rows[i], cols[i])
        t = r * r
        u = s + t
        if abs(s) >= abs(t):
            c += (s - u) + t
        else:
            c += (t - u) + s
        s = u
    return s + c


@njit(cache=True)
def predict_many(x, y, rows, cols):
    out = np.empty(rows.shape[0])
    for i in range(rows.shape[0]):
        out[i] = dot_rows(x, y, rows[i], cols[i])
    return out


_warm = False


def warmup():
    """Compile (or load from cache) every kernel so timed loops exclude JIT cost."""
    global _warm
    if _warm:
        return
    x = np.full((1, 1), 0.1)
    y = np.full((1, 1), 0.1)
    idx = np.zeros(1, dtype=np.int64)
    vals = np.ones(1)
    # dataset arrays are read-only, which numba types separately
    ro_idx = idx.copy()
    ro_idx.flags.writeable = False
    ro_vals = vals.copy()
    ro_vals.flags.writeable = False
    for kind, width, ng in ((KIND_SGD, 0, 0), (KIND_PID, PID_STATE_WIDTH, 3), (KIND_ADRC, ADRC_STATE_WIDTH, 9)):
        states = np.zeros((1 if width else 0, width))
        gains = np.ones(ng)
        for r, v in ((idx, vals), (ro_idx, ro_vals)):
            run_epoch(x.copy(), y.copy(), r, r, v, idx, kind, gains, states, idx.copy(), 0.01, 0.0)
    for r, v in ((idx, vals), (ro_idx, ro_vals)):
        squared_error_sum(x, y, r, r, v, 0, 1)
        predict_many(x, y, r, r)
    _warm = True
