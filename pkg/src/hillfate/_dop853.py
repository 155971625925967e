"""Compiled DOP853 stepper for the symplectic-chart flow with optional Sundman time.

The Butcher tableau, error weights and dense-output matrix are taken from
scipy; the stepping loop mirrors scipy's step-size control but runs in
numba so that large ensembles stay cheap.

State vector: ``(x, y, px, py, t)``.  In mode 0 the independent variable is
``t``; in mode 1 it is ``tau`` with ``dt = r^beta dtau``, ``beta = (alpha+2)/2``.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _c

N_STAGES = _c.N_STAGES
N_EXT = _c.N_STAGES_EXTENDED
POWER = _c.INTERPOLATOR_POWER
A = np.ascontiguousarray(_c.A)
B = np.ascontiguousarray(_c.B)
C = np.ascontiguousarray(_c.C)
E3 = np.ascontiguousarray(_c.E3)
E5 = np.ascontiguousarray(_c.E5)
D = np.ascontiguousarray(_c.D)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXP = -1.0 / 8.0

# kernel exit codes
ST_TIME = 0
ST_LOW = 1
ST_HIGH = 2
ST_UNDERFLOW = 3
ST_DRIFT = 4
ST_BUFFER = 5
ST_NONFINITE = 6

NDIM = 5


@njit(cache=True)
def rhs(alpha, mode, direction, y, out):
    x = y[0]
    yy = y[1]
    r2 = x * x + yy * yy
    r = np.sqrt(r2)
    u = y[2] + yy
    v = y[3] - x
    g = alpha * (alpha + 2.0) * r ** (-alpha - 2.0)
    vx = -(alpha + 2.0) * x + g * x
    vy = g * yy
    s = direction
    if mode == 1:
        s = direction * r ** (0.5 * (alpha + 2.0))
    out[0] = s * u
    out[1] = s * v
    out[2] = s * (v - vx)
    out[3] = s * (-u - vy)
    out[4] = s


@njit(cache=True)
def energy(alpha, y):
    x = y[0]
    yy = y[1]
    r = np.sqrt(x * x + yy * yy)
    u = y[2] + yy
    v = y[3] - x
    return 0.5 * (u * u + v * v) - 0.5 * (alpha + 2.0) * x * x - (alpha + 2.0) * r ** (-alpha)


@njit(cache=True)
def _radius(y):
    return np.sqrt(y[0] * y[0] + y[1] * y[1])


@njit(cache=True)
def _initial_step(alpha, mode, direction, y, f, rtol, atol):
    d0 = 0.0
    d1 = 0.0
    for i in range(NDIM):
        sc = atol + abs(y[i]) * rtol
        d0 += (y[i] / sc) ** 2
        d1 += (f[i] / sc) ** 2
    d0 = np.sqrt(d0 / NDIM)
    d1 = np.sqrt(d1 / NDIM)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = y + h0 * f
    f1 = np.empty(NDIM)
    rhs(alpha, mode, direction, y1, f1)
    d2 = 0.0
    for i in range(NDIM):
        sc = atol + abs(y[i]) * rtol
        d2 += ((f1[i] - f[i]) / sc) ** 2
    d2 = np.sqrt(d2 / NDIM) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100.0 * h0, h1)


@njit(cache=True)
def integrate_kernel(alpha, y0, mode0, direction, t_end, rtol, atol, h_max, h_init,
                     r_low, r_high, r_sw_in, r_sw_out, e_ref, drift_cap,
                     out_y, out_F, out_h, out_mode):
    """Advance until a stop condition; returns (n_steps, status, mode, h_next).

    ``out_y[0]`` receives ``y0``; step ``i`` maps ``out_y[i]`` to ``out_y[i+1]``
    with dense coefficients ``out_F[i]`` in the step fraction.
    """
    cap = out_h.shape[0]
    beta = 0.5 * (alpha + 2.0)
    y = y0.copy()
    mode = mode0
    K = np.zeros((N_EXT, NDIM))
    f = np.empty(NDIM)
    fn = np.empty(NDIM)
    ytmp = np.empty(NDIM)
    ynew = np.empty(NDIM)
    rhs(alpha, mode, direction, y, f)
    h = h_init
    if h <= 0.0:
        h = _initial_step(alpha, mode, direction, y, f, rtol, atol)
    for i in range(NDIM):
        out_y[0, i] = y[i]
    n = 0
    rejected = False
    while True:
        if n >= cap:
            return n, ST_BUFFER, mode, h
        if mode == 0:
            if h > h_max:
                h = h_max
            rem = direction * (t_end - y[4])
            if h > rem:
                h = rem
        # attempt a step
        while True:
            if h < 1e-15 * max(1.0, abs(y[4])):
                return n, ST_UNDERFLOW, mode, h
            for i in range(NDIM):
                K[0, i] = f[i]
            for s in range(1, N_STAGES):
                for i in range(NDIM):
                    acc = 0.0
                    for j in range(s):
                        acc += A[s, j] * K[j, i]
                    ytmp[i] = y[i] + h * acc
                rhs(alpha, mode, direction, ytmp, fn)
                for i in range(NDIM):
                    K[s, i] = fn[i]
            for i in range(NDIM):
                acc = 0.0
                for j in range(N_STAGES):
                    acc += B[j] * K[j, i]
                ynew[i] = y[i] + h * acc
            ok = True
            for i in range(NDIM):
                if not np.isfinite(ynew[i]):
                    ok = False
            if not ok:
                h *= MIN_FACTOR
                rejected = True
                continue
            rhs(alpha, mode, direction, ynew, fn)
            for i in range(NDIM):
                K[N_STAGES, i] = fn[i]
            e5 = 0.0
            e3 = 0.0
            for i in range(NDIM):
                sc = atol + max(abs(y[i]), abs(ynew[i])) * rtol
                a5 = 0.0
                a3 = 0.0
                for j in range(N_STAGES + 1):
                    a5 += E5[j] * K[j, i]
                    a3 += E3[j] * K[j, i]
                e5 += (a5 / sc) ** 2
                e3 += (a3 / sc) ** 2
            if e5 == 0.0 and e3 == 0.0:
                err = 0.0
            else:
                err = h * e5 / np.sqrt((e5 + 0.01 * e3) * NDIM)
            if err < 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * err ** ERR_EXP)
                if rejected:
                    factor = min(1.0, factor)
                break
            h *= max(MIN_FACTOR, SAFETY * err ** ERR_EXP)
            rejected = True
        # accepted: extra stages for dense output
        for s in range(N_STAGES + 1, N_EXT):
            for i in range(NDIM):
                acc = 0.0
                for j in range(s):
                    acc += A[s, j] * K[j, i]
                ytmp[i] = y[i] + h * acc
            rhs(alpha, mode, direction, ytmp, fn)
            for i in range(NDIM):
                K[s, i] = fn[i]
        for i in range(NDIM):
            dy = ynew[i] - y[i]
            out_F[n, 0, i] = dy
            out_F[n, 1, i] = h * K[0, i] - dy
            out_F[n, 2, i] = 2.0 * dy - h * (K[N_STAGES, i] + K[0, i])
            for m in range(POWER - 3):
                acc = 0.0
                for j in range(N_EXT):
                    acc += D[m, j] * K[j, i]
                out_F[n, 3 + m, i] = h * acc
        out_h[n] = h
        out_mode[n] = mode
        for i in range(NDIM):
            y[i] = ynew[i]
            f[i] = K[N_STAGES, i]
            out_y[n + 1, i] = y[i]
        n += 1
        h *= factor
        rejected = False

        r = _radius(y)
        e = energy(alpha, y)
        # near the singularity E is a difference of O(r^-alpha) terms
        scale = max(abs(e_ref), (alpha + 2.0) * r ** (-alpha))
        if abs(e - e_ref) > drift_cap * scale:
            return n, ST_DRIFT, mode, h
        if r <= r_low:
            return n, ST_LOW, mode, h
        if r >= r_high:
            return n, ST_HIGH, mode, h
        if direction * (t_end - y[4]) <= 0.0:
            return n, ST_TIME, mode, h
        if mode == 0 and r < r_sw_in:
            mode = 1
            h = h / r**beta
            rhs(alpha, mode, direction, y, f)
        elif mode == 1 and r > r_sw_out:
            mode = 0
            h = h * r**beta
            rhs(alpha, mode, direction, y, f)


def dense_eval(F: np.ndarray, y_old: np.ndarray, theta) -> np.ndarray:
    """Evaluate dense polynomials.

    ``F`` has shape (..., POWER, NDIM), ``y_old`` (..., NDIM) and ``theta``
    broadcasts against the leading axes.
    """
    theta = np.asarray(theta, dtype=float)[..., None]
    out = np.zeros(np.broadcast_shapes(theta.shape[:-1] + (NDIM,), y_old.shape))
    for i in range(POWER):
        out = out + F[..., POWER - 1 - i, :]
        out = out * (theta if i % 2 == 0 else 1.0 - theta)
    return out + y_old
