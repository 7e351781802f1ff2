"""Compiled right-hand sides and the adaptive Runge-Kutta 8(5,3) integrator.

State vectors hold 6 components, or 42 when the state transition matrix is
carried along (row-major 6x6 after the state).
"""

import math

import numpy as np
from numba import njit

from ._dop853_tableau import A, B, C, D, E3, E5, N_STAGES

MODEL_CR3BP = 0
MODEL_HFEM = 1

_A = np.ascontiguousarray(A)
_B = np.ascontiguousarray(B)
_C = np.ascontiguousarray(C)
_D = np.ascontiguousarray(D)
_E3 = np.ascontiguousarray(E3)
_E5 = np.ascontiguousarray(E5)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXP = -1.0 / 8.0

STATUS_OK = 0
STATUS_MAX_STEPS = -1
STATUS_STEP_COLLAPSE = -2


@njit(cache=True)
def _add_point_mass(G, acc, r, gm, sign):
    # acc += sign * gm * r / |r|^3 and G += sign * gm * (I/|r|^3 - 3 r r^T/|r|^5)
    r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2]
    rn = math.sqrt(r2)
    r3 = rn * r2
    r5 = r3 * r2
    for a in range(3):
        acc[a] += sign * gm * r[a] / r3
        for b in range(3):
            G[a, b] -= sign * gm * 3.0 * r[a] * r[b] / r5
        G[a, a] += sign * gm / r3


@njit(cache=True)
def cr3bp_accel_grad(p, y, acc, G):
    """Acceleration (without Coriolis) and position gradient in the BRF."""
    mu = p[0]
    x, yy, z = y[0], y[1], y[2]
    for a in range(3):
        acc[a] = 0.0
        for b in range(3):
            G[a, b] = 0.0
    acc[0] = x
    acc[1] = yy
    G[0, 0] = 1.0
    G[1, 1] = 1.0
    r = np.empty(3)
    r[0] = x + mu
    r[1] = yy
    r[2] = z
    _add_point_mass(G, acc, r, 1.0 - mu, -1.0)
    r[0] = x - 1.0 + mu
    _add_point_mass(G, acc, r, mu, -1.0)


@njit(cache=True)
def hfem_body_positions(p, t, out):
    """Earth (row 0) and Sun (row 1) relative to the Moon in MCI."""
    ct, st = math.cos(t), math.sin(t)
    out[0, 0] = -ct
    out[0, 1] = -st
    out[0, 2] = 0.0
    ang = p[4] * t + p[5]
    out[1, 0] = p[3] * math.cos(ang) - (1.0 - p[0]) * ct
    out[1, 1] = p[3] * math.sin(ang) - (1.0 - p[0]) * st
    out[1, 2] = 0.0


@njit(cache=True)
def hfem_accel_grad(p, t, y, acc, G):
    """Moon-centered point-mass acceleration with Earth and Sun perturbations."""
    for a in range(3):
        acc[a] = 0.0
        for b in range(3):
            G[a, b] = 0.0
    r = np.empty(3)
    r[0], r[1], r[2] = y[0], y[1], y[2]
    _add_point_mass(G, acc, r, p[0], -1.0)
    bodies = np.empty((2, 3))
    hfem_body_positions(p, t, bodies)
    for j in range(2):
        gm = p[1 + j]
        if gm == 0.0:
            continue
        rb = bodies[j]
        # indirect term: -gm * R_j / |R_j|^3, independent of the spacecraft state
        rj2 = rb[0] * rb[0] + rb[1] * rb[1] + rb[2] * rb[2]
        rj3 = rj2 * math.sqrt(rj2)
        for a in range(3):
            acc[a] -= gm * rb[a] / rj3
        # direct term: -gm * (R - R_j) / |R - R_j|^3
        for a in range(3):
            r[a] = y[a] - rb[a]
        _add_point_mass(G, acc, r, gm, -1.0)


@njit(cache=True)
def rhs(model, p, t, y, dy):
    acc = np.empty(3)
    G = np.empty((3, 3))
    if model == MODEL_CR3BP:
        cr3bp_accel_grad(p, y, acc, G)
        acc[0] += 2.0 * y[4]
        acc[1] -= 2.0 * y[3]
    else:
        hfem_accel_grad(p, t, y, acc, G)
    for a in range(3):
        dy[a] = y[3 + a]
        dy[3 + a] = acc[a]
    if y.size == 42:
        # Phi' = [[0, I], [G, K]] Phi with K the Coriolis block
        for j in range(6):
            for a in range(3):
                dy[6 + 6 * a + j] = y[6 + 6 * (3 + a) + j]
            for a in range(3):
                s = 0.0
                for b in range(3):
                    s += G[a, b] * y[6 + 6 * b + j]
                dy[6 + 6 * (3 + a) + j] = s
            if model == MODEL_CR3BP:
                dy[6 + 6 * 3 + j] += 2.0 * y[6 + 6 * 4 + j]
                dy[6 + 6 * 4 + j] -= 2.0 * y[6 + 6 * 3 + j]


@njit(cache=True)
def _rms_norm(x):
    s = 0.0
    for v in x:
        s += v * v
    return math.sqrt(s / x.size)


@njit(cache=True)
def _initial_step(model, p, t0, y0, f0, direction, interval, rtol, atol):
    n = y0.size
    scale = atol + np.abs(y0) * rtol
    d0 = _rms_norm(y0 / scale)
    d1 = _rms_norm(f0 / scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, interval)
    y1 = y0 + h0 * direction * f0
    f1 = np.empty(n)
    rhs(model, p, t0 + h0 * direction, y1, f1)
    d2 = _rms_norm((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    return min(100.0 * h0, h1, interval)


@njit(cache=True)
def _dense_coeffs(model, p, t_old, y_old, y_new, f_new, h, K, F):
    n = y_old.size
    ytmp = np.empty(n)
    for s in range(N_STAGES + 1, 16):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += _A[s, j] * K[j, i]
            ytmp[i] = y_old[i] + h * acc
        rhs(model, p, t_old + _C[s] * h, ytmp, K[s])
    for i in range(n):
        dyi = y_new[i] - y_old[i]
        F[0, i] = dyi
        F[1, i] = h * K[0, i] - dyi
        F[2, i] = 2.0 * dyi - h * (f_new[i] + K[0, i])
        for r in range(4):
            acc = 0.0
            for j in range(16):
                acc += _D[r, j] * K[j, i]
            F[3 + r, i] = h * acc


@njit(cache=True)
def dense_eval(t, t_old, h, y_old, F, out):
    x = (t - t_old) / h
    n = y_old.size
    for i in range(n):
        out[i] = 0.0
    for k in range(7):
        row = 6 - k
        for i in range(n):
            out[i] += F[row, i]
            if k % 2 == 0:
                out[i] *= x
            else:
                out[i] *= 1.0 - x
    for i in range(n):
        out[i] += y_old[i]


@njit(cache=True, nogil=True)
def integrate(model, p, t0, y0, tf, rtol, atol, t_eval, max_steps, store_dense):
    """Integrate from ``t0`` to ``tf`` and interpolate at ``t_eval``.

    ``t_eval`` must be monotone in the direction of integration and lie
    within the span. The accepted-step update uses compensated summation,
    which keeps round-off drift of long propagations below truncation error.

    Returns ``(status, t, y, y_eval, n_steps, n_fev, dense_t, dense_h,
    dense_y, dense_F)``; the dense arrays are empty unless ``store_dense``.
    """
    n = y0.size
    n_eval = t_eval.size
    y_eval = np.empty((n_eval, n))
    y = y0.copy()
    comp = np.zeros(n)
    cap = 256 if store_dense else 0
    d_t = np.empty(cap)
    d_h = np.empty(cap)
    d_y = np.empty((cap, n))
    d_F = np.empty((cap, 7, n))
    n_dense = 0
    direction = 1.0 if tf >= t0 else -1.0
    k_out = 0
    while k_out < n_eval and direction * (t_eval[k_out] - t0) <= 0.0:
        y_eval[k_out] = y0
        k_out += 1
    if tf == t0:
        return (STATUS_OK, t0, y, y_eval, 0, 0, d_t[:0], d_h[:0], d_y[:0], d_F[:0])

    K = np.empty((16, n))
    F = np.empty((7, n))
    f = np.empty(n)
    rhs(model, p, t0, y, f)
    n_fev = 1
    interval = abs(tf - t0)
    h_abs = _initial_step(model, p, t0, y, f, direction, interval, rtol, atol)
    n_fev += 1
    t = t0
    y_new = np.empty(n)
    f_new = np.empty(n)
    ytmp = np.empty(n)
    inc = np.empty(n)
    n_steps = 0
    status = STATUS_OK
    while direction * (tf - t) > 0.0:
        if n_steps >= max_steps:
            status = STATUS_MAX_STEPS
            break
        min_step = 10.0 * abs(np.nextafter(t, direction * np.inf) - t)
        if h_abs < min_step:
            h_abs = min_step
        rejected = False
        accepted = False
        factor = 1.0
        while not accepted:
            if h_abs < min_step:
                status = STATUS_STEP_COLLAPSE
                break
            h = h_abs * direction
            t_new = t + h
            if direction * (t_new - tf) > 0.0:
                t_new = tf
            h = t_new - t
            h_abs = abs(h)
            for i in range(n):
                K[0, i] = f[i]
            for s in range(1, N_STAGES):
                for i in range(n):
                    acc = 0.0
                    for j in range(s):
                        acc += _A[s, j] * K[j, i]
                    ytmp[i] = y[i] + h * acc
                rhs(model, p, t + _C[s] * h, ytmp, K[s])
            for i in range(n):
                acc = 0.0
                for j in range(N_STAGES):
                    acc += _B[j] * K[j, i]
                inc[i] = h * acc
                y_new[i] = y[i] + inc[i]
            rhs(model, p, t_new, y_new, f_new)
            n_fev += N_STAGES
            for i in range(n):
                K[N_STAGES, i] = f_new[i]
            e5 = 0.0
            e3 = 0.0
            finite = True
            for i in range(n):
                sc = atol + max(abs(y[i]), abs(y_new[i])) * rtol
                a5 = 0.0
                a3 = 0.0
                for j in range(N_STAGES + 1):
                    a5 += _E5[j] * K[j, i]
                    a3 += _E3[j] * K[j, i]
                a5 /= sc
                a3 /= sc
                e5 += a5 * a5
                e3 += a3 * a3
                if not math.isfinite(y_new[i]):
                    finite = False
            if not finite or not math.isfinite(e5) or not math.isfinite(e3):
                err = np.inf
            elif e5 == 0.0 and e3 == 0.0:
                err = 0.0
            else:
                err = h_abs * e5 / math.sqrt((e5 + 0.01 * e3) * n)
            if err < 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * err ** ERR_EXP)
                if rejected:
                    factor = min(1.0, factor)
                accepted = True
            else:
                if math.isfinite(err):
                    h_abs *= max(MIN_FACTOR, SAFETY * err ** ERR_EXP)
                else:
                    h_abs *= 0.25
                rejected = True
        if status != STATUS_OK:
            break
        # compensated update of the accepted state
        for i in range(n):
            yk = inc[i] - comp[i]
            tmp = y[i] + yk
            comp[i] = (tmp - y[i]) - yk
            ytmp[i] = y[i]
            y_new[i] = tmp
        need_dense = store_dense or (k_out < n_eval and direction * (t_eval[k_out] - t_new) <= 0.0)
        if need_dense:
            _dense_coeffs(model, p, t, ytmp, y_new, f_new, h, K, F)
            n_fev += 3
            while k_out < n_eval and direction * (t_eval[k_out] - t_new) <= 0.0:
                if t_eval[k_out] == t_new:
                    y_eval[k_out] = y_new
                else:
                    dense_eval(t_eval[k_out], t, h, ytmp, F, y_eval[k_out])
                k_out += 1
            if store_dense:
                if n_dense == cap:
                    cap *= 2
                    d_t2 = np.empty(cap)
                    d_h2 = np.empty(cap)
                    d_y2 = np.empty((cap, n))
                    d_F2 = np.empty((cap, 7, n))
                    d_t2[:n_dense] = d_t[:n_dense]
                    d_h2[:n_dense] = d_h[:n_dense]
                    d_y2[:n_dense] = d_y[:n_dense]
                    d_F2[:n_dense] = d_F[:n_dense]
                    d_t, d_h, d_y, d_F = d_t2, d_h2, d_y2, d_F2
                d_t[n_dense] = t
                d_h[n_dense] = h
                d_y[n_dense] = ytmp
                d_F[n_dense] = F
                n_dense += 1
        for i in range(n):
            y[i] = y_new[i]
            f[i] = f_new[i]
        t = t_new
        n_steps += 1
        h_abs *= factor
    return (status, t, y, y_eval[:k_out], n_steps, n_fev,
            d_t[:n_dense], d_h[:n_dense], d_y[:n_dense], d_F[:n_dense])


@njit(cache=True, nogil=True)
def dense_eval_many(times, d_t, d_h, d_y, d_F, t_end, y_end, out):
    """Evaluate stored dense output at ``times`` (any order)."""
    n_steps = d_t.size
    forward = n_steps == 0 or d_h[0] > 0.0
    for k in range(times.size):
        t = times[k]
        if t == t_end or n_steps == 0:
            out[k] = y_end
            continue
        # locate the step containing t by bisection on step start times
        lo, hi = 0, n_steps - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if (d_t[mid] <= t) if forward else (d_t[mid] >= t):
                lo = mid
            else:
                hi = mid - 1
        dense_eval(t, d_t[lo], d_h[lo], d_y[lo], d_F[lo], out[k])
