"""Hot numerical kernels: system derivatives and the adaptive integrator.

The functions below are written in loop style so that numba can compile
them to machine code.  Backend selection happens once at import:

    STRAIN_CASCADE_BACKEND=numba   compile with numba.njit (default)
    STRAIN_CASCADE_BACKEND=numpy   run the same code uncompiled

The numpy path keeps the package fully functional without a working
numba (at a large speed penalty on long integrations); the benchmark in
``benchmarks/backend_bench.py`` measures the gap.

The integrator is a Dormand-Prince 5(4) embedded Runge-Kutta pair with
FSAL, mixed absolute/relative error control, quartic dense output for
sampling, step rejection on negativity beyond -1e-12 (the exact flow
preserves the nonnegative orthant, so shrinking the step always
recovers), and trailing-window convergence detection.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

__all__ = ["BACKEND", "model_rhs", "lv_rhs", "dopri54",
           "KIND_FULL", "KIND_LV",
           "STATUS_CONVERGED", "STATUS_MAX_TIME", "STATUS_UNDERFLOW",
           "STATUS_NONFINITE", "STATUS_MAX_STEPS"]

_ENV_FLAG = "STRAIN_CASCADE_BACKEND"


def _pick_backend() -> str:
    choice = os.environ.get(_ENV_FLAG, "numba").strip().lower()
    if choice not in ("numba", "numpy"):
        warnings.warn(f"{_ENV_FLAG}={choice!r} not recognized, using numba")
        choice = "numba"
    if choice == "numba":
        try:
            import numba  # noqa: F401
        except ImportError:
            warnings.warn("numba not importable, falling back to numpy backend")
            choice = "numpy"
    return choice


BACKEND = _pick_backend()

if BACKEND == "numba":
    from numba import njit

    def _jit(func):
        return njit(cache=True, nogil=True)(func)
else:
    def _jit(func):
        return func


KIND_FULL = 0  # full SIS system, state (n+1)*p
KIND_LV = 1    # reduced p-dimensional Lotka-Volterra system

STATUS_CONVERGED = 0
STATUS_MAX_TIME = 1
STATUS_UNDERFLOW = 2
STATUS_NONFINITE = 3
STATUS_MAX_STEPS = 4

# Dormand-Prince 5(4) tableau
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = (19372.0 / 6561.0, -25360.0 / 2187.0,
                          64448.0 / 6561.0, -212.0 / 729.0)
_A61, _A62, _A63, _A64, _A65 = (9017.0 / 3168.0, -355.0 / 33.0,
                                46732.0 / 5247.0, 49.0 / 176.0,
                                -5103.0 / 18656.0)
_B1, _B3, _B4, _B5, _B6 = (35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0,
                           -2187.0 / 6784.0, 11.0 / 84.0)
_E1, _E3, _E4, _E5, _E6, _E7 = (71.0 / 57600.0, -71.0 / 16695.0,
                                71.0 / 1920.0, -17253.0 / 339200.0,
                                22.0 / 525.0, -1.0 / 40.0)

# dense-output polynomial (Shampine); row for k2 is zero and omitted
_P_DENSE = np.array([
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0,
     -12715105075.0 / 11282082432.0],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0,
     87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0,
     -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0,
     701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0,
     -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0,
     69997945.0 / 29380423.0],
])

_NEG_FLOOR = 1e-12   # round-off negativity tolerated and clamped
_RING = 9            # snapshots spanning one convergence window


def _model_rhs_impl(y, birth, death, beta, theta, mig, out):
    # full system; layout per patch l: [S, T_1..T_n] at offset l*(n+1)
    p = mig.shape[0]
    n = beta.shape[1]
    w = n + 1
    for l in range(p):
        base = l * w
        s = y[base]
        sum_bt = 0.0
        sum_tht = 0.0
        for k in range(n):
            tk = y[base + 1 + k]
            sum_bt += beta[l, k] * tk
            sum_tht += theta[l, k] * tk
        out[base] = birth[l] - death[l] * s - s * sum_bt + sum_tht
        pref = 0.0  # sum of T_j over milder strains j < k
        for k in range(n):
            tk = y[base + 1 + k]
            suf = 0.0  # sum of beta_jj*T_j over stronger strains j > k
            for j in range(k + 1, n):
                suf += beta[l, j] * y[base + 1 + j]
            out[base + 1 + k] = (s * beta[l, k] * tk
                                 + tk * (beta[l, k] * pref - suf)
                                 - (death[l] + theta[l, k]) * tk)
            pref += tk
    for l in range(p):
        outflow = 0.0
        for i in range(p):
            if i != l:
                outflow += mig[i, l]
        base = l * w
        for c in range(w):
            acc = -outflow * y[base + c]
            for i in range(p):
                if i != l:
                    acc += mig[l, i] * y[i * w + c]
            out[base + c] += acc


def _lv_rhs_impl(t, growth, beta, mig, out):
    # patch-structured Lotka-Volterra: T_l' = T_l(c_l - beta_l T_l) + migration
    p = mig.shape[0]
    for l in range(p):
        outflow = 0.0
        inflow = 0.0
        for i in range(p):
            if i != l:
                outflow += mig[i, l]
                inflow += mig[l, i] * t[i]
        out[l] = t[l] * (growth[l] - beta[l] * t[l]) + inflow - outflow * t[l]


model_rhs = _jit(_model_rhs_impl)
lv_rhs = _jit(_lv_rhs_impl)


def _ode_rhs_impl(kind, y, c1, c2, m1, m2, mig, out):
    # kind FULL: c1=birth, c2=death, m1=beta, m2=theta
    # kind LV:   c1=growth, c2=beta (m1, m2 unused)
    if kind == 0:
        model_rhs(y, c1, c2, m1, m2, mig, out)
    else:
        lv_rhs(y, c1, c2, mig, out)


_ode_rhs = _jit(_ode_rhs_impl)


def _dopri54_impl(kind, y0, c1, c2, m1, m2, mig, sample_ts,
                  rtol, atol, max_time, max_steps, conv_eps, conv_window):
    """Adaptive integration from t=0; returns raw arrays and counters.

    Returns (samples, n_filled, t_end, y_end, status, n_accepted,
    n_rejected, n_clamped).  `samples` rows [0:n_filled] hold the dense
    solution at sample_ts (sorted ascending).
    """
    dim = y0.shape[0]
    ns = sample_ts.shape[0]
    samples = np.zeros((ns, dim))
    si = 0
    t = 0.0
    y = y0.copy()
    while si < ns and sample_ts[si] <= 0.0:
        for i in range(dim):
            samples[si, i] = y[i]
        si += 1

    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    k5 = np.empty(dim)
    k6 = np.empty(dim)
    k7 = np.empty(dim)
    ys = np.empty(dim)
    ynew = np.empty(dim)

    n_acc = 0
    n_rej = 0
    n_clamp = 0

    _ode_rhs(kind, y, c1, c2, m1, m2, mig, k1)
    for i in range(dim):
        if not np.isfinite(k1[i]):
            return samples, si, t, y, STATUS_NONFINITE, n_acc, n_rej, n_clamp

    # initial step size (Hairer-style heuristic)
    d0 = 0.0
    d1 = 0.0
    for i in range(dim):
        sc = atol + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (k1[i] / sc) ** 2
    d0 = np.sqrt(d0 / dim)
    d1 = np.sqrt(d1 / dim)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, max_time)
    for i in range(dim):
        ys[i] = y[i] + h0 * k1[i]
    _ode_rhs(kind, ys, c1, c2, m1, m2, mig, k2)
    d2 = 0.0
    for i in range(dim):
        sc = atol + rtol * abs(y[i])
        d2 += ((k2[i] - k1[i]) / sc) ** 2
    d2 = np.sqrt(d2 / dim) / h0
    if not np.isfinite(d2):
        d2 = 1e20  # probe overflowed: start tiny, adaptation recovers
    dmax = max(d1, d2)
    if dmax <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dmax) ** 0.2
    h = min(100.0 * h0, h1, max_time)

    # convergence ring: snapshots spaced conv_window/(RING-1)
    spacing = conv_window / (_RING - 1)
    ring_t = np.zeros(_RING)
    ring_y = np.zeros((_RING, dim))
    ring_n = 0
    ring_head = 0  # next write slot; oldest entry when ring is full
    next_snap = spacing

    status = STATUS_MAX_TIME
    while t < max_time:
        if n_acc + n_rej >= max_steps:
            status = STATUS_MAX_STEPS
            break
        if h > max_time - t:
            h = max_time - t
        if h < 1e-14 * max(1.0, abs(t)):
            status = STATUS_UNDERFLOW
            break

        for i in range(dim):
            ys[i] = y[i] + h * (_A21 * k1[i])
        _ode_rhs(kind, ys, c1, c2, m1, m2, mig, k2)
        for i in range(dim):
            ys[i] = y[i] + h * (_A31 * k1[i] + _A32 * k2[i])
        _ode_rhs(kind, ys, c1, c2, m1, m2, mig, k3)
        for i in range(dim):
            ys[i] = y[i] + h * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
        _ode_rhs(kind, ys, c1, c2, m1, m2, mig, k4)
        for i in range(dim):
            ys[i] = y[i] + h * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i]
                                + _A54 * k4[i])
        _ode_rhs(kind, ys, c1, c2, m1, m2, mig, k5)
        for i in range(dim):
            ys[i] = y[i] + h * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i]
                                + _A64 * k4[i] + _A65 * k5[i])
        _ode_rhs(kind, ys, c1, c2, m1, m2, mig, k6)
        for i in range(dim):
            ynew[i] = y[i] + h * (_B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i]
                                  + _B5 * k5[i] + _B6 * k6[i])
        _ode_rhs(kind, ynew, c1, c2, m1, m2, mig, k7)

        errsq = 0.0
        finite = True
        for i in range(dim):
            if not np.isfinite(ynew[i]):
                finite = False
                break
            e = h * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i]
                     + _E5 * k5[i] + _E6 * k6[i] + _E7 * k7[i])
            ay = abs(y[i])
            ay2 = abs(ynew[i])
            sc = atol + rtol * (ay if ay > ay2 else ay2)
            errsq += (e / sc) ** 2
        errnorm = np.sqrt(errsq / dim)

        if not finite or not np.isfinite(errnorm):
            n_rej += 1
            h *= 0.25
            continue
        if errnorm > 1.0:
            n_rej += 1
            fac = 0.9 * errnorm ** -0.2
            if fac < 0.2:
                fac = 0.2
            h *= fac
            continue

        ymin = ynew[0]
        for i in range(1, dim):
            if ynew[i] < ymin:
                ymin = ynew[i]
        if ymin < -_NEG_FLOOR:
            # exact solutions stay in the orthant: retry smaller
            n_rej += 1
            h *= 0.5
            continue
        if ymin < 0.0:
            for i in range(dim):
                if ynew[i] < 0.0:
                    ynew[i] = 0.0
                    n_clamp += 1

        t_new = t + h

        if si < ns and sample_ts[si] <= t_new:
            # dense output: y(t+x*h) = y + h*sum_j q_j x^(j+1)
            q0 = np.empty(dim)
            q1 = np.empty(dim)
            q2 = np.empty(dim)
            q3 = np.empty(dim)
            for i in range(dim):
                q0[i] = (_P_DENSE[0, 0] * k1[i] + _P_DENSE[1, 0] * k3[i]
                         + _P_DENSE[2, 0] * k4[i] + _P_DENSE[3, 0] * k5[i]
                         + _P_DENSE[4, 0] * k6[i] + _P_DENSE[5, 0] * k7[i])
                q1[i] = (_P_DENSE[0, 1] * k1[i] + _P_DENSE[1, 1] * k3[i]
                         + _P_DENSE[2, 1] * k4[i] + _P_DENSE[3, 1] * k5[i]
                         + _P_DENSE[4, 1] * k6[i] + _P_DENSE[5, 1] * k7[i])
                q2[i] = (_P_DENSE[0, 2] * k1[i] + _P_DENSE[1, 2] * k3[i]
                         + _P_DENSE[2, 2] * k4[i] + _P_DENSE[3, 2] * k5[i]
                         + _P_DENSE[4, 2] * k6[i] + _P_DENSE[5, 2] * k7[i])
                q3[i] = (_P_DENSE[0, 3] * k1[i] + _P_DENSE[1, 3] * k3[i]
                         + _P_DENSE[2, 3] * k4[i] + _P_DENSE[3, 3] * k5[i]
                         + _P_DENSE[4, 3] * k6[i] + _P_DENSE[5, 3] * k7[i])
            while si < ns and sample_ts[si] <= t_new:
                x = (sample_ts[si] - t) / h
                for i in range(dim):
                    v = y[i] + h * x * (q0[i] + x * (q1[i] + x * (q2[i] + x * q3[i])))
                    if v < 0.0:
                        v = 0.0
                        n_clamp += 1
                    samples[si, i] = v
                si += 1

        if t_new >= next_snap:
            ring_t[ring_head] = t_new
            for i in range(dim):
                ring_y[ring_head, i] = ynew[i]
            ring_head = (ring_head + 1) % _RING
            if ring_n < _RING:
                ring_n += 1
            next_snap = t_new + spacing

        if ring_n == _RING:
            oldest = ring_t[ring_head]
            if t_new - oldest >= conv_window:
                diam = 0.0
                for i in range(dim):
                    lo = ynew[i]
                    hi = ynew[i]
                    for r in range(_RING):
                        v = ring_y[r, i]
                        if v < lo:
                            lo = v
                        if v > hi:
                            hi = v
                    if hi - lo > diam:
                        diam = hi - lo
                if diam <= conv_eps:
                    t = t_new
                    for i in range(dim):
                        y[i] = ynew[i]
                    status = STATUS_CONVERGED
                    break

        t = t_new
        for i in range(dim):
            y[i] = ynew[i]
            k1[i] = k7[i]
        n_acc += 1

        if errnorm < 1e-300:
            fac = 10.0
        else:
            fac = 0.9 * errnorm ** -0.2
            if fac > 10.0:
                fac = 10.0
            elif fac < 0.2:
                fac = 0.2
        h *= fac

    return samples, si, t, y, status, n_acc, n_rej, n_clamp


dopri54 = _jit(_dopri54_impl)
