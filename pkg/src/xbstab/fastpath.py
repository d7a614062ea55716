"""Compiled inner loop of the hybrid engine.

One call integrates a single flow segment (between jumps) of the 9-state
closed loop

    y = [tau, z1, z2, zt1, zt2, phi11, phi12, phi21, phi22]

with an adaptive Dormand-Prince 5(4) stepper, guard evaluation at every
accepted step, bisection-based event localization on a cubic-Hermite dense
output, and on-the-fly sample recording. Recording inserts extra samples at
z1 sign changes and wherever the trapezoidal quadrature of |z1| between
consecutive recorded samples would drift from the integrated tau by more
than a small relative budget, so the stored trajectory satisfies the
tau-consistency contract by construction.

The module works without numba (plain Python, slow); with numba present the
segment function is jit-compiled.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:               # pragma: no cover - numba is a declared dep
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


# scalar-parameter vector layout
SC_A, SC_C, SC_D, SC_K = 0, 1, 2, 3
SC_K1P, SC_K2P, SC_K1M, SC_K2M = 4, 5, 6, 7
SC_ZSTAR, SC_THR, SC_LMH2 = 8, 9, 10
SC_P11, SC_P12, SC_P22 = 11, 12, 13
SC_RTOL, SC_ATOL = 14, 15
SC_MAXSTEP, SC_EVENTTOL = 16, 17
SC_TSTOP, SC_RECDT, SC_CONVTOL, SC_TAUBUDGET, SC_Z2FLOOR = 18, 19, 20, 21, 22
N_SC = 23

# segment exit codes
CODE_HORIZON = 0
CODE_DC = 1
CODE_DNC = 2
CODE_DOMAIN = 3
CODE_CONVERGED = 4
CODE_BUFFER_FULL = 5
CODE_STEP_FAILURE = 6

_TAU_ABS_FLOOR = 1e-15


@njit(cache=True)
def _rhs(y, sc, dy):
    a = sc[SC_A]
    c = sc[SC_C]
    d = sc[SC_D]
    k = sc[SC_K]
    zstar = sc[SC_ZSTAR]
    z1 = y[1]
    z2 = y[2]
    zt1 = y[3]
    zt2 = y[4]
    zh2 = z2 + zt2
    u = a * z1 * zh2 - k * (z1 - zstar)
    if z1 > 0.0:
        k1 = sc[SC_K1P]
        k2 = sc[SC_K2P]
    elif z1 < 0.0:
        k1 = sc[SC_K1M]
        k2 = sc[SC_K2M]
    else:
        k1 = 0.0
        k2 = 0.0
    dy[0] = abs(z1)
    dy[1] = -a * z1 * z2 + u
    dy[2] = (c * z2 + d) * z1
    dy[3] = z1 * (-k1 * zt1 - a * zt2)
    dy[4] = z1 * (-k2 * zt1 + c * zt2)
    # dPhi = z1 * M * Phi with the same mode matrix M
    dy[5] = z1 * (-k1 * y[5] - a * y[7])
    dy[6] = z1 * (-k1 * y[6] - a * y[8])
    dy[7] = z1 * (-k2 * y[5] + c * y[7])
    dy[8] = z1 * (-k2 * y[6] + c * y[8])


@njit(cache=True)
def _guard_dc(y, sc):
    zh2 = y[2] + y[4]
    return abs(zh2) >= sc[SC_THR] and zh2 * sc[SC_ZSTAR] >= 0.0


@njit(cache=True)
def _guard_dnc(y, sc):
    zh2 = y[2] + y[4]
    if abs(zh2) > sc[SC_THR] or zh2 * sc[SC_ZSTAR] > 0.0:
        return False
    p11 = sc[SC_P11]
    p12 = sc[SC_P12]
    p22 = sc[SC_P22]
    f11, f12, f21, f22 = y[5], y[6], y[7], y[8]
    # S = Phi' P Phi, symmetric 2x2
    s11 = p11 * f11 * f11 + 2.0 * p12 * f11 * f21 + p22 * f21 * f21
    s22 = p11 * f12 * f12 + 2.0 * p12 * f12 * f22 + p22 * f22 * f22
    s12 = p11 * f11 * f12 + p12 * (f11 * f22 + f12 * f21) + p22 * f21 * f22
    half_tr = 0.5 * (s11 + s22)
    rad = math.sqrt(0.25 * (s11 - s22) * (s11 - s22) + s12 * s12)
    return half_tr + rad <= sc[SC_LMH2]


@njit(cache=True)
def _guard_any(y, sc):
    if _guard_dc(y, sc):
        return CODE_DC
    if _guard_dnc(y, sc):
        return CODE_DNC
    return 0


@njit(cache=True)
def _hermite(t0, h, y0, f0, y1, f1, tt, out):
    th = (tt - t0) / h
    om = 1.0 - th
    h00 = (1.0 + 2.0 * th) * om * om
    h10 = th * om * om
    h01 = th * th * (3.0 - 2.0 * th)
    h11 = th * th * (th - 1.0)
    for m in range(9):
        out[m] = (h00 * y0[m] + h10 * h * f0[m]
                  + h01 * y1[m] + h11 * h * f1[m])


@njit(cache=True)
def _record(buf, n, tt, y):
    if n >= buf.shape[0]:
        return n
    buf[n, 0] = tt
    for m in range(9):
        buf[n, m + 1] = y[m]
    return n + 1


@njit(cache=True)
def _tau_budget(dtau, tau_now, sc):
    return sc[SC_TAUBUDGET] * abs(dtau) + _TAU_ABS_FLOOR * (1.0 + abs(tau_now))


@njit(cache=True)
def _emit_span(buf, n, t0, h, y0, f0, y1, f1, ta, ya_tau, ya_z1, tb, sc,
               tmp):
    """Record samples on (ta, tb] (within the current step) so consecutive
    recorded samples satisfy the tau/trapezoid budget. Returns new n."""
    stack_a = np.empty(64)
    stack_b = np.empty(64)
    stack_d = np.empty(64, dtype=np.int64)
    stack_a[0] = ta
    stack_b[0] = tb
    stack_d[0] = 0
    top = 1
    last_t = ta
    last_tau = ya_tau
    last_z1 = ya_z1
    while top > 0:
        top -= 1
        a = stack_a[top]
        b = stack_b[top]
        depth = stack_d[top]
        _hermite(t0, h, y0, f0, y1, f1, b, tmp)
        dtau = tmp[0] - last_tau
        trap = 0.5 * (abs(last_z1) + abs(tmp[1])) * (b - last_t)
        if (abs(dtau - trap) <= _tau_budget(dtau, tmp[0], sc)
                or (b - a) < 1e-12 or depth >= 12):
            n = _record(buf, n, b, tmp)
            last_t = b
            last_tau = tmp[0]
            last_z1 = tmp[1]
        else:
            m = 0.5 * (a + b)
            stack_a[top] = m
            stack_b[top] = b
            stack_d[top] = depth + 1
            top += 1
            stack_a[top] = a
            stack_b[top] = m
            stack_d[top] = depth + 1
            top += 1
    return n


@njit(cache=True)
def _bisect_guard(t0, h, y0, f0, y1, f1, sc, event_tol, tmp):
    """Earliest guard activation in (t0, t0+h]; guard is false at t0 and
    true at t0+h. Returns (t_event, width)."""
    lo = t0
    hi = t0 + h
    for _ in range(80):
        if hi - lo <= event_tol:
            break
        mid = 0.5 * (lo + hi)
        _hermite(t0, h, y0, f0, y1, f1, mid, tmp)
        if _guard_any(tmp, sc) != 0:
            hi = mid
        else:
            lo = mid
    return hi, hi - lo


@njit(cache=True)
def _bisect_z1_root(t0, h, y0, f0, y1, f1, tmp):
    """Location of the z1 sign change inside the step (z1(t0)*z1(t0+h)<0)."""
    lo = t0
    hi = t0 + h
    s_lo = y0[1] > 0.0
    for _ in range(80):
        if hi - lo <= 1e-13 * (1.0 + abs(hi)):
            break
        mid = 0.5 * (lo + hi)
        _hermite(t0, h, y0, f0, y1, f1, mid, tmp)
        if (tmp[1] > 0.0) == s_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@njit(cache=True)
def flow_segment(y, t_start, sc, buf, n0, ret):
    """Integrate one flow segment from (t_start, y).

    Writes samples into buf starting at row n0 (10 columns: t then y) and
    fills ret = [code, t_final, n_written, bracket_width]. y is updated in
    place to the final state. The caller is expected to have recorded the
    segment-start sample already.
    """
    t = t_start
    cap = buf.shape[0]

    # guard already active at the segment start: zero-width event
    code0 = _guard_any(y, sc)
    if code0 != 0:
        ret[0] = code0
        ret[1] = t
        ret[2] = n0
        ret[3] = 0.0
        return

    f0 = np.empty(9)
    f1 = np.empty(9)
    y1 = np.empty(9)
    tmp = np.empty(9)
    err = np.empty(9)
    stages = np.empty((7, 9))
    ytmp = np.empty(9)

    _rhs(y, sc, f0)
    h = min(sc[SC_MAXSTEP], max(1e-8, 0.01 * sc[SC_MAXSTEP]))
    h = sc[SC_MAXSTEP] * 0.1

    last_rec_t = t
    last_rec_tau = y[0]
    last_rec_z1 = y[1]
    pend = np.empty(9)
    pend_t = t
    have_pend = False
    n = n0

    while True:
        if n > cap - 4096:
            ret[0] = CODE_BUFFER_FULL
            ret[1] = t
            ret[2] = n
            ret[3] = 0.0
            return
        t_left = sc[SC_TSTOP] - t
        if t_left <= 0.0:
            break
        if h > sc[SC_MAXSTEP]:
            h = sc[SC_MAXSTEP]
        if h > t_left:
            h = t_left
        if h < 1e-14:
            ret[0] = CODE_STEP_FAILURE
            ret[1] = t
            ret[2] = n
            ret[3] = 0.0
            return

        # Dormand-Prince 5(4) step (FSAL)
        for m in range(9):
            stages[0, m] = f0[m]
        # stage 2
        for m in range(9):
            ytmp[m] = y[m] + h * (0.2 * stages[0, m])
        _rhs(ytmp, sc, stages[1])
        # stage 3
        for m in range(9):
            ytmp[m] = y[m] + h * (3.0 / 40.0 * stages[0, m]
                                  + 9.0 / 40.0 * stages[1, m])
        _rhs(ytmp, sc, stages[2])
        # stage 4
        for m in range(9):
            ytmp[m] = y[m] + h * (44.0 / 45.0 * stages[0, m]
                                  - 56.0 / 15.0 * stages[1, m]
                                  + 32.0 / 9.0 * stages[2, m])
        _rhs(ytmp, sc, stages[3])
        # stage 5
        for m in range(9):
            ytmp[m] = y[m] + h * (19372.0 / 6561.0 * stages[0, m]
                                  - 25360.0 / 2187.0 * stages[1, m]
                                  + 64448.0 / 6561.0 * stages[2, m]
                                  - 212.0 / 729.0 * stages[3, m])
        _rhs(ytmp, sc, stages[4])
        # stage 6
        for m in range(9):
            ytmp[m] = y[m] + h * (9017.0 / 3168.0 * stages[0, m]
                                  - 355.0 / 33.0 * stages[1, m]
                                  + 46732.0 / 5247.0 * stages[2, m]
                                  + 49.0 / 176.0 * stages[3, m]
                                  - 5103.0 / 18656.0 * stages[4, m])
        _rhs(ytmp, sc, stages[5])
        # 5th-order solution
        for m in range(9):
            y1[m] = y[m] + h * (35.0 / 384.0 * stages[0, m]
                                + 500.0 / 1113.0 * stages[2, m]
                                + 125.0 / 192.0 * stages[3, m]
                                - 2187.0 / 6784.0 * stages[4, m]
                                + 11.0 / 84.0 * stages[5, m])
        _rhs(y1, sc, stages[6])
        # embedded error estimate
        for m in range(9):
            err[m] = h * (71.0 / 57600.0 * stages[0, m]
                          - 71.0 / 16695.0 * stages[2, m]
                          + 71.0 / 1920.0 * stages[3, m]
                          - 17253.0 / 339200.0 * stages[4, m]
                          + 22.0 / 525.0 * stages[5, m]
                          - 1.0 / 40.0 * stages[6, m])
        enorm = 0.0
        for m in range(9):
            sc_m = sc[SC_ATOL] + sc[SC_RTOL] * max(abs(y[m]), abs(y1[m]))
            q = err[m] / sc_m
            enorm += q * q
        enorm = math.sqrt(enorm / 9.0)
        if enorm > 1.0:
            fac = 0.9 * enorm ** -0.2
            if fac < 0.2:
                fac = 0.2
            h *= fac
            continue

        # tau/trapezoid consistency of the step itself: reject steps whose
        # endpoint trapezoid drifts from the integrated tau increment beyond
        # the recording budget (the trapezoid error scales with h^2, so the
        # budget is enforceable through the step size). Steps containing a
        # z1 sign change are exempt: |z1| has a kink there and the recorder
        # splits the step at the root instead.
        tau_ratio = 0.0
        if y[1] * y1[1] >= 0.0 and h > 1e-12:
            dtau_s = y1[0] - y[0]
            trap_s = 0.5 * (abs(y[1]) + abs(y1[1])) * h
            tau_ratio = abs(dtau_s - trap_s) / _tau_budget(dtau_s, y1[0], sc)
            if tau_ratio > 1.0:
                fac = 0.8 * tau_ratio ** -0.5
                if fac < 0.25:
                    fac = 0.25
                h *= fac
                continue

        # accepted step [t, t+h]; stages[6] is f at the new point (FSAL)
        for m in range(9):
            f1[m] = stages[6, m]
        t_new = t + h

        # event detection at the accepted endpoint
        ev = _guard_any(y1, sc)
        t_ev = -1.0
        width = 0.0
        if ev != 0:
            t_ev, width = _bisect_guard(t, h, y, f0, y1, f1, sc,
                                        sc[SC_EVENTTOL], tmp)

        # z1 sign change inside the (possibly truncated) step
        t_hi = t_ev if ev != 0 else t_new
        if y[1] * y1[1] < 0.0:
            r = _bisect_z1_root(t, h, y, f0, y1, f1, tmp)
            if r < t_hi:
                # forced sample at the kink
                if have_pend:
                    n = _record(buf, n, pend_t, pend)
                    have_pend = False
                n = _emit_span(buf, n, t, h, y, f0, y1, f1,
                               t, y[0], y[1], r, sc, tmp)
                _hermite(t, h, y, f0, y1, f1, r, tmp)
                last_rec_t = r
                last_rec_tau = tmp[0]
                last_rec_z1 = tmp[1]

        if ev != 0:
            # flush and record up to the event point, then stop
            if have_pend:
                n = _record(buf, n, pend_t, pend)
                have_pend = False
            base_t = last_rec_t if last_rec_t > t else t
            base_tau = last_rec_tau
            base_z1 = last_rec_z1
            if base_t < t:
                base_t = t
                base_tau = y[0]
                base_z1 = y[1]
            n = _emit_span(buf, n, t, h, y, f0, y1, f1,
                           base_t, base_tau, base_z1, t_ev, sc, tmp)
            _hermite(t, h, y, f0, y1, f1, t_ev, tmp)
            for m in range(9):
                y[m] = tmp[m]
            ret[0] = ev
            ret[1] = t_ev
            ret[2] = n
            ret[3] = width
            return

        # recording decision at the accepted endpoint
        at_stop = t_new >= sc[SC_TSTOP] - 1e-14
        z2_bad = y1[2] <= sc[SC_Z2FLOOR]
        converged = (abs(y1[1]) + abs(y1[2]) + abs(y1[3]) + abs(y1[4])
                     < sc[SC_CONVTOL])
        force = at_stop or z2_bad or converged

        dtau = y1[0] - last_rec_tau
        trap = 0.5 * (abs(last_rec_z1) + abs(y1[1])) * (t_new - last_rec_t)
        coarse_ok = abs(dtau - trap) <= _tau_budget(dtau, y1[0], sc)
        if (not force and coarse_ok
                and (t_new - last_rec_t) < sc[SC_RECDT]):
            for m in range(9):
                pend[m] = y1[m]
            pend_t = t_new
            have_pend = True
        else:
            if have_pend and pend_t > last_rec_t:
                n = _record(buf, n, pend_t, pend)
                last_rec_t = pend_t
                last_rec_tau = pend[0]
                last_rec_z1 = pend[1]
            have_pend = False
            base_t = last_rec_t
            base_tau = last_rec_tau
            base_z1 = last_rec_z1
            if base_t < t:
                base_t = t
                base_tau = y[0]
                base_z1 = y[1]
            n = _emit_span(buf, n, t, h, y, f0, y1, f1,
                           base_t, base_tau, base_z1, t_new, sc, tmp)
            last_rec_t = t_new
            last_rec_tau = y1[0]
            last_rec_z1 = y1[1]

        # advance
        t = t_new
        for m in range(9):
            y[m] = y1[m]
            f0[m] = f1[m]
        fac = 0.9 * enorm ** -0.2 if enorm > 1e-30 else 5.0
        if fac > 5.0:
            fac = 5.0
        if tau_ratio > 1e-4:
            fac_tau = 0.8 * tau_ratio ** -0.5
            if fac_tau < fac:
                fac = fac_tau
            if fac < 1.0:
                fac = 1.0
        h *= fac

        if z2_bad:
            ret[0] = CODE_DOMAIN
            ret[1] = t
            ret[2] = n
            ret[3] = 0.0
            return
        if converged:
            ret[0] = CODE_CONVERGED
            ret[1] = t
            ret[2] = n
            ret[3] = 0.0
            return

    # horizon reached; the final sample was force-recorded above
    ret[0] = CODE_HORIZON
    ret[1] = t
    ret[2] = n
    ret[3] = 0.0


def pack_scalars(params, gains, k, z_star, z_star_init, h_i, cert, solver,
                 t_stop) -> np.ndarray:
    """Scalar-parameter vector for flow_segment."""
    sc = np.zeros(N_SC)
    sc[SC_A] = params.a
    sc[SC_C] = params.c
    sc[SC_D] = params.d
    sc[SC_K] = k
    sc[SC_K1P] = gains.k1_plus
    sc[SC_K2P] = gains.k2_plus
    sc[SC_K1M] = gains.k1_minus
    sc[SC_K2M] = gains.k2_minus
    sc[SC_ZSTAR] = z_star
    sc[SC_THR] = params.d * abs(z_star) / (params.c * z_star_init)
    sc[SC_LMH2] = cert.lambda_min * h_i * h_i
    sc[SC_P11] = cert.P[0, 0]
    sc[SC_P12] = cert.P[0, 1]
    sc[SC_P22] = cert.P[1, 1]
    sc[SC_RTOL] = solver.rel_tol
    sc[SC_ATOL] = solver.abs_tol
    sc[SC_MAXSTEP] = solver.max_step
    sc[SC_EVENTTOL] = solver.event_tol
    sc[SC_TSTOP] = t_stop
    sc[SC_RECDT] = solver.record_interval
    sc[SC_CONVTOL] = solver.abs_tol
    sc[SC_TAUBUDGET] = solver.tau_budget_rel
    sc[SC_Z2FLOOR] = -params.d / params.c
    return sc
