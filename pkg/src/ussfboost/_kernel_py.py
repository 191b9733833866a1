"""Pure-Python closed-loop kernel.

This module and ``_kernel.pyx`` implement the same simulation loop and
are kept textually in step; edit both together.  The compiled one is
just this file with C types, so any behavioural fix belongs in both.

``run_closed_loop`` consumes the flat dict built by
``config.kernel_config`` and returns trace arrays plus accumulated
metrics.  Per step it

    1. reads the scheduled load and the (optionally noisy) measurement,
    2. maps to energy coordinates and updates the reference and its
       derivatives from the conductance estimate,
    3. evaluates the selected controller and inverts for the duty,
    4. records a trace row every ``decimation`` steps,
    5. accumulates error metrics,
    6. advances the disturbance observer (fed the virtual input implied
       by the duty actually applied), the plant (averaged or PWM
       switched) and the adaptive observer.

Iteration k = n_steps only evaluates outputs and records the final row.
Faults stop the loop and are reported, not raised: 1 plant, 2
controller, 3 observer; ``fault_step`` holds the step index.
"""

from __future__ import annotations

import math
import time

import numpy as np

_U_MIN = 0.01
_U_MAX = 0.99
_DEN_GUARD = 1e-6
_FILTER_STEPS = 10.0
_TWO_OVER_PI = 2.0 / math.pi
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


def _pow(x: float, a: float) -> float:
    # C pow semantics: saturate to inf on overflow (libm never raises).
    try:
        return math.pow(x, a)
    except OverflowError:
        return math.inf


def _uf(kind: int, x: float) -> float:
    if kind == 0:
        return math.tanh(x)
    if kind == 1:
        return _TWO_OVER_PI * math.atan(x)
    if kind == 2:
        if x > 1.0 or x < -1.0:
            return math.copysign(1.0 / math.sqrt(1.0 + 1.0 / (x * x)), x)
        return x / math.sqrt(1.0 + x * x)
    return math.erf(x)


def _ufp(kind: int, x: float) -> float:
    if kind == 0:
        t = math.tanh(x)
        return 1.0 - t * t
    if kind == 1:
        return _TWO_OVER_PI / (1.0 + x * x)
    if kind == 2:
        c = math.sqrt(1.0 + x * x)
        return 1.0 / (c * c * c)
    return _TWO_OVER_SQRT_PI * math.exp(-x * x)


def _sp(x: float, a: float) -> float:
    if x >= 0.0:
        return _pow(x, a)
    return -_pow(-x, a)


def _dob_d(xt: float, ka: float, kb: float, kc: float, th: float,
           kind: int) -> float:
    return (-ka * _uf(kind, xt)
            - kb * _pow(abs(xt), th - 1.0) * _uf(kind, _sp(xt, th))
            - kc * xt)


def run_closed_loop(cfg: dict) -> dict:
    L = float(cfg["L"])
    C = float(cfg["C"])
    Vi = float(cfg["Vi"])
    vr = float(cfg["vr"])
    fs = float(cfg["fs"])
    sched_t = np.ascontiguousarray(cfg["sched_t"], dtype=np.float64)
    sched_r = np.ascontiguousarray(cfg["sched_r"], dtype=np.float64)
    n_seg = sched_t.shape[0]
    h = float(cfg["h"])
    n = int(cfg["n_steps"])
    switched = int(cfg["switched"])
    noise = np.ascontiguousarray(cfg["noise"], dtype=np.float64)
    has_noise = noise.shape[0] > 0

    K1 = float(cfg["K1"])
    K2 = float(cfg["K2"])
    kap = float(cfg["kappa"])
    g_min = float(cfg["g_min"])
    g_max = float(cfg["g_max"])

    dob_on = int(cfg["dob_enabled"])
    dk1 = float(cfg["dk1"])
    dk2 = float(cfg["dk2"])
    dk3 = float(cfg["dk3"])
    dk4 = float(cfg["dk4"])
    dk5 = float(cfg["dk5"])
    dk6 = float(cfg["dk6"])
    th = float(cfg["theta"])
    dob_kind = int(cfg["dob_kind"])

    ctrl = int(cfg["ctrl"])
    k1 = float(cfg["k1"])
    k2 = float(cfg["k2"])
    k3 = float(cfg["k3"])
    k4 = float(cfg["k4"])
    k5 = float(cfg["k5"])
    k6 = float(cfg["k6"])
    io = float(cfg["iota"])
    f_kind = int(cfg["f_kind"])
    g_kind = int(cfg["g_kind"])
    use_dob = int(cfg["use_dob"])
    cross_e2 = int(cfg["cross_e2"])

    kv_p = float(cfg["kv_p"])
    kv_i = float(cfg["kv_i"])
    kv_d = float(cfg["kv_d"])
    ki_p = float(cfg["ki_p"])
    ki_i = float(cfg["ki_i"])
    ki_d = float(cfg["ki_d"])
    iv_clamp = float(cfg["iv_clamp"])
    ii_clamp = float(cfg["ii_clamp"])

    c1 = float(cfg["c1"])
    c2 = float(cfg["c2"])
    u_fixed = float(cfg["u_fixed"])

    dec = int(cfg["decimation"])
    skip = int(cfg["skip_steps"])
    audit = int(cfg["audit"])
    timed = int(cfg["timed"])

    ca = (L * vr * vr * vr * vr) / (2.0 * Vi * Vi)
    cb = 0.5 * C * vr * vr
    beta = h / (_FILTER_STEPS * h + h)

    n_rec = n // dec + 1
    tr_t = np.empty(n_rec)
    tr_v0 = np.empty(n_rec)
    tr_iL = np.empty(n_rec)
    tr_u = np.empty(n_rec)
    tr_R = np.empty(n_rec)
    tr_Rh = np.empty(n_rec)
    tr_x1 = np.empty(n_rec)
    tr_x2 = np.empty(n_rec)
    tr_e1 = np.empty(n_rec)
    tr_e2 = np.empty(n_rec)
    tr_d1 = np.empty(n_rec)
    tr_d2 = np.empty(n_rec)
    V_full = np.empty(n + 1 if audit else 0)
    step_ns = np.empty(n if timed else 0)

    # Plant state.
    v0 = float(cfg["v0_0"])
    iL = float(cfg["iL_0"])
    phase = 0.0
    # Adaptive observer state.
    iL_hat = iL
    v0_hat = v0
    G_hat = float(cfg["G0"])
    # Disturbance observer state, started on the initial measurement.
    R_hat = 1.0 / G_hat
    x1_hat = 0.5 * (C * v0 * v0 + L * iL * iL)
    x2_hat = Vi * iL - v0 * v0 / R_hat
    d1_hat = 0.0
    d2_hat = 0.0
    # Reference tracker state.
    xr_dot_prev = 0.0
    ddot_filt = 0.0
    primed = 0
    # PID state.
    int_v = 0.0
    int_i = 0.0
    dv_filt = 0.0
    di_filt = 0.0
    ev_prev = 0.0
    ei_prev = 0.0
    pid_primed = 0

    u = 0.5
    u_prev = 0.5
    seg = 0
    rec = 0
    v_count = 0
    t_count = 0
    sum_sq = 0.0
    sum_abs = 0.0
    err_steps = 0
    max_d1 = 0.0
    max_d2 = 0.0
    sing = 0
    proj = 0
    fault = 0
    fault_step = -1

    e1 = 0.0
    e2 = 0.0

    for k in range(n + 1):
        if timed:
            t0_ns = time.perf_counter_ns()
        t = k * h
        while seg + 1 < n_seg and sched_t[seg + 1] <= t:
            seg += 1
        R = sched_r[seg]
        if has_noise:
            v0m = v0 + noise[k, 0]
            iLm = iL + noise[k, 1]
        else:
            v0m = v0
            iLm = iL
        R_hat = 1.0 / G_hat

        v0sq = v0m * v0m
        x1 = 0.5 * (C * v0sq + L * iLm * iLm)
        x2 = Vi * iLm - v0sq / R_hat
        d1 = v0sq / R_hat - v0sq / R
        d2 = (2.0 / (R_hat * C)) * (v0sq / R - v0sq / R_hat)

        G_dot = -kap * v0m * (v0m - v0_hat)
        xr = ca * G_hat * G_hat + cb
        xr_dot = 2.0 * ca * G_hat * G_dot
        if primed:
            raw = (xr_dot - xr_dot_prev) / h
        else:
            raw = 0.0
            primed = 1
        ddot_filt += (raw - ddot_filt) * beta
        xr_dot_prev = xr_dot
        xr_ddot = ddot_filt

        if ctrl == 0:
            # Saturating fixed-time backstepping in energy coordinates.
            d1h = d1_hat if use_dob else 0.0
            d2h = d2_hat if use_dob else 0.0
            e1 = x1 - xr
            e1s = _sp(e1, io)
            alpha = (-k1 * _uf(f_kind, e1)
                     - k2 * _pow(abs(e1), io - 1.0) * _uf(f_kind, e1s)
                     - k3 * e1
                     + xr_dot - d1h)
            e2 = x2 - alpha
            e2s = _sp(e2, io)
            dalpha = (-k1 * _ufp(f_kind, e1)
                      - k2 * (io - 1.0) * _sp(e1, io - 2.0)
                      * _uf(f_kind, e1s)
                      - k2 * io * _pow(abs(e1), 2.0 * io - 2.0)
                      * _ufp(f_kind, e1s)
                      - k3)
            alpha_dot = (x2 - xr_dot) * dalpha + xr_ddot
            ec = e2 if cross_e2 else e1
            nu = (-k4 * _uf(g_kind, e2)
                  - k5 * _pow(abs(e2), io - 1.0) * _uf(g_kind, e2s)
                  - k6 * ec
                  + alpha_dot - d2h)
            num = Vi * Vi / L + 2.0 * v0sq / (R_hat * R_hat * C) - nu
            den = Vi * v0m / L + 2.0 * iLm * v0m / (R_hat * C)
            if abs(den) < _DEN_GUARD:
                u = u_prev
                sing += 1
            else:
                u = 1.0 - num / den
                if u < _U_MIN:
                    u = _U_MIN
                elif u > _U_MAX:
                    u = _U_MAX
        elif ctrl == 1:
            # Cascaded PID: voltage loop -> current reference -> duty.
            ev = vr - v0m
            raw_dv = (ev - ev_prev) / h if pid_primed else 0.0
            dv = dv_filt + (raw_dv - dv_filt) * beta
            iv_c = int_v + ev * h
            if iv_c > iv_clamp:
                iv_c = iv_clamp
            elif iv_c < -iv_clamp:
                iv_c = -iv_clamp
            alpha = kv_p * ev + kv_i * iv_c + kv_d * dv
            ei = alpha - iLm
            raw_di = (ei - ei_prev) / h if pid_primed else 0.0
            di = di_filt + (raw_di - di_filt) * beta
            ii_c = int_i + ei * h
            if ii_c > ii_clamp:
                ii_c = ii_clamp
            elif ii_c < -ii_clamp:
                ii_c = -ii_clamp
            u_raw = ki_p * ei + ki_i * ii_c + ki_d * di
            if u_raw > _U_MAX:
                u = _U_MAX
                if ev > 0.0:
                    iv_c = int_v
                if ei > 0.0:
                    ii_c = int_i
            elif u_raw < _U_MIN:
                u = _U_MIN
                if ev < 0.0:
                    iv_c = int_v
                if ei < 0.0:
                    ii_c = int_i
            else:
                u = u_raw
            int_v = iv_c
            int_i = ii_c
            dv_filt = dv
            di_filt = di
            ev_prev = ev
            ei_prev = ei
            pid_primed = 1
            e1 = ev
            e2 = ei
        elif ctrl == 2:
            # Proportional energy-domain law.
            e1 = x1 - xr
            alpha = -c1 * e1 + xr_dot
            e2 = x2 - alpha
            nu = -c2 * e2 + xr_ddot
            num = Vi * Vi / L + 2.0 * v0sq / (R_hat * R_hat * C) - nu
            den = Vi * v0m / L + 2.0 * iLm * v0m / (R_hat * C)
            if abs(den) < _DEN_GUARD:
                u = u_prev
                sing += 1
            else:
                u = 1.0 - num / den
                if u < _U_MIN:
                    u = _U_MIN
                elif u > _U_MAX:
                    u = _U_MAX
        else:
            # Constant duty.
            u = u_fixed
            e1 = 0.0
            e2 = 0.0

        if not (math.isfinite(u) and math.isfinite(e1)
                and math.isfinite(e2)):
            fault = 2
            fault_step = k
            break

        if audit:
            V_full[v_count] = 0.5 * (e1 * e1 + e2 * e2)
            v_count += 1
        if k % dec == 0:
            tr_t[rec] = t
            tr_v0[rec] = v0
            tr_iL[rec] = iL
            tr_u[rec] = u
            tr_R[rec] = R
            tr_Rh[rec] = R_hat
            tr_x1[rec] = x1
            tr_x2[rec] = x2
            tr_e1[rec] = e1
            tr_e2[rec] = e2
            tr_d1[rec] = d1
            tr_d2[rec] = d2
            rec += 1
        if k == n:
            break

        err = v0 - vr
        if k >= skip:
            sum_sq += err * err
            sum_abs += abs(err)
            err_steps += 1
        ad = abs(d1)
        if ad > max_d1:
            max_d1 = ad
        ad = abs(d2)
        if ad > max_d2:
            max_d2 = ad
        u_prev = u

        if dob_on:
            # Virtual input implied by the duty actually applied.
            one_mu = 1.0 - u
            nu_a = (Vi * Vi / L + 2.0 * v0sq / (R_hat * R_hat * C)
                    - (Vi * v0m / L + 2.0 * iLm * v0m / (R_hat * C))
                    * one_mu)
            s1a = x2 + _dob_d(x1_hat - x1, dk1, dk2, dk3, th, dob_kind)
            s2a = nu_a + _dob_d(x2_hat - x2, dk4, dk5, dk6, th, dob_kind)
            s1b = x2 + _dob_d(x1_hat + 0.5 * h * s1a - x1,
                              dk1, dk2, dk3, th, dob_kind)
            s2b = nu_a + _dob_d(x2_hat + 0.5 * h * s2a - x2,
                                dk4, dk5, dk6, th, dob_kind)
            s1c = x2 + _dob_d(x1_hat + 0.5 * h * s1b - x1,
                              dk1, dk2, dk3, th, dob_kind)
            s2c = nu_a + _dob_d(x2_hat + 0.5 * h * s2b - x2,
                                dk4, dk5, dk6, th, dob_kind)
            s1d = x2 + _dob_d(x1_hat + h * s1c - x1,
                              dk1, dk2, dk3, th, dob_kind)
            s2d = nu_a + _dob_d(x2_hat + h * s2c - x2,
                                dk4, dk5, dk6, th, dob_kind)
            x1_hat = x1_hat + (h / 6.0) * (s1a + 2.0 * s1b + 2.0 * s1c
                                           + s1d)
            x2_hat = x2_hat + (h / 6.0) * (s2a + 2.0 * s2b + 2.0 * s2c
                                           + s2d)
            d1_hat = _dob_d(x1_hat - x1, dk1, dk2, dk3, th, dob_kind)
            d2_hat = _dob_d(x2_hat - x2, dk4, dk5, dk6, th, dob_kind)

        # Plant advance: duty and load held across the RK4 stages.
        u_eff = u
        if switched:
            u_eff = 1.0 if phase < u else 0.0
            phase = phase + h * fs
            phase -= math.floor(phase)
        pa1 = (1.0 - u_eff) * iL / C - v0 / (R * C)
        pa2 = -(1.0 - u_eff) * v0 / L + Vi / L
        va = v0 + 0.5 * h * pa1
        ia = iL + 0.5 * h * pa2
        pb1 = (1.0 - u_eff) * ia / C - va / (R * C)
        pb2 = -(1.0 - u_eff) * va / L + Vi / L
        vb = v0 + 0.5 * h * pb1
        ib = iL + 0.5 * h * pb2
        pc1 = (1.0 - u_eff) * ib / C - vb / (R * C)
        pc2 = -(1.0 - u_eff) * vb / L + Vi / L
        vc = v0 + h * pc1
        ic = iL + h * pc2
        pd1 = (1.0 - u_eff) * ic / C - vc / (R * C)
        pd2 = -(1.0 - u_eff) * vc / L + Vi / L
        v0 = v0 + (h / 6.0) * (pa1 + 2.0 * pb1 + 2.0 * pc1 + pd1)
        iL = iL + (h / 6.0) * (pa2 + 2.0 * pb2 + 2.0 * pc2 + pd2)
        if not (math.isfinite(v0) and math.isfinite(iL)):
            fault = 1
            fault_step = k
            break

        # Adaptive observer advance: measurement and commanded duty held.
        one_u = 1.0 - u
        oi = iL_hat
        ov = v0_hat
        og = G_hat
        Rh = 1.0 / og
        qa1 = -one_u * ov / L + Vi / L + K1 * (iLm - oi)
        qa2 = one_u * oi / C - v0m / (Rh * C) + K2 * (v0m - ov)
        qa3 = -kap * v0m * (v0m - ov)
        t1 = oi + 0.5 * h * qa1
        t2 = ov + 0.5 * h * qa2
        t3 = og + 0.5 * h * qa3
        Rh = 1.0 / t3
        qb1 = -one_u * t2 / L + Vi / L + K1 * (iLm - t1)
        qb2 = one_u * t1 / C - v0m / (Rh * C) + K2 * (v0m - t2)
        qb3 = -kap * v0m * (v0m - t2)
        t1 = oi + 0.5 * h * qb1
        t2 = ov + 0.5 * h * qb2
        t3 = og + 0.5 * h * qb3
        Rh = 1.0 / t3
        qc1 = -one_u * t2 / L + Vi / L + K1 * (iLm - t1)
        qc2 = one_u * t1 / C - v0m / (Rh * C) + K2 * (v0m - t2)
        qc3 = -kap * v0m * (v0m - t2)
        t1 = oi + h * qc1
        t2 = ov + h * qc2
        t3 = og + h * qc3
        Rh = 1.0 / t3
        qd1 = -one_u * t2 / L + Vi / L + K1 * (iLm - t1)
        qd2 = one_u * t1 / C - v0m / (Rh * C) + K2 * (v0m - t2)
        qd3 = -kap * v0m * (v0m - t2)
        iL_hat = oi + (h / 6.0) * (qa1 + 2.0 * qb1 + 2.0 * qc1 + qd1)
        v0_hat = ov + (h / 6.0) * (qa2 + 2.0 * qb2 + 2.0 * qc2 + qd2)
        G_hat = og + (h / 6.0) * (qa3 + 2.0 * qb3 + 2.0 * qc3 + qd3)
        if not (math.isfinite(iL_hat) and math.isfinite(v0_hat)
                and math.isfinite(G_hat)):
            fault = 3
            fault_step = k
            break
        if G_hat < g_min:
            G_hat = g_min
            proj += 1
        elif G_hat > g_max:
            G_hat = g_max
            proj += 1

        if timed:
            step_ns[t_count] = time.perf_counter_ns() - t0_ns
            t_count += 1

    return {
        "t": tr_t[:rec], "v0": tr_v0[:rec], "iL": tr_iL[:rec],
        "u": tr_u[:rec], "R": tr_R[:rec], "R_hat": tr_Rh[:rec],
        "x1": tr_x1[:rec], "x2": tr_x2[:rec],
        "e1": tr_e1[:rec], "e2": tr_e2[:rec],
        "d1": tr_d1[:rec], "d2": tr_d2[:rec],
        "V_full": V_full[:v_count],
        "step_ns": step_ns[:t_count],
        "sum_sq_err": sum_sq, "sum_abs_err": sum_abs,
        "err_steps": err_steps,
        "max_abs_d1": max_d1, "max_abs_d2": max_d2,
        "sing_count": sing, "proj_count": proj,
        "fault": fault, "fault_step": fault_step,
        "final": {
            "v0": v0, "iL": iL, "u": u, "G_hat": G_hat,
            "v0_hat": v0_hat, "iL_hat": iL_hat,
            "x1_hat": x1_hat, "x2_hat": x2_hat,
            "d1_hat": d1_hat, "d2_hat": d2_hat, "phase": phase,
        },
    }
