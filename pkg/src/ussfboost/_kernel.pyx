# cython: language_level=3
"""Compiled closed-loop kernel: the typed twin of ``_kernel_py``.

The loop body here and the one in ``_kernel_py.py`` are kept textually
in step; edit both together.  See ``_kernel_py`` for the step-by-step
account of what one iteration does and for the fault conventions.

Built with plain -O3 (no -ffast-math, no -march=native) so results
match the pure-Python loop to the last bit on the tanh/atan/alg paths;
the erf path may differ by rounding because CPython evaluates erf with
its own series rather than libm's.
"""

import numpy as np

cimport cython
from libc.math cimport (M_PI, atan, copysign, erf, exp, fabs, floor,
                        isfinite, pow, sqrt, tanh)
from posix.time cimport CLOCK_MONOTONIC, clock_gettime, timespec

cdef double _U_MIN = 0.01
cdef double _U_MAX = 0.99
cdef double _DEN_GUARD = 1e-6
cdef double _FILTER_STEPS = 10.0
cdef double _TWO_OVER_PI = 2.0 / M_PI
cdef double _TWO_OVER_SQRT_PI = 2.0 / sqrt(M_PI)


cdef inline double _uf(int kind, double x) noexcept nogil:
    cdef double t, c
    if kind == 0:
        return tanh(x)
    if kind == 1:
        return _TWO_OVER_PI * atan(x)
    if kind == 2:
        # Past |x| = 1 evaluate via 1/x^2 so x*x overflowing to inf
        # cannot collapse the value to 0 (correct limit is +-1).
        if x > 1.0 or x < -1.0:
            return copysign(1.0 / sqrt(1.0 + 1.0 / (x * x)), x)
        return x / sqrt(1.0 + x * x)
    return erf(x)


cdef inline double _ufp(int kind, double x) noexcept nogil:
    cdef double t, c
    if kind == 0:
        t = tanh(x)
        return 1.0 - t * t
    if kind == 1:
        return _TWO_OVER_PI / (1.0 + x * x)
    if kind == 2:
        c = sqrt(1.0 + x * x)
        return 1.0 / (c * c * c)
    return _TWO_OVER_SQRT_PI * exp(-x * x)


cdef inline double _sp(double x, double a) noexcept nogil:
    if x >= 0.0:
        return pow(x, a)
    return -pow(-x, a)


cdef inline double _dob_d(double xt, double ka, double kb, double kc,
                          double th, int kind) noexcept nogil:
    return (-ka * _uf(kind, xt)
            - kb * pow(fabs(xt), th - 1.0) * _uf(kind, _sp(xt, th))
            - kc * xt)


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def run_closed_loop(dict cfg):
    cdef double L = cfg["L"]
    cdef double C = cfg["C"]
    cdef double Vi = cfg["Vi"]
    cdef double vr = cfg["vr"]
    cdef double fs = cfg["fs"]
    cdef double[::1] sched_t = np.ascontiguousarray(cfg["sched_t"],
                                                    dtype=np.float64)
    cdef double[::1] sched_r = np.ascontiguousarray(cfg["sched_r"],
                                                    dtype=np.float64)
    cdef Py_ssize_t n_seg = sched_t.shape[0]
    cdef double h = cfg["h"]
    cdef Py_ssize_t n = cfg["n_steps"]
    cdef bint switched = cfg["switched"]
    cdef double[:, ::1] noise = np.ascontiguousarray(cfg["noise"],
                                                     dtype=np.float64)
    cdef bint has_noise = noise.shape[0] > 0

    cdef double K1 = cfg["K1"]
    cdef double K2 = cfg["K2"]
    cdef double kap = cfg["kappa"]
    cdef double g_min = cfg["g_min"]
    cdef double g_max = cfg["g_max"]

    cdef bint dob_on = cfg["dob_enabled"]
    cdef double dk1 = cfg["dk1"]
    cdef double dk2 = cfg["dk2"]
    cdef double dk3 = cfg["dk3"]
    cdef double dk4 = cfg["dk4"]
    cdef double dk5 = cfg["dk5"]
    cdef double dk6 = cfg["dk6"]
    cdef double th = cfg["theta"]
    cdef int dob_kind = cfg["dob_kind"]

    cdef int ctrl = cfg["ctrl"]
    cdef double k1 = cfg["k1"]
    cdef double k2 = cfg["k2"]
    cdef double k3 = cfg["k3"]
    cdef double k4 = cfg["k4"]
    cdef double k5 = cfg["k5"]
    cdef double k6 = cfg["k6"]
    cdef double io = cfg["iota"]
    cdef int f_kind = cfg["f_kind"]
    cdef int g_kind = cfg["g_kind"]
    cdef bint use_dob = cfg["use_dob"]
    cdef bint cross_e2 = cfg["cross_e2"]

    cdef double kv_p = cfg["kv_p"]
    cdef double kv_i = cfg["kv_i"]
    cdef double kv_d = cfg["kv_d"]
    cdef double ki_p = cfg["ki_p"]
    cdef double ki_i = cfg["ki_i"]
    cdef double ki_d = cfg["ki_d"]
    cdef double iv_clamp = cfg["iv_clamp"]
    cdef double ii_clamp = cfg["ii_clamp"]

    cdef double c1 = cfg["c1"]
    cdef double c2 = cfg["c2"]
    cdef double u_fixed = cfg["u_fixed"]

    cdef Py_ssize_t dec = cfg["decimation"]
    cdef Py_ssize_t skip = cfg["skip_steps"]
    cdef bint audit = cfg["audit"]
    cdef bint timed = cfg["timed"]

    cdef double ca = (L * vr * vr * vr * vr) / (2.0 * Vi * Vi)
    cdef double cb = 0.5 * C * vr * vr
    cdef double beta = h / (_FILTER_STEPS * h + h)

    cdef Py_ssize_t n_rec = n // dec + 1
    tr_t_arr = np.empty(n_rec)
    tr_v0_arr = np.empty(n_rec)
    tr_iL_arr = np.empty(n_rec)
    tr_u_arr = np.empty(n_rec)
    tr_R_arr = np.empty(n_rec)
    tr_Rh_arr = np.empty(n_rec)
    tr_x1_arr = np.empty(n_rec)
    tr_x2_arr = np.empty(n_rec)
    tr_e1_arr = np.empty(n_rec)
    tr_e2_arr = np.empty(n_rec)
    tr_d1_arr = np.empty(n_rec)
    tr_d2_arr = np.empty(n_rec)
    V_full_arr = np.empty(n + 1 if audit else 0)
    step_ns_arr = np.empty(n if timed else 0)
    cdef double[::1] tr_t = tr_t_arr
    cdef double[::1] tr_v0 = tr_v0_arr
    cdef double[::1] tr_iL = tr_iL_arr
    cdef double[::1] tr_u = tr_u_arr
    cdef double[::1] tr_R = tr_R_arr
    cdef double[::1] tr_Rh = tr_Rh_arr
    cdef double[::1] tr_x1 = tr_x1_arr
    cdef double[::1] tr_x2 = tr_x2_arr
    cdef double[::1] tr_e1 = tr_e1_arr
    cdef double[::1] tr_e2 = tr_e2_arr
    cdef double[::1] tr_d1 = tr_d1_arr
    cdef double[::1] tr_d2 = tr_d2_arr
    cdef double[::1] V_full = V_full_arr
    cdef double[::1] step_ns = step_ns_arr

    # Plant state.
    cdef double v0 = cfg["v0_0"]
    cdef double iL = cfg["iL_0"]
    cdef double phase = 0.0
    # Adaptive observer state.
    cdef double iL_hat = iL
    cdef double v0_hat = v0
    cdef double G_hat = cfg["G0"]
    # Disturbance observer state, started on the initial measurement.
    cdef double R_hat = 1.0 / G_hat
    cdef double x1_hat = 0.5 * (C * v0 * v0 + L * iL * iL)
    cdef double x2_hat = Vi * iL - v0 * v0 / R_hat
    cdef double d1_hat = 0.0
    cdef double d2_hat = 0.0
    # Reference tracker state.
    cdef double xr_dot_prev = 0.0
    cdef double ddot_filt = 0.0
    cdef bint primed = 0
    # PID state.
    cdef double int_v = 0.0
    cdef double int_i = 0.0
    cdef double dv_filt = 0.0
    cdef double di_filt = 0.0
    cdef double ev_prev = 0.0
    cdef double ei_prev = 0.0
    cdef bint pid_primed = 0

    cdef double u = 0.5
    cdef double u_prev = 0.5
    cdef Py_ssize_t seg = 0
    cdef Py_ssize_t rec = 0
    cdef Py_ssize_t v_count = 0
    cdef Py_ssize_t t_count = 0
    cdef double sum_sq = 0.0
    cdef double sum_abs = 0.0
    cdef Py_ssize_t err_steps = 0
    cdef double max_d1 = 0.0
    cdef double max_d2 = 0.0
    cdef Py_ssize_t sing = 0
    cdef Py_ssize_t proj = 0
    cdef int fault = 0
    cdef Py_ssize_t fault_step = -1

    cdef double e1 = 0.0
    cdef double e2 = 0.0

    cdef Py_ssize_t k
    cdef timespec ts0, ts1
    cdef double t, R, v0m, iLm, v0sq, x1, x2, d1, d2
    cdef double G_dot, xr, xr_dot, raw, xr_ddot
    cdef double d1h, d2h, e1s, e2s, alpha, dalpha, alpha_dot, ec, nu
    cdef double num, den
    cdef double ev, raw_dv, dv, iv_c, ei, raw_di, di, ii_c, u_raw
    cdef double err, ad
    cdef double one_mu, nu_a, s1a, s2a, s1b, s2b, s1c, s2c, s1d, s2d
    cdef double u_eff, pa1, pa2, va, ia, pb1, pb2, vb, ib
    cdef double pc1, pc2, vc, ic, pd1, pd2
    cdef double one_u, oi, ov, og, Rh
    cdef double qa1, qa2, qa3, qb1, qb2, qb3, qc1, qc2, qc3
    cdef double qd1, qd2, qd3, t1, t2, t3

    for k in range(n + 1):
        if timed:
            clock_gettime(CLOCK_MONOTONIC, &ts0)
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
                     - k2 * pow(fabs(e1), io - 1.0) * _uf(f_kind, e1s)
                     - k3 * e1
                     + xr_dot - d1h)
            e2 = x2 - alpha
            e2s = _sp(e2, io)
            dalpha = (-k1 * _ufp(f_kind, e1)
                      - k2 * (io - 1.0) * _sp(e1, io - 2.0)
                      * _uf(f_kind, e1s)
                      - k2 * io * pow(fabs(e1), 2.0 * io - 2.0)
                      * _ufp(f_kind, e1s)
                      - k3)
            alpha_dot = (x2 - xr_dot) * dalpha + xr_ddot
            ec = e2 if cross_e2 else e1
            nu = (-k4 * _uf(g_kind, e2)
                  - k5 * pow(fabs(e2), io - 1.0) * _uf(g_kind, e2s)
                  - k6 * ec
                  + alpha_dot - d2h)
            num = Vi * Vi / L + 2.0 * v0sq / (R_hat * R_hat * C) - nu
            den = Vi * v0m / L + 2.0 * iLm * v0m / (R_hat * C)
            if fabs(den) < _DEN_GUARD:
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
            if fabs(den) < _DEN_GUARD:
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

        if not (isfinite(u) and isfinite(e1) and isfinite(e2)):
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
            sum_abs += fabs(err)
            err_steps += 1
        ad = fabs(d1)
        if ad > max_d1:
            max_d1 = ad
        ad = fabs(d2)
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
            phase -= floor(phase)
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
        if not (isfinite(v0) and isfinite(iL)):
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
        if not (isfinite(iL_hat) and isfinite(v0_hat)
                and isfinite(G_hat)):
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
            clock_gettime(CLOCK_MONOTONIC, &ts1)
            step_ns[t_count] = ((ts1.tv_sec - ts0.tv_sec) * 1e9
                                + (ts1.tv_nsec - ts0.tv_nsec))
            t_count += 1

    return {
        "t": tr_t_arr[:rec], "v0": tr_v0_arr[:rec], "iL": tr_iL_arr[:rec],
        "u": tr_u_arr[:rec], "R": tr_R_arr[:rec], "R_hat": tr_Rh_arr[:rec],
        "x1": tr_x1_arr[:rec], "x2": tr_x2_arr[:rec],
        "e1": tr_e1_arr[:rec], "e2": tr_e2_arr[:rec],
        "d1": tr_d1_arr[:rec], "d2": tr_d2_arr[:rec],
        "V_full": V_full_arr[:v_count],
        "step_ns": step_ns_arr[:t_count],
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
