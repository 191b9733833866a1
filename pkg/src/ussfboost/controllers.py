"""Controllers in the energy domain, plus the cascaded PID baseline.

Fixed-time controller.  Errors e1 = x1 - xr_hat, e2 = x2 - alpha with

    alpha = -k1 f(e1) - k2 |e1|^(i-1) f(sp(e1, i)) - k3 e1 + xr_hat_dot
    nu    = -k4 g(e2) - k5 |e2|^(i-1) g(sp(e2, i)) - k6 e1
            + alpha_dot_hat

where f, g are saturating functions, i (iota) > 2 the fixed-time
exponent, and sp the signed power.  The cross term uses e1, which
cancels the e1 e2 product in the Lyapunov derivative exactly at k6 = 1;
a configuration switch selects the more conventional -k6 e2 instead.
With estimated disturbances available, alpha subtracts d1_hat and nu
subtracts d2_hat.

alpha_dot_hat applies the chain rule to alpha, dropping the unmeasured
disturbance from the e1 derivative:

    alpha_dot_hat = (x2 - xr_hat_dot) * dalpha/de1 + xr_hat_ddot
    dalpha/de1 = -k1 f'(e1) - k2 (i-1) sp(e1, i-2) f(sp(e1, i))
                 - k2 i |e1|^(2i-2) f'(sp(e1, i)) - k3

Exponent parity: the factors written |.|^(i-1) and |.|^(2i-2) are even
and sp(., i), sp(., i-2) odd, so each feedback term is odd in its error
and e * term >= -eps stays sign-correct for any real iota > 2.  At the
default iota = 3 every exponent reduces to the plain integer power.

Gain conditions k3 > 1/2 and k6 > 1/2 are enforced at construction; the
remaining gains must be positive.  The certified saturation residual
gives the Lyapunov drift bound checked by the audit:

    dV/dt <= -kap1 V^{1/2} - kap2 V^{iota/2} + C_resid
    kap1 = 2 min(k1, k4),  kap2 = 2 min(k2, k5),
    C_resid = (d1_bar^2 + d2_bar^2)/2 + (k1+k2+k4+k5) eps.

Reference derivatives.  xr_hat depends on time only through
G_hat = 1/R_hat:  xr_hat = ca G_hat^2 + cb  with ca = L vr^4 / (2 Vi^2)
and cb = C vr^2 / 2, so xr_hat_dot = 2 ca G_hat dG_hat/dt follows the
adaptation law analytically; xr_hat_ddot is a backward difference of
xr_hat_dot smoothed by a first-order low-pass with time constant 10 h.

PID baseline.  A cascaded design: the voltage loop maps e_v = vr - v0
to a current reference, the current loop maps e_i = alpha - iL to the
duty ratio.  Rectangle-rule integrators with conditional integration
(frozen while the duty is clamped and the error pushes further into the
clamp) and first-order filtered derivatives (time constant 10 h).

Proportional baseline.  alpha = -c1 e1 + xr_hat_dot and
nu = -c2 e2 + xr_hat_ddot: the same structure with the saturating and
fixed-time terms removed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

from .plant import PlantParams
from .ussf import cpow, resolve, signed_power

REF_FILTER_STEPS = 10.0   # Low-pass time constant for xr_hat_ddot, in steps
PID_FILTER_STEPS = 10.0   # Derivative filter time constant, in steps


class ControllerFault(RuntimeError):
    """The control law produced a non-finite command."""


@dataclass(frozen=True)
class FtcGains:
    k1: float
    k2: float
    k3: float
    k4: float
    k5: float
    k6: float
    iota: float = 3.0
    f_kind: str = "alg"
    g_kind: str = "alg"

    def __post_init__(self):
        for name in ("k1", "k2", "k3", "k4", "k5", "k6"):
            if not (getattr(self, name) > 0.0):
                raise ValueError(f"FtcGains.{name} must be positive")
        if not (self.k3 > 0.5):
            raise ValueError("k3 must exceed 1/2 for the Lyapunov drift "
                             "bound to hold")
        if not (self.k6 > 0.5):
            raise ValueError("k6 must exceed 1/2 for the Lyapunov drift "
                             "bound to hold")
        if not (self.iota > 2.0):
            raise ValueError("iota must exceed 2")
        resolve(self.f_kind)
        resolve(self.g_kind)


@dataclass
class FtcState:
    alpha_prev: float = 0.0          # Last virtual control [W]
    singularity_flag: bool = False   # Duty inversion hit its guard


class FtcOutput(NamedTuple):
    nu: float       # Virtual input command [W/s]
    alpha: float    # Virtual control for x2 [W]
    e1: float       # Energy error [J]
    e2: float       # Power error [W]


def ftc_step(gains: FtcGains, st: Optional[FtcState], transformed,
             xr_hat: float, xr_hat_dot: float, xr_hat_ddot: float,
             d_hat: Optional[Tuple[float, float]] = None,
             cross_term: str = "e1") -> FtcOutput:
    """One evaluation of the fixed-time control law.

    transformed carries the measured (x1, x2); d_hat, when given, is the
    (d1_hat, d2_hat) pair from the disturbance observer.  st, if passed,
    records the virtual control for cross-checks.
    """
    f = resolve(gains.f_kind)
    g = resolve(gains.g_kind)
    io = gains.iota
    x1 = transformed.x1
    x2 = transformed.x2
    d1h, d2h = d_hat if d_hat is not None else (0.0, 0.0)

    e1 = x1 - xr_hat
    e1s = signed_power(e1, io)
    alpha = (-gains.k1 * f.fn(e1)
             - gains.k2 * cpow(abs(e1), io - 1.0) * f.fn(e1s)
             - gains.k3 * e1
             + xr_hat_dot - d1h)
    e2 = x2 - alpha
    e2s = signed_power(e2, io)

    dalpha_de1 = (-gains.k1 * f.deriv(e1)
                  - gains.k2 * (io - 1.0) * signed_power(e1, io - 2.0)
                  * f.fn(e1s)
                  - gains.k2 * io * cpow(abs(e1), 2.0 * io - 2.0)
                  * f.deriv(e1s)
                  - gains.k3)
    alpha_dot_hat = (x2 - xr_hat_dot) * dalpha_de1 + xr_hat_ddot

    ec = e2 if cross_term == "e2" else e1
    nu = (-gains.k4 * g.fn(e2)
          - gains.k5 * cpow(abs(e2), io - 1.0) * g.fn(e2s)
          - gains.k6 * ec
          + alpha_dot_hat - d2h)

    if not (math.isfinite(nu) and math.isfinite(alpha)):
        raise ControllerFault(
            f"non-finite command: nu={nu!r} alpha={alpha!r} "
            f"e1={e1!r} e2={e2!r}")
    if st is not None:
        st.alpha_prev = alpha
    return FtcOutput(nu=nu, alpha=alpha, e1=e1, e2=e2)


def baseline_step(c1: float, c2: float, transformed, xr_hat: float,
                  xr_hat_dot: float, xr_hat_ddot: float) -> FtcOutput:
    """Proportional energy-domain law: the fixed-time terms removed."""
    if not (c1 > 0.0 and c2 > 0.0):
        raise ValueError("baseline gains must be positive")
    e1 = transformed.x1 - xr_hat
    alpha = -c1 * e1 + xr_hat_dot
    e2 = transformed.x2 - alpha
    nu = -c2 * e2 + xr_hat_ddot
    if not math.isfinite(nu):
        raise ControllerFault(f"non-finite command: nu={nu!r}")
    return FtcOutput(nu=nu, alpha=alpha, e1=e1, e2=e2)


def lyapunov_value(e1: float, e2: float) -> float:
    """Composite error energy V = (e1^2 + e2^2) / 2."""
    return 0.5 * (e1 * e1 + e2 * e2)


class ReferenceTracker:
    """Energy reference and its first two time derivatives.

    update() consumes the current conductance estimate and its analytic
    rate (the adaptation law), returning (xr_hat, xr_hat_dot,
    xr_hat_ddot).  The second derivative is a filtered backward
    difference and reads zero until two samples have arrived.
    """

    def __init__(self, p: PlantParams, vr: Optional[float] = None):
        vref = p.vr if vr is None else vr
        # Multiplication order matters: the closed-loop kernel computes
        # these constants the same way, and traces are compared bitwise.
        self.ca = (p.L * vref * vref * vref * vref) / (2.0 * p.Vi * p.Vi)
        self.cb = 0.5 * p.C * vref * vref
        self.xr_hat_prev = 0.0
        self.xr_hat_dot_prev = 0.0
        self.ddot_filt = 0.0
        self._primed = False

    def update(self, G_hat: float, G_dot: float,
               h: float) -> Tuple[float, float, float]:
        xr = self.ca * G_hat * G_hat + self.cb
        xr_dot = 2.0 * self.ca * G_hat * G_dot
        if self._primed:
            raw = (xr_dot - self.xr_hat_dot_prev) / h
        else:
            raw = 0.0
            self._primed = True
        beta = h / (REF_FILTER_STEPS * h + h)
        self.ddot_filt += (raw - self.ddot_filt) * beta
        self.xr_hat_prev = xr
        self.xr_hat_dot_prev = xr_dot
        return xr, xr_dot, self.ddot_filt


def reference_derivatives(r_hat_series, p: PlantParams, h: float,
                          vr: Optional[float] = None):
    """Reference energy and derivatives from a sampled R_hat series.

    Offline counterpart of ReferenceTracker for recorded traces: the
    conductance rate comes from backward differences of the series
    rather than the adaptation law.  Needs at least 3 samples; the
    leading derivative samples are zero-padded.
    """
    import numpy as np

    r = np.asarray(r_hat_series, dtype=np.float64)
    if r.ndim != 1 or r.size < 3:
        raise ValueError("need a 1-D series of at least 3 samples")
    if not (h > 0.0):
        raise ValueError("step size must be positive")
    if np.any(~np.isfinite(r)) or np.any(r <= 0.0):
        raise ValueError("R_hat series must be finite and positive")

    vref = p.vr if vr is None else vr
    ca = (p.L * vref * vref * vref * vref) / (2.0 * p.Vi * p.Vi)
    cb = 0.5 * p.C * vref * vref

    g = 1.0 / r
    xr = ca * g * g + cb
    g_dot = np.zeros_like(g)
    g_dot[1:] = np.diff(g) / h
    xr_dot = 2.0 * ca * g * g_dot

    xr_ddot = np.zeros_like(xr)
    beta = h / (REF_FILTER_STEPS * h + h)
    filt = 0.0
    for k in range(1, xr.size):
        raw = (xr_dot[k] - xr_dot[k - 1]) / h
        filt += (raw - filt) * beta
        xr_ddot[k] = filt
    return xr, xr_dot, xr_ddot


@dataclass(frozen=True)
class PidGains:
    kv_p: float = 5.0      # Voltage loop P [A/V]
    kv_i: float = 40.0     # Voltage loop I [A/(V s)]
    kv_d: float = 0.0      # Voltage loop D [A s/V]
    ki_p: float = 20.0     # Current loop P [1/A]
    ki_i: float = 1.0      # Current loop I [1/(A s)]
    ki_d: float = 0.0      # Current loop D [s/A]
    iv_clamp: float = 1e9  # |integral| bound, voltage loop [V s]
    ii_clamp: float = 1e9  # |integral| bound, current loop [A s]

    def __post_init__(self):
        if not (self.iv_clamp > 0.0 and self.ii_clamp > 0.0):
            raise ValueError("integral clamps must be positive")


@dataclass
class PidState:
    int_v: float = 0.0
    int_i: float = 0.0
    dv_filt: float = 0.0
    di_filt: float = 0.0
    ev_prev: float = 0.0
    ei_prev: float = 0.0
    primed: bool = False


def pid_step(gains: PidGains, meas: Tuple[float, float], vr: float,
             h: float, state: PidState, u_min: float = 0.01,
             u_max: float = 0.99) -> float:
    """One cascaded PID evaluation; mutates state, returns the duty.

    Anti-windup by conditional integration: when the duty saturates and
    a loop's error would push it further into the clamp, that loop's
    integral keeps its previous value for the step.
    """
    v0m, iLm = meas
    ev = vr - v0m

    beta = h / (PID_FILTER_STEPS * h + h)
    raw_dv = (ev - state.ev_prev) / h if state.primed else 0.0
    dv = state.dv_filt + (raw_dv - state.dv_filt) * beta

    int_v = state.int_v + ev * h
    if int_v > gains.iv_clamp:
        int_v = gains.iv_clamp
    elif int_v < -gains.iv_clamp:
        int_v = -gains.iv_clamp
    alpha = gains.kv_p * ev + gains.kv_i * int_v + gains.kv_d * dv

    ei = alpha - iLm
    raw_di = (ei - state.ei_prev) / h if state.primed else 0.0
    di = state.di_filt + (raw_di - state.di_filt) * beta

    int_i = state.int_i + ei * h
    if int_i > gains.ii_clamp:
        int_i = gains.ii_clamp
    elif int_i < -gains.ii_clamp:
        int_i = -gains.ii_clamp
    u_raw = gains.ki_p * ei + gains.ki_i * int_i + gains.ki_d * di

    if u_raw > u_max:
        u = u_max
        if ev > 0.0:
            int_v = state.int_v
        if ei > 0.0:
            int_i = state.int_i
    elif u_raw < u_min:
        u = u_min
        if ev < 0.0:
            int_v = state.int_v
        if ei < 0.0:
            int_i = state.int_i
    else:
        u = u_raw

    if not math.isfinite(u):
        raise ControllerFault(f"non-finite duty command: {u_raw!r}")

    state.int_v = int_v
    state.int_i = int_i
    state.dv_filt = dv
    state.di_filt = di
    state.ev_prev = ev
    state.ei_prev = ei
    state.primed = True
    return u
