"""Load-conductance adaptive observer and fixed-time disturbance observer.

Adaptive observer.  With measured (v0, iL), applied duty u and the
conductance estimate G_hat = 1 / R_hat, the observer runs

    diL_hat/dt = -(1 - u) v0_hat / L + Vi / L + K1 (iL - iL_hat)
    dv0_hat/dt =  (1 - u) iL_hat / C - v0 / (R_hat C) + K2 (v0 - v0_hat)
    dG_hat/dt  = -kappa v0 (v0 - v0_hat)

The composite quadratic form C vt^2 + L it^2 + Gt^2 / kappa (vt, it, Gt
the three errors) is non-increasing along these dynamics, which is what
the convergence tests check.  G_hat is projected onto [g_min, g_max]
after each step; a projection event is flagged, since it means the load
estimate hit its configured range.

Disturbance observer.  Given transformed measurements (x1, x2) and the
virtual input nu actually applied, the observer integrates

    dx1_hat/dt = x2 + d1_hat        dx2_hat/dt = nu + d2_hat

with the algebraic fixed-time injections (xt1 = x1_hat - x1, etc.)

    d1_hat = -kappa1 r(xt1) - kappa2 |xt1|^(theta-1) r(sp(xt1, theta))
             - kappa3 xt1
    d2_hat = -kappa4 q(xt2) - kappa5 |xt2|^(theta-1) q(sp(xt2, theta))
             - kappa6 xt2

where r and q are saturating functions, sp is the signed power and
theta > 2.  The |.|^(theta-1) factor keeps each injection odd in the
error, which the scalar error dynamics xt1' = d1_hat - d1 need in order
to contract from either side.

Both observers advance with the same RK4 stepping as the plant, holding
measurements constant across the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Tuple

from .plant import PlantParams
from .ussf import cpow, resolve, signed_power

G_MIN_DEFAULT = 1e-3   # Conductance floor [S] (R_hat <= 1000 ohm)
G_MAX_DEFAULT = 10.0   # Conductance ceiling [S] (R_hat >= 0.1 ohm)


class ObserverFault(RuntimeError):
    """An observer state became non-finite."""


@dataclass(frozen=True)
class AdaptiveObserverState:
    iL_hat: float                 # Inductor current estimate [A]
    v0_hat: float                 # Output voltage estimate [V]
    G_hat: float                  # Load conductance estimate [S]
    K1: float                     # Current injection gain [1/s]
    K2: float                     # Voltage injection gain [1/s]
    kappa: float                  # Adaptation rate [S/(V^2 s)]
    g_min: float = G_MIN_DEFAULT
    g_max: float = G_MAX_DEFAULT
    projected: bool = False       # G_hat hit a projection bound last step

    def __post_init__(self):
        if not (self.g_min > 0.0 and self.g_max > self.g_min):
            raise ValueError("need 0 < g_min < g_max")
        if not (self.g_min <= self.G_hat <= self.g_max):
            raise ValueError(f"G_hat {self.G_hat!r} outside "
                             f"[{self.g_min}, {self.g_max}]")

    @property
    def R_hat(self) -> float:
        return 1.0 / self.G_hat


def adaptive_observer_step(obs: AdaptiveObserverState,
                           meas: Tuple[float, float], u: float,
                           p: PlantParams, h: float) -> AdaptiveObserverState:
    """Advance the adaptive observer one RK4 step of size h.

    meas is the measured (v0, iL) pair, held constant across the step.
    Returns a new state with G_hat projected onto [g_min, g_max].
    """
    v0m, iLm = meas
    if not (math.isfinite(v0m) and math.isfinite(iLm)):
        raise ObserverFault("non-finite measurement")

    def rhs(y):
        iLh, v0h, Gh = y
        R_hat = 1.0 / Gh
        diLh = -(1.0 - u) * v0h / p.L + p.Vi / p.L + obs.K1 * (iLm - iLh)
        dv0h = (1.0 - u) * iLh / p.C - v0m / (R_hat * p.C) \
            + obs.K2 * (v0m - v0h)
        dGh = -obs.kappa * v0m * (v0m - v0h)
        return diLh, dv0h, dGh

    y = (obs.iL_hat, obs.v0_hat, obs.G_hat)
    k1 = rhs(y)
    k2 = rhs(tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k1)))
    k3 = rhs(tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k2)))
    k4 = rhs(tuple(yi + h * ki for yi, ki in zip(y, k3)))
    iLh, v0h, Gh = (yi + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
                    for yi, a, b, c, d in zip(y, k1, k2, k3, k4))

    if not (math.isfinite(iLh) and math.isfinite(v0h) and math.isfinite(Gh)):
        raise ObserverFault("adaptive observer state became non-finite")

    projected = False
    if Gh < obs.g_min:
        Gh = obs.g_min
        projected = True
    elif Gh > obs.g_max:
        Gh = obs.g_max
        projected = True
    return replace(obs, iL_hat=iLh, v0_hat=v0h, G_hat=Gh,
                   projected=projected)


@dataclass(frozen=True)
class DisturbanceObserverState:
    x1_hat: float                 # Energy estimate [J]
    x2_hat: float                 # Power estimate [W]
    d1_hat: float                 # Disturbance estimate on x1 [W]
    d2_hat: float                 # Disturbance estimate on x2 [W/s]
    kappa1: float
    kappa2: float
    kappa3: float
    kappa4: float
    kappa5: float
    kappa6: float
    theta: float = 3.0
    r_kind: str = "alg"           # Saturating function for the x1 channel
    h_kind: str = "alg"           # Saturating function for the x2 channel

    def __post_init__(self):
        for name in ("kappa1", "kappa2", "kappa3",
                     "kappa4", "kappa5", "kappa6"):
            if not (getattr(self, name) > 0.0):
                raise ValueError(f"{name} must be positive")
        if not (self.theta > 2.0):
            raise ValueError("theta must exceed 2")


def dob_injections(dob: DisturbanceObserverState, xt1: float,
                   xt2: float) -> Tuple[float, float]:
    """Algebraic disturbance estimates from the two estimation errors."""
    r = resolve(dob.r_kind).fn
    q = resolve(dob.h_kind).fn
    th = dob.theta
    d1h = (-dob.kappa1 * r(xt1)
           - dob.kappa2 * cpow(abs(xt1), th - 1.0)
           * r(signed_power(xt1, th))
           - dob.kappa3 * xt1)
    d2h = (-dob.kappa4 * q(xt2)
           - dob.kappa5 * cpow(abs(xt2), th - 1.0)
           * q(signed_power(xt2, th))
           - dob.kappa6 * xt2)
    return d1h, d2h


def disturbance_observer_step(dob: DisturbanceObserverState,
                              transformed: Tuple[float, float], nu: float,
                              h: float) -> DisturbanceObserverState:
    """Advance the disturbance observer one RK4 step of size h.

    transformed is the measured (x1, x2); nu is the virtual input that
    was actually applied (post duty clamping).  The stored d1_hat/d2_hat
    are the injections evaluated at the new estimation errors.
    """
    x1, x2 = transformed

    def rhs(y):
        x1h, x2h = y
        d1h, d2h = dob_injections(dob, x1h - x1, x2h - x2)
        return x2 + d1h, nu + d2h

    y = (dob.x1_hat, dob.x2_hat)
    k1 = rhs(y)
    k2 = rhs(tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k1)))
    k3 = rhs(tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k2)))
    k4 = rhs(tuple(yi + h * ki for yi, ki in zip(y, k3)))
    x1h, x2h = (yi + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
                for yi, a, b, c, d in zip(y, k1, k2, k3, k4))

    if not (math.isfinite(x1h) and math.isfinite(x2h)):
        raise ObserverFault("disturbance observer state became non-finite")
    d1h, d2h = dob_injections(dob, x1h - x1, x2h - x2)
    return replace(dob, x1_hat=x1h, x2_hat=x2h, d1_hat=d1h, d2_hat=d2h)
