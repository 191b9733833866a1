"""Averaged and switched models of the DC-DC boost converter.

State-space averaged model, with duty ratio u in [0, 1], output voltage
v0 across the load R and inductor current iL:

    dv0/dt = (1 - u) iL / C - v0 / (R C)
    diL/dt = -(1 - u) v0 / L + Vi / L

The energy coordinates used by the transformed-domain controllers are

    x1 = (C v0^2 + L iL^2) / 2          stored energy [J]
    x2 = Vi iL - v0^2 / R_hat           energy flow against the load
                                        estimate R_hat [W]
    d1 = v0^2 / R_hat - v0^2 / R        load-mismatch disturbance [W]
    d2 = (2 / (R_hat C)) (v0^2 / R - v0^2 / R_hat)   [W/s]

so that dx1/dt = x2 + d1 and dx2/dt = nu + d2, where the virtual input

    nu = Vi^2/L + 2 v0^2/(R_hat^2 C)
         - (Vi v0/L + 2 iL v0/(R_hat C)) (1 - u)

is realised by inverting for the duty ratio.  The inversion denominator
vanishes only when v0 = 0; a guard returns the previous duty and flags
the singularity instead of dividing.

The switched model replaces the averaged duty with a binary switch
driven by a trailing-edge PWM comparison against a sawtooth carrier in
[0, 1) at frequency fs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

U_MIN = 0.01
U_MAX = 0.99
DEN_GUARD = 1e-6


class IntegrationFault(RuntimeError):
    """Integration produced a non-finite state; carries the last good one."""

    def __init__(self, message: str, last_state: "PlantState"):
        super().__init__(message)
        self.last_state = last_state


@dataclass(frozen=True)
class PlantParams:
    L: float        # Inductance [H]
    C: float        # Capacitance [F]
    Vi: float       # Source voltage [V]
    vr: float       # Output voltage reference [V]
    fs: float       # Switching frequency [Hz]

    def __post_init__(self):
        for name in ("L", "C", "Vi", "vr", "fs"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"PlantParams.{name} must be a positive "
                                 f"finite number, got {v!r}")


@dataclass(frozen=True)
class LoadSchedule:
    """Piecewise-constant load resistance: ((t0, R0), (t1, R1), ...)."""
    segments: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("LoadSchedule needs at least one segment")
        if self.segments[0][0] != 0.0:
            raise ValueError("first load segment must start at t = 0")
        prev = -math.inf
        for t, r in self.segments:
            if t <= prev:
                raise ValueError("load segment times must strictly increase")
            if not (r > 0 and math.isfinite(r)):
                raise ValueError(f"load resistance must be positive, got {r!r}")
            prev = t

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> "LoadSchedule":
        return cls(tuple((float(t), float(r)) for t, r in pairs))

    def resistance_at(self, t: float) -> float:
        r = self.segments[0][1]
        for ts, rs in self.segments:
            if t >= ts:
                r = rs
            else:
                break
        return r

    def as_arrays(self):
        import numpy as np
        ts = np.array([s[0] for s in self.segments], dtype=np.float64)
        rs = np.array([s[1] for s in self.segments], dtype=np.float64)
        return ts, rs


@dataclass(frozen=True)
class PlantState:
    v0: float       # Output voltage [V]
    iL: float       # Inductor current [A]
    t: float = 0.0  # Time [s]


@dataclass(frozen=True)
class TransformedState:
    x1: float       # Stored energy [J]
    x2: float       # Net power against R_hat [W]
    d1: float       # Load-mismatch disturbance on x1 [W]
    d2: float       # Load-mismatch disturbance on x2 [W/s]


def plant_deriv(state: PlantState, u: float, R: float,
                p: PlantParams) -> Tuple[float, float]:
    """Right-hand side (dv0/dt, diL/dt) of the averaged model."""
    if not (0.0 <= u <= 1.0):
        raise ValueError(f"duty ratio must lie in [0, 1], got {u!r}")
    if not (R > 0.0):
        raise ValueError(f"load resistance must be positive, got {R!r}")
    dv0 = (1.0 - u) * state.iL / p.C - state.v0 / (R * p.C)
    diL = -(1.0 - u) * state.v0 / p.L + p.Vi / p.L
    return dv0, diL


def rk4_step(f: Callable[[Sequence[float]], Sequence[float]],
             y: Sequence[float], h: float) -> Tuple[float, ...]:
    """One classical Runge-Kutta step for an autonomous system."""
    k1 = f(y)
    k2 = f(tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k1)))
    k3 = f(tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k2)))
    k4 = f(tuple(yi + h * ki for yi, ki in zip(y, k3)))
    return tuple(yi + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
                 for yi, a, b, c, d in zip(y, k1, k2, k3, k4))


def _advance(state: PlantState, u_eff: float, R: float, p: PlantParams,
             h: float) -> PlantState:
    def rhs(y):
        v0, iL = y
        dv0 = (1.0 - u_eff) * iL / p.C - v0 / (R * p.C)
        diL = -(1.0 - u_eff) * v0 / p.L + p.Vi / p.L
        return dv0, diL

    v0n, iLn = rk4_step(rhs, (state.v0, state.iL), h)
    if not (math.isfinite(v0n) and math.isfinite(iLn)):
        raise IntegrationFault(
            f"non-finite plant state at t = {state.t + h:.9g}", state)
    return PlantState(v0=v0n, iL=iLn, t=state.t + h)


def step_rk4(state: PlantState, u: float, schedule: LoadSchedule,
             p: PlantParams, h: float) -> PlantState:
    """Advance the averaged model one step of size h.

    The load resistance is read from the schedule at the step start and
    held constant across the RK4 stages.
    """
    if not (h > 0.0):
        raise ValueError("step size must be positive")
    if not (0.0 <= u <= 1.0):
        raise ValueError(f"duty ratio must lie in [0, 1], got {u!r}")
    R = schedule.resistance_at(state.t)
    return _advance(state, u, R, p, h)


def pwm_switch(u: float, carrier_phase: float) -> float:
    """Trailing-edge PWM: switch on while the carrier is below the duty."""
    return 1.0 if carrier_phase < u else 0.0


def step_switched(state: PlantState, u: float, schedule: LoadSchedule,
                  p: PlantParams, h: float,
                  carrier_phase: float) -> Tuple[PlantState, float]:
    """Advance the switched model one step; returns (state, new_phase).

    The binary switch signal s = [carrier < u] replaces the averaged
    duty for the whole step, and the sawtooth carrier advances by
    h * fs (mod 1).
    """
    if not (h > 0.0):
        raise ValueError("step size must be positive")
    if not (0.0 <= u <= 1.0):
        raise ValueError(f"duty ratio must lie in [0, 1], got {u!r}")
    R = schedule.resistance_at(state.t)
    s = pwm_switch(u, carrier_phase)
    new_state = _advance(state, s, R, p, h)
    phase = carrier_phase + h * p.fs
    phase -= math.floor(phase)
    return new_state, phase


def to_transformed(state: PlantState, R: float, R_hat: float,
                   p: PlantParams) -> TransformedState:
    """Map (v0, iL) to energy coordinates for load R and estimate R_hat."""
    if not (R > 0.0 and R_hat > 0.0):
        raise ValueError("R and R_hat must be positive")
    v0sq = state.v0 * state.v0
    x1 = 0.5 * (p.C * v0sq + p.L * state.iL * state.iL)
    x2 = p.Vi * state.iL - v0sq / R_hat
    d1 = v0sq / R_hat - v0sq / R
    d2 = (2.0 / (R_hat * p.C)) * (v0sq / R - v0sq / R_hat)
    return TransformedState(x1=x1, x2=x2, d1=d1, d2=d2)


def nu_from_duty(u: float, state: PlantState, R_hat: float,
                 p: PlantParams) -> float:
    """Forward map from duty ratio to the virtual input nu."""
    v0 = state.v0
    v0sq = v0 * v0
    num = p.Vi * p.Vi / p.L + 2.0 * v0sq / (R_hat * R_hat * p.C)
    den = p.Vi * v0 / p.L + 2.0 * state.iL * v0 / (R_hat * p.C)
    return num - den * (1.0 - u)


@dataclass(frozen=True)
class DutyResult:
    u: float
    singular: bool


def nu_to_duty(nu: float, state: PlantState, R_hat: float, p: PlantParams,
               u_prev: float = 0.5, u_min: float = U_MIN,
               u_max: float = U_MAX,
               den_guard: float = DEN_GUARD) -> DutyResult:
    """Invert the virtual input for the duty ratio, clamped to [u_min, u_max].

    (1 - u) = (Vi^2/L + 2 v0^2/(R_hat^2 C) - nu)
              / (Vi v0/L + 2 iL v0/(R_hat C))

    A denominator below den_guard (v0 near zero) returns the previous
    duty with the singular flag set instead of dividing.
    """
    v0 = state.v0
    v0sq = v0 * v0
    num = p.Vi * p.Vi / p.L + 2.0 * v0sq / (R_hat * R_hat * p.C) - nu
    den = p.Vi * v0 / p.L + 2.0 * state.iL * v0 / (R_hat * p.C)
    if abs(den) < den_guard:
        return DutyResult(u=u_prev, singular=True)
    u = 1.0 - num / den
    if u < u_min:
        u = u_min
    elif u > u_max:
        u = u_max
    return DutyResult(u=u, singular=False)


def reference_energy(vr: float, R_hat: float, p: PlantParams) -> float:
    """Stored energy target x_r for output vr against load estimate R_hat.

    x_r = (L / (2 Vi^2)) (vr^2 / R_hat)^2 + C vr^2 / 2,

    i.e. the capacitor energy at vr plus the inductor energy at the
    power-balance current vr^2 / (R_hat Vi).
    """
    if not (vr > 0.0 and R_hat > 0.0):
        raise ValueError("vr and R_hat must be positive")
    flow = vr * vr / R_hat
    return (p.L / (2.0 * p.Vi * p.Vi)) * flow * flow + 0.5 * p.C * vr * vr
