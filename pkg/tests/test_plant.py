"""Plant layer: integrators, energy transform, duty inversion."""

import math

import pytest

from ussfboost.plant import (
    DutyResult,
    IntegrationFault,
    LoadSchedule,
    PlantParams,
    PlantState,
    nu_from_duty,
    nu_to_duty,
    plant_deriv,
    pwm_switch,
    reference_energy,
    rk4_step,
    step_rk4,
    step_switched,
    to_transformed,
)

P = PlantParams(L=1e-5, C=1e-4, Vi=6.0, vr=12.0, fs=1e5)
SCHED = LoadSchedule(((0.0, 10.0),))


def test_rk4_fourth_order_on_linear_decay():
    # Global error on y' = -10 y over [0, 1] should shrink ~16x when
    # the step halves.
    lam = -10.0
    exact = math.exp(lam)

    def integrate(h, n):
        y = (1.0,)
        for _ in range(n):
            y = rk4_step(lambda s: (lam * s[0],), y, h)
        return y[0]

    err_coarse = abs(integrate(0.01, 100) - exact)
    err_fine = abs(integrate(0.005, 200) - exact)
    ratio = err_coarse / err_fine
    assert 14.0 < ratio < 18.0, ratio


def test_plant_deriv_zero_at_boost_equilibrium():
    # u = 0.5 against 10 ohm: v0 = Vi / (1 - u) = 12, iL = v0 / ((1-u) R).
    # The two branches are ~1.2e4 each, so cancellation leaves rounding
    # at the 1e-12 level.
    eq = PlantState(v0=12.0, iL=2.4)
    dv0, diL = plant_deriv(eq, 0.5, 10.0, P)
    assert dv0 == pytest.approx(0.0, abs=1e-10)
    assert diL == pytest.approx(0.0, abs=1e-10)


def test_step_rk4_stays_at_equilibrium():
    st = PlantState(v0=12.0, iL=2.4)
    for _ in range(100):
        st = step_rk4(st, 0.5, SCHED, P, 1e-6)
    assert st.v0 == pytest.approx(12.0, rel=1e-12)
    assert st.iL == pytest.approx(2.4, rel=1e-12)
    assert st.t == pytest.approx(1e-4)


def test_step_rk4_converges_toward_equilibrium():
    st = PlantState(v0=6.0, iL=0.0)
    start_gap = abs(st.v0 - 12.0)
    for _ in range(20000):
        st = step_rk4(st, 0.5, SCHED, P, 1e-6)
    assert abs(st.v0 - 12.0) < 0.05 * start_gap


def test_step_rk4_validates_inputs():
    st = PlantState(v0=6.0, iL=0.0)
    with pytest.raises(ValueError):
        step_rk4(st, 1.5, SCHED, P, 1e-6)
    with pytest.raises(ValueError):
        step_rk4(st, 0.5, SCHED, P, 0.0)
    with pytest.raises(ValueError):
        plant_deriv(st, 0.5, -1.0, P)


def test_step_rk4_raises_on_overflow():
    st = PlantState(v0=1e308, iL=1e308)
    with pytest.raises(IntegrationFault):
        step_rk4(st, 0.5, SCHED, P, 1e-6)


def test_transform_matches_energy_identities():
    # d x1 / dt = x2 + d1 and d x2 / dt = nu + d2 hold algebraically
    # for any state once nu is read back from the applied duty.
    cases = [
        (PlantState(9.0, 1.7), 0.42, 10.0, 12.5),
        (PlantState(12.0, 2.4), 0.5, 10.0, 10.0),
        (PlantState(4.0, -0.3), 0.7, 20.0, 15.0),
    ]
    for st, u, R, R_hat in cases:
        tr = to_transformed(st, R, R_hat, P)
        dv0, diL = plant_deriv(st, u, R, P)
        dx1 = P.C * st.v0 * dv0 + P.L * st.iL * diL
        dx2 = P.Vi * diL - 2.0 * st.v0 * dv0 / R_hat
        nu = nu_from_duty(u, st, R_hat, P)
        # abs floors cover the exact-equilibrium case where both sides
        # cancel ~1e6-scale terms down to zero.
        assert dx1 == pytest.approx(tr.x2 + tr.d1, rel=1e-9, abs=1e-9)
        assert dx2 == pytest.approx(nu + tr.d2, rel=1e-9, abs=1e-5)


def test_transform_disturbance_vanishes_when_estimate_is_exact():
    tr = to_transformed(PlantState(9.0, 1.7), 10.0, 10.0, P)
    assert tr.d1 == 0.0
    assert tr.d2 == 0.0
    assert tr.x1 == pytest.approx(0.5 * (P.C * 81.0 + P.L * 1.7 ** 2))
    assert tr.x2 == pytest.approx(6.0 * 1.7 - 81.0 / 10.0)


def test_duty_inversion_worked_example():
    # At the boost equilibrium with nu = 0 the numerator is
    # 36/1e-5 + 28800 = 3.6288e6 and the denominator twice that, so
    # the inversion lands exactly on u = 0.5.
    st = PlantState(v0=12.0, iL=2.4)
    res = nu_to_duty(0.0, st, 10.0, P)
    assert res == DutyResult(u=0.5, singular=False)


def test_duty_inversion_round_trip():
    st = PlantState(v0=9.0, iL=1.2)
    for nu in (-2e6, -1e4, 0.0, 3e5, 1.9e6):
        res = nu_to_duty(nu, st, 10.0, P)
        assert not res.singular
        if 0.01 < res.u < 0.99:  # round-trip only when unclamped
            assert nu_from_duty(res.u, st, 10.0, P) == pytest.approx(
                nu, rel=1e-9, abs=1e-5)


def test_duty_inversion_clamps():
    # A large positive nu demands more boost (u high); large negative
    # nu the opposite.
    st = PlantState(v0=9.0, iL=1.2)
    hi = nu_to_duty(1e12, st, 10.0, P)
    lo = nu_to_duty(-1e12, st, 10.0, P)
    assert hi.u == 0.99 and not hi.singular
    assert lo.u == 0.01 and not lo.singular


def test_duty_inversion_guard_returns_previous_duty():
    # v0 = 0 kills the denominator; the guard keeps the last duty and
    # flags the step instead of dividing.
    st = PlantState(v0=0.0, iL=1.0)
    res = nu_to_duty(5.0, st, 10.0, P, u_prev=0.37)
    assert res == DutyResult(u=0.37, singular=True)


def test_load_schedule_lookup():
    s = LoadSchedule.from_pairs([(0.0, 10.0), (0.2, 20.0), (0.6, 10.0)])
    assert s.resistance_at(0.0) == 10.0
    assert s.resistance_at(0.1999) == 10.0
    assert s.resistance_at(0.2) == 20.0
    assert s.resistance_at(0.59) == 20.0
    assert s.resistance_at(0.6) == 10.0
    assert s.resistance_at(5.0) == 10.0


def test_load_schedule_validation():
    with pytest.raises(ValueError):
        LoadSchedule(())
    with pytest.raises(ValueError):
        LoadSchedule(((0.1, 10.0),))
    with pytest.raises(ValueError):
        LoadSchedule(((0.0, 10.0), (0.0, 20.0)))
    with pytest.raises(ValueError):
        LoadSchedule(((0.0, -5.0),))


def test_pwm_switch_trailing_edge():
    assert pwm_switch(0.3, 0.0) == 1.0
    assert pwm_switch(0.3, 0.29) == 1.0
    assert pwm_switch(0.3, 0.3) == 0.0
    assert pwm_switch(0.3, 0.9) == 0.0


def test_step_switched_phase_wraps():
    st = PlantState(v0=6.0, iL=0.0)
    _, phase = step_switched(st, 0.5, SCHED, P, 1e-6, 0.0)
    assert phase == pytest.approx(0.1)
    _, phase = step_switched(st, 0.5, SCHED, P, 1e-6, 0.95)
    assert phase == pytest.approx(0.05)


def test_step_switched_applies_binary_input():
    # While the carrier is below the duty the step matches the averaged
    # model driven with u = 1 (switch on), otherwise u = 0.
    st = PlantState(v0=6.0, iL=1.0)
    on, _ = step_switched(st, 0.5, SCHED, P, 1e-6, 0.1)
    ref_on = step_rk4(st, 1.0, SCHED, P, 1e-6)
    assert (on.v0, on.iL) == (ref_on.v0, ref_on.iL)
    off, _ = step_switched(st, 0.5, SCHED, P, 1e-6, 0.7)
    ref_off = step_rk4(st, 0.0, SCHED, P, 1e-6)
    assert (off.v0, off.iL) == (ref_off.v0, ref_off.iL)


def test_switched_mean_matches_averaged_equilibrium():
    # A full-load PWM run should ripple around the averaged fixed point.
    st = PlantState(v0=12.0, iL=2.4)
    phase = 0.0
    n = 20000
    acc_v0 = 0.0
    for _ in range(n):
        st, phase = step_switched(st, 0.5, SCHED, P, 1e-6, phase)
        acc_v0 += st.v0
    assert acc_v0 / n == pytest.approx(12.0, rel=0.01)


def test_reference_energy_paper_point():
    # 12 V against a 10 ohm estimate: inductor branch carries
    # 14.4^2 L / (2 Vi^2) = 2.88e-5 J, capacitor branch 7.2e-3 J.
    assert reference_energy(12.0, 10.0, P) == pytest.approx(
        7.2288e-3, rel=1e-12)


def test_reference_energy_validation():
    with pytest.raises(ValueError):
        reference_energy(-1.0, 10.0, P)
    with pytest.raises(ValueError):
        reference_energy(12.0, 0.0, P)


def test_plant_params_validation():
    with pytest.raises(ValueError):
        PlantParams(L=-1e-5, C=1e-4, Vi=6.0, vr=12.0, fs=1e5)
    with pytest.raises(ValueError):
        PlantParams(L=1e-5, C=1e-4, Vi=6.0, vr=12.0, fs=math.inf)
