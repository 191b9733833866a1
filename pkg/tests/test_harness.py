"""Run harness: metrics, settling, comparison, audit, serialization."""

import dataclasses
import json
import math

import numpy as np
import pytest

from ussfboost.config import (
    ControllerConfig,
    ObserverConfig,
    Scenario,
    SimSettings,
    ValidationError,
)
from ussfboost.harness import (
    FAULT_CONTROLLER,
    FAULT_NONE,
    FAULT_OBSERVER,
    FAULT_PLANT,
    TRACE_COLUMNS,
    ScenarioResult,
    audit_lyapunov,
    benchmark_step_latency,
    compare_controllers,
    compute_metrics,
    event_times_of,
    format_trace_csv,
    implied_residual_constant,
    run_comparison,
    run_scenario,
    settling_times,
    summary_dict,
    sweep_initial_conditions,
    write_summary_json,
    write_trace_csv,
)
from ussfboost.plant import PlantParams
from ussfboost.ussf import certify_epsilon

SHORT = Scenario(sim=SimSettings(t_end=0.02, step=1e-6, decimation=1))


def fake_result(name, mse, fault=FAULT_NONE):
    return ScenarioResult(
        scenario=Scenario(), backend="python",
        trace={c: np.zeros(1) for c in TRACE_COLUMNS},
        v_full=np.zeros(0), step_ns=np.zeros(0),
        metrics={"mse": mse, "rmse": math.sqrt(mse), "mae": mse,
                 "err_steps": 1, "max_abs_d1": 0.0, "max_abs_d2": 0.0,
                 "sing_count": 0, "proj_count": 0},
        final={}, fault=fault, fault_step=-1, wall_s=0.0)


def test_run_scenario_trace_shape_and_time_axis():
    res = run_scenario(SHORT)
    n = SHORT.n_steps
    for c in TRACE_COLUMNS:
        assert res.trace[c].shape == (n + 1,)
    assert res.trace["t"][0] == 0.0
    assert res.trace["t"][-1] == pytest.approx(0.02)
    assert res.ok and res.fault == FAULT_NONE and res.fault_step == -1
    assert res.metrics["err_steps"] == n


def test_run_scenario_decimation():
    sc = SHORT.replace(sim=SimSettings(t_end=0.02, step=1e-6,
                                       decimation=40))
    res = run_scenario(sc)
    assert res.trace["t"].shape == (sc.n_steps // 40 + 1,)
    assert res.trace["t"][1] == pytest.approx(40e-6)


def test_compute_metrics_matches_kernel_accumulators():
    res = run_scenario(SHORT)
    m = compute_metrics(res.trace["v0"][:-1], SHORT.plant.vr)
    # Same samples, different summation order (pairwise vs serial).
    assert m["mse"] == pytest.approx(res.metrics["mse"], rel=1e-12)
    assert m["rmse"] == pytest.approx(res.metrics["rmse"], rel=1e-12)
    assert m["mae"] == pytest.approx(res.metrics["mae"], rel=1e-12)


def test_compute_metrics_validation():
    with pytest.raises(ValidationError):
        compute_metrics([], 12.0)
    with pytest.raises(ValidationError):
        compute_metrics(np.zeros((3, 2)), 12.0)


def test_skip_steps_shrinks_error_window():
    res = run_scenario(SHORT, skip_steps=5000)
    assert res.metrics["err_steps"] == SHORT.n_steps - 5000


def test_plant_fault_is_reported_not_raised():
    # v0 / (R C) overflows inside the first integrator stage; the fixed
    # duty keeps the controller and observer out of the way.
    sc = Scenario(
        controller=ControllerConfig(type="fixed"),
        sim=SimSettings(t_end=1e-3, step=1e-6),
        v0_0=1e306)
    res = run_scenario(sc)
    assert res.fault == FAULT_PLANT
    assert res.fault_step == 0
    assert res.fault_name == "plant"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_controller_fault_on_astronomical_start():
    # v0^2 overflows in the energy transform, poisoning the command.
    sc = SHORT.replace(v0_0=1e300)
    for backend in ("compiled", "python"):
        res = run_scenario(sc, backend=backend)
        assert res.fault == FAULT_CONTROLLER, backend
        assert res.fault_step == 0


def test_observer_fault_on_unstable_gains():
    # K h beyond the RK4 stability edge blows the observer up while
    # the fixed-duty plant stays healthy.
    sc = Scenario(
        controller=ControllerConfig(type="fixed"),
        observer=ObserverConfig(K1=1e7, K2=1e7),
        sim=SimSettings(t_end=1e-3, step=1e-6))
    res = run_scenario(sc)
    assert res.fault == FAULT_OBSERVER


def synthetic_trace(t, v0, R=None):
    t = np.asarray(t, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    R = np.full_like(t, 10.0) if R is None else np.asarray(R, dtype=float)
    return {"t": t, "v0": v0, "R": R}


def test_settling_all_in_band_reports_zero():
    t = np.linspace(0.0, 0.1, 101)
    ev = settling_times(synthetic_trace(t, np.full(101, 12.0)), 12.0, [0.0])
    assert len(ev) == 1
    assert ev[0].recovery_s == 0.0
    assert ev[0].R == 10.0


def test_settling_measures_last_reentry():
    t = np.linspace(0.0, 0.1, 101)  # 1 ms spacing
    v0 = np.full(101, 12.0)
    v0[:10] = 13.0   # out of the 2% band until t = 9 ms
    ev = settling_times(synthetic_trace(t, v0), 12.0, [0.0])
    assert ev[0].recovery_s == pytest.approx(0.010)


def test_settling_requires_dwell():
    t = np.linspace(0.0, 0.1, 101)
    v0 = np.full(101, 12.0)
    v0[-1] = 13.0  # pops out at the very end: no dwell left
    ev = settling_times(synthetic_trace(t, v0), 12.0, [0.0])
    assert math.isinf(ev[0].recovery_s)


def test_settling_never_settles():
    t = np.linspace(0.0, 0.1, 101)
    ev = settling_times(synthetic_trace(t, np.full(101, 20.0)), 12.0, [0.0])
    assert math.isinf(ev[0].recovery_s)


def test_settling_windows_are_split_by_events():
    t = np.linspace(0.0, 0.2, 201)
    v0 = np.full(201, 12.0)
    v0[100:105] = 11.0  # excursion right after the t = 0.1 event
    ev = settling_times(synthetic_trace(t, v0), 12.0, [0.0, 0.1])
    assert ev[0].recovery_s == 0.0
    assert ev[1].recovery_s == pytest.approx(0.005)


def test_settling_validation():
    t = np.linspace(0.0, 0.1, 11)
    with pytest.raises(ValidationError):
        settling_times(synthetic_trace(t, np.full(11, 12.0)), 12.0, [0.0],
                       band_frac=0.0)


def test_event_times_of_reads_schedule():
    assert event_times_of(Scenario()) == [0.0, 0.2, 0.6]


def test_compare_is_order_invariant():
    results = {"ftc": fake_result("ftc", 1.0),
               "baseline": fake_result("baseline", 2.0),
               "pid": fake_result("pid", 3.0)}
    a = compare_controllers(results)
    flipped = dict(reversed(list(results.items())))
    b = compare_controllers(flipped)
    assert a == b
    assert a.ordering == ("ftc", "baseline", "pid")
    assert a.matches_expected


def test_compare_detects_wrong_order():
    results = {"ftc": fake_result("ftc", 5.0),
               "baseline": fake_result("baseline", 2.0),
               "pid": fake_result("pid", 3.0)}
    rep = compare_controllers(results)
    assert rep.ordering == ("baseline", "pid", "ftc")
    assert not rep.matches_expected


def test_compare_ties_never_pass_silently():
    results = {"ftc": fake_result("ftc", 2.0),
               "baseline": fake_result("baseline", 2.0),
               "pid": fake_result("pid", 3.0)}
    rep = compare_controllers(results)
    assert rep.ties == (("baseline", "ftc"),) or rep.ties == (("ftc", "baseline"),)
    assert not rep.matches_expected


def test_compare_fault_invalidates_ranking():
    results = {"ftc": fake_result("ftc", 1.0),
               "baseline": fake_result("baseline", 2.0),
               "pid": fake_result("pid", 3.0, fault=FAULT_PLANT)}
    assert not compare_controllers(results).matches_expected


def test_compare_missing_controller():
    with pytest.raises(ValidationError):
        compare_controllers({"ftc": fake_result("ftc", 1.0)})


def test_run_comparison_end_to_end():
    report, results = run_comparison(SHORT)
    assert set(results) == {"ftc", "baseline", "pid"}
    assert report.entries[0].mse <= report.entries[-1].mse
    assert all(r.ok for r in results.values())


def test_sweep_initial_conditions_rows():
    rows = sweep_initial_conditions(SHORT, [2.0, 6.0, 10.0])
    assert [r["v0_0"] for r in rows] == [2.0, 6.0, 10.0]
    for r in rows:
        assert r["fault"] == FAULT_NONE
        assert 0.0 <= r["recovery_s"] < 0.02
        assert r["mse"] > 0.0


def test_implied_residual_constant_formula():
    sc = Scenario()
    eps = certify_epsilon("alg").epsilon
    g = sc.controller.ftc
    expect = 0.5 * (3.0 ** 2 + 4.0 ** 2) \
        + (g.k1 + g.k2 + g.k4 + g.k5) * eps
    assert implied_residual_constant(sc, 3.0, 4.0) == pytest.approx(
        expect, rel=1e-12)


def audit_series(offsets, h=1e-3, iota=3.0, c=1.6, v0=100.0):
    """V series whose one-step drift sits at bound + offset each step."""
    vs = [v0]
    for off in offsets:
        v = vs[-1]
        bound = -2.0 * math.sqrt(v) - 2.0 * v ** (iota / 2.0) + c
        vs.append(max(v + h * (bound + off), 0.0))
    return np.array(vs)


def test_audit_accepts_conforming_series():
    v = audit_series([-1.0] * 50)
    audit = audit_lyapunov(v, 1e-3, 1.0, 1.0, 1.0, 1.0, 3.0, 0.4, 0.0, 0.0)
    assert audit.c_resid == pytest.approx(1.6)
    assert audit.violations == 0
    assert audit.samples_above > 0


def test_audit_flags_violations_above_threshold():
    v = audit_series([+1.0] * 50)
    audit = audit_lyapunov(v, 1e-3, 1.0, 1.0, 1.0, 1.0, 3.0, 0.4, 0.0, 0.0)
    assert audit.violations == audit.samples_above > 0
    assert audit.max_excess > 0.0


def test_audit_ignores_residual_set():
    # Same violating drift, but started inside V <= 10 C: nothing to judge.
    v = audit_series([+1.0] * 50, v0=1.0)
    audit = audit_lyapunov(v, 1e-3, 1.0, 1.0, 1.0, 1.0, 3.0, 0.4, 0.0, 0.0,
                           threshold=16.0)
    assert audit.samples_above == 0
    assert audit.violations == 0


def test_audit_validation():
    with pytest.raises(ValidationError):
        audit_lyapunov(np.array([1.0]), 1e-3, 1, 1, 1, 1, 3.0, 0.4, 0, 0)


def test_audit_on_real_run_has_no_violations():
    res = run_scenario(SHORT, audit=True)
    assert res.v_full.shape == (SHORT.n_steps + 1,)
    g = SHORT.controller.ftc
    eps = certify_epsilon(g.f_kind).epsilon
    audit = audit_lyapunov(res.v_full, SHORT.sim.step, g.k1, g.k2, g.k4,
                           g.k5, g.iota, eps,
                           res.metrics["max_abs_d1"],
                           res.metrics["max_abs_d2"])
    assert audit.violations == 0


def test_benchmark_report_shape():
    rep = benchmark_step_latency(SHORT, iterations=2000)
    assert "python" in rep
    for name in (k for k in rep if k != "speedup"):
        entry = rep[name]
        assert entry["steps"] == 2000
        assert 0.0 < entry["mean"] < 1.0  # seconds per step
        assert entry["p99"] > 0.0
        assert entry["fault"] == FAULT_NONE
    if "compiled" in rep:
        assert rep["speedup"] > 1.0


def test_benchmark_validation():
    with pytest.raises(ValidationError):
        benchmark_step_latency(SHORT, iterations=0)


def test_trace_csv_format():
    res = run_scenario(SHORT.replace(sim=SimSettings(
        t_end=1e-4, step=1e-6, decimation=10)))
    text = format_trace_csv(res.trace)
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) == 1 + res.trace["t"].shape[0]
    first = lines[1].split(",")
    assert len(first) == len(TRACE_COLUMNS)
    assert float(first[0]) == 0.0
    assert float(first[1]) == 6.0  # initial output voltage


def test_trace_csv_rejects_ragged_columns():
    res = run_scenario(SHORT.replace(sim=SimSettings(
        t_end=1e-4, step=1e-6, decimation=10)))
    bad = dict(res.trace)
    bad["u"] = bad["u"][:-1]
    with pytest.raises(ValidationError):
        format_trace_csv(bad)


def test_csv_write_round_trip(tmp_path):
    res = run_scenario(SHORT.replace(sim=SimSettings(
        t_end=1e-4, step=1e-6, decimation=10)))
    path = tmp_path / "trace.csv"
    write_trace_csv(str(path), res.trace)
    data = np.genfromtxt(path, delimiter=",", names=True)
    assert list(data.dtype.names) == list(TRACE_COLUMNS)
    np.testing.assert_allclose(data["v0"], res.trace["v0"], rtol=1e-11)


def test_summary_schema(tmp_path):
    res = run_scenario(SHORT)
    doc = summary_dict(res)
    assert set(doc) == {"metrics", "settling_events", "faults",
                        "implied_C", "scenario", "backend", "final",
                        "wall_s"}
    assert doc["faults"] == []
    assert set(doc["metrics"]) >= {"mse", "rmse", "mae"}
    assert doc["implied_C"] > 0.0
    path = tmp_path / "summary.json"
    write_summary_json(str(path), res)
    loaded = json.loads(path.read_text())
    assert loaded["metrics"]["mse"] == pytest.approx(
        res.metrics["mse"], rel=1e-9)
    # Significant digits survive the JSON round trip.
    assert len(repr(loaded["metrics"]["mse"]).replace("0.", "")) >= 9


def test_summary_reports_faults():
    sc = SHORT.replace(v0_0=1e300)
    res = run_scenario(sc)
    doc = summary_dict(res, settling=[])
    assert doc["faults"] == [{"code": FAULT_CONTROLLER,
                              "name": "controller", "step": 0}]
