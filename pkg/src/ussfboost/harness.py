"""Scenario runner, trace analysis and result serialization.

run_scenario drives one closed-loop simulation through the selected
kernel backend and wraps the raw arrays in a ScenarioResult.  On top of
that sit the analysis passes used by the command line and the tests:

    settling_times      per load-step recovery into a +-band around vr
    compare_controllers MSE ranking across controller types
    sweep_initial_conditions
                        recovery spread across initial output voltages
    audit_lyapunov      drift-bound violations of the composite error
                        energy against the certified residual constant
    benchmark_step_latency
                        per-step wall time, compiled vs pure Python

Trace CSV schema (one row per decimated step, %.12g everywhere):

    t,v0,iL,u,R,R_hat,x1,x2,e1,e2,d1,d2

Summary JSON schema: {metrics: {mse, rmse, mae, ...}, settling_events:
[...], faults: [...], implied_C: number} plus the scenario document,
backend name and wall time.  Floats serialize at repr precision, which
is lossless.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import backend as _backend
from .config import Scenario, ValidationError, kernel_config, scenario_to_dict
from .ussf import certify_epsilon

TRACE_COLUMNS = ("t", "v0", "iL", "u", "R", "R_hat",
                 "x1", "x2", "e1", "e2", "d1", "d2")

FAULT_NONE = 0
FAULT_PLANT = 1
FAULT_CONTROLLER = 2
FAULT_OBSERVER = 3
FAULT_NAMES = {FAULT_NONE: "none", FAULT_PLANT: "plant",
               FAULT_CONTROLLER: "controller", FAULT_OBSERVER: "observer"}

_EPS_CACHE: Dict[str, float] = {}


def _certified_eps(kind: str) -> float:
    if kind not in _EPS_CACHE:
        _EPS_CACHE[kind] = certify_epsilon(kind).epsilon
    return _EPS_CACHE[kind]


@dataclass
class ScenarioResult:
    scenario: Scenario
    backend: str
    trace: Dict[str, np.ndarray]
    v_full: np.ndarray
    step_ns: np.ndarray
    metrics: Dict[str, float]
    final: Dict[str, float]
    fault: int
    fault_step: int
    wall_s: float

    @property
    def ok(self) -> bool:
        return self.fault == FAULT_NONE

    @property
    def fault_name(self) -> str:
        return FAULT_NAMES.get(self.fault, str(self.fault))


def run_scenario(sc: Scenario, skip_steps: int = 0, audit: bool = False,
                 timed: bool = False,
                 backend: Optional[str] = None) -> ScenarioResult:
    """Run one scenario and return its trace and metrics.

    Faults are reported on the result, not raised; check result.ok.
    backend overrides the import-time kernel choice for this run.
    """
    cfg = kernel_config(sc, skip_steps=skip_steps, audit=audit, timed=timed)
    kern = (_backend.run_closed_loop if backend is None
            else _backend.get_kernel(backend))
    t0 = time.perf_counter()
    out = kern(cfg)
    wall = time.perf_counter() - t0
    n_err = out["err_steps"]
    mse = out["sum_sq_err"] / n_err if n_err else math.nan
    metrics = {
        "mse": mse,
        "rmse": math.sqrt(mse) if n_err else math.nan,
        "mae": out["sum_abs_err"] / n_err if n_err else math.nan,
        "err_steps": n_err,
        "max_abs_d1": out["max_abs_d1"],
        "max_abs_d2": out["max_abs_d2"],
        "sing_count": out["sing_count"],
        "proj_count": out["proj_count"],
    }
    trace = {name: out[name] for name in TRACE_COLUMNS}
    return ScenarioResult(
        scenario=sc,
        backend=backend if backend is not None else _backend.BACKEND,
        trace=trace,
        v_full=out["V_full"],
        step_ns=out["step_ns"],
        metrics=metrics,
        final=out["final"],
        fault=out["fault"],
        fault_step=out["fault_step"],
        wall_s=wall,
    )


def compute_metrics(v0_series, vr: float) -> Dict[str, float]:
    """MSE, RMSE and MAE of a voltage series against the reference.

    Plain means over the samples given.  The kernel accumulates the
    same quantities at full resolution over left step endpoints, so on
    an undecimated trace compute_metrics(v0[:-1], vr) reproduces the
    kernel's numbers up to summation order (numpy sums pairwise, the
    kernel serially).
    """
    v = np.asarray(v0_series, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("need a non-empty 1-D voltage series")
    err = v - vr
    mse = float(np.mean(err * err))
    return {"mse": mse, "rmse": math.sqrt(mse),
            "mae": float(np.mean(np.abs(err)))}


@dataclass(frozen=True)
class SettlingEvent:
    t_event: float      # Load-step (or start) time [s]
    R: float            # Resistance from this event on [ohm]
    recovery_s: float   # Time to stay inside the band; inf if never


def settling_times(trace: Dict[str, np.ndarray], vr: float,
                   event_times: Sequence[float], band_frac: float = 0.02,
                   dwell_s: float = 1e-3) -> List[SettlingEvent]:
    """Recovery time into |v0 - vr| <= band_frac * vr after each event.

    Recovery is measured on the decimated trace: the first sample after
    the last out-of-band sample in the event's window, relative to the
    event.  The trace must then stay in band for dwell_s before the
    window closes, otherwise the event reports inf (never settled).
    An all-in-band window reports 0.0.
    """
    if not (0.0 < band_frac < 1.0):
        raise ValidationError("band_frac must lie in (0, 1)")
    t = trace["t"]
    v0 = trace["v0"]
    R = trace["R"]
    tol = band_frac * vr
    events = sorted(event_times)
    out: List[SettlingEvent] = []
    for j, te in enumerate(events):
        t_next = events[j + 1] if j + 1 < len(events) else math.inf
        idx = np.nonzero((t >= te) & (t < t_next))[0]
        if idx.size == 0:
            continue
        r_here = float(R[idx[0]])
        bad = np.abs(v0[idx] - vr) > tol
        if not bad.any():
            out.append(SettlingEvent(te, r_here, 0.0))
            continue
        last_bad = idx[np.nonzero(bad)[0][-1]]
        if last_bad + 1 > idx[-1]:
            out.append(SettlingEvent(te, r_here, math.inf))
            continue
        t_in = float(t[last_bad + 1])
        if float(t[idx[-1]]) - t_in < dwell_s:
            out.append(SettlingEvent(te, r_here, math.inf))
            continue
        out.append(SettlingEvent(te, r_here, t_in - te))
    return out


def event_times_of(sc: Scenario) -> List[float]:
    return [t for t, _ in sc.schedule.segments]


@dataclass(frozen=True)
class ComparisonEntry:
    name: str
    mse: float
    rmse: float
    mae: float
    fault: int


@dataclass(frozen=True)
class ComparisonReport:
    entries: Tuple[ComparisonEntry, ...]   # Sorted by ascending MSE
    ordering: Tuple[str, ...]
    expected: Tuple[str, ...]
    matches_expected: bool
    ties: Tuple[Tuple[str, str], ...]

    def as_dict(self) -> dict:
        return {
            "entries": [dataclasses.asdict(e) for e in self.entries],
            "ordering": list(self.ordering),
            "expected": list(self.expected),
            "matches_expected": self.matches_expected,
            "ties": [list(p) for p in self.ties],
        }


def compare_controllers(results: Dict[str, ScenarioResult],
                        expected: Sequence[str] = ("ftc", "baseline", "pid"),
                        ) -> ComparisonReport:
    """Rank controllers by MSE and check the expected ordering.

    The ranking is a sort, so the report does not depend on the order
    the results are handed in.  Exact MSE ties are reported, never
    silently broken: a tie between adjacent entries means the ranking
    carries no information there, and matches_expected is forced False.
    """
    missing = [n for n in expected if n not in results]
    if missing:
        raise ValidationError(f"missing results for: {missing}")
    entries = sorted(
        (ComparisonEntry(name=n, mse=r.metrics["mse"],
                         rmse=r.metrics["rmse"], mae=r.metrics["mae"],
                         fault=r.fault)
         for n, r in sorted(results.items())),
        key=lambda e: e.mse)
    ordering = tuple(e.name for e in entries)
    ties = tuple((a.name, b.name) for a, b in zip(entries, entries[1:])
                 if a.mse == b.mse)
    any_fault = any(e.fault != FAULT_NONE for e in entries)
    ok = (ordering[:len(expected)] == tuple(expected) and not ties
          and not any_fault
          and all(math.isfinite(e.mse) for e in entries))
    return ComparisonReport(entries=tuple(entries), ordering=ordering,
                            expected=tuple(expected), matches_expected=ok,
                            ties=ties)


def run_comparison(sc: Scenario,
                   controllers: Sequence[str] = ("ftc", "baseline", "pid"),
                   backend: Optional[str] = None,
                   ) -> Tuple[ComparisonReport, Dict[str, ScenarioResult]]:
    """One scenario under each controller type; returns report + runs."""
    results = {}
    for name in controllers:
        ctrl = dataclasses.replace(sc.controller, type=name)
        results[name] = run_scenario(sc.replace(controller=ctrl),
                                     backend=backend)
    return compare_controllers(results, expected=controllers), results


def compare(sc: Scenario,
            controllers: Sequence[str] = ("ftc", "baseline", "pid"),
            backend: Optional[str] = None) -> ComparisonReport:
    """One scenario under each controller type, ranked by MSE."""
    report, _ = run_comparison(sc, controllers=controllers, backend=backend)
    return report


def sweep_initial_conditions(sc: Scenario, v0_values: Sequence[float],
                             band_frac: float = 0.02,
                             backend: Optional[str] = None) -> List[dict]:
    """Recovery time of the first event across initial output voltages."""
    rows = []
    for v in v0_values:
        svc = sc.replace(v0_0=float(v))
        res = run_scenario(svc, backend=backend)
        events = settling_times(res.trace, svc.plant.vr,
                                event_times_of(svc), band_frac=band_frac)
        rec = events[0].recovery_s if events else math.inf
        rows.append({"v0_0": float(v), "recovery_s": rec,
                     "mse": res.metrics["mse"], "fault": res.fault})
    return rows


@dataclass(frozen=True)
class LyapunovAudit:
    kap1: float          # 2 min(k1, k4)
    kap2: float          # 2 min(k2, k5)
    c_resid: float       # Residual drift constant
    threshold: float     # V level below which the bound is not checked
    samples_total: int
    samples_above: int   # Steps with V > threshold
    violations: int      # Drift-bound violations among those
    max_excess: float    # Worst (dV/h - bound) over checked steps


def implied_residual_constant(sc: Scenario, max_abs_d1: float,
                              max_abs_d2: float) -> float:
    """Residual drift constant from gains, certified eps and |d| bounds.

    C = (d1_bar^2 + d2_bar^2) / 2 + (k1 + k2 + k4 + k5) eps, with eps
    the certified saturation residual (the larger one if the two loops
    use different saturating functions).
    """
    g = sc.controller.ftc
    eps = _certified_eps(g.f_kind)
    if g.g_kind != g.f_kind:
        eps = max(eps, _certified_eps(g.g_kind))
    return (0.5 * (max_abs_d1 * max_abs_d1 + max_abs_d2 * max_abs_d2)
            + (g.k1 + g.k2 + g.k4 + g.k5) * eps)


def audit_lyapunov(v_full: np.ndarray, h: float, k1: float, k2: float,
                   k4: float, k5: float, iota: float, epsilon: float,
                   d1_bar: float, d2_bar: float,
                   threshold: Optional[float] = None,
                   rtol: float = 1e-9) -> LyapunovAudit:
    """Check dV/dt <= -kap1 V^(1/2) - kap2 V^(iota/2) + C along a run.

    C folds the disturbance bounds and the saturation residual:
    C = (d1_bar^2 + d2_bar^2)/2 + (k1 + k2 + k4 + k5) epsilon.  The
    bound only bites outside the residual set, so steps with
    V <= threshold (default 10 C) are recorded but not judged.
    """
    v = np.asarray(v_full, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ValidationError("need a V series of at least 2 samples")
    kap1 = 2.0 * min(k1, k4)
    kap2 = 2.0 * min(k2, k5)
    c_resid = 0.5 * (d1_bar * d1_bar + d2_bar * d2_bar) \
        + (k1 + k2 + k4 + k5) * epsilon
    thr = 10.0 * c_resid if threshold is None else threshold
    vk = v[:-1]
    dv = (v[1:] - vk) / h
    bound = -kap1 * np.sqrt(vk) - kap2 * vk ** (iota / 2.0) + c_resid
    above = vk > thr
    slack = rtol * np.maximum(1.0, np.abs(bound))
    bad = above & (dv > bound + slack)
    excess = dv - bound
    max_excess = float(excess[above].max()) if above.any() else -math.inf
    return LyapunovAudit(kap1=kap1, kap2=kap2, c_resid=c_resid,
                         threshold=thr, samples_total=int(vk.size),
                         samples_above=int(above.sum()),
                         violations=int(bad.sum()), max_excess=max_excess)


def benchmark_step_latency(sc: Scenario, iterations: int = 100000,
                           backends: Optional[Sequence[str]] = None) -> dict:
    """Per-step wall time of each kernel over the given iteration count.

    The scenario horizon is clipped to iterations steps.  Returns
    {backend: {mean, p99, p50, steps, total_s}} with times in seconds,
    plus a "speedup" entry (python mean over compiled mean) when both
    kernels ran.
    """
    if not (iterations >= 1):
        raise ValidationError("iterations must be at least 1")
    n = min(iterations, sc.n_steps)
    sim = dataclasses.replace(sc.sim, t_end=n * sc.sim.step)
    clipped = sc.replace(sim=sim)
    names = tuple(backends) if backends else _backend.available_backends()
    report: dict = {}
    for name in names:
        res = run_scenario(clipped, timed=True, backend=name)
        ns = res.step_ns
        if ns.size == 0:
            raise ValidationError(f"no timing samples from backend {name}")
        report[name] = {
            "mean": float(ns.mean()) * 1e-9,
            "p50": float(np.percentile(ns, 50)) * 1e-9,
            "p99": float(np.percentile(ns, 99)) * 1e-9,
            "steps": int(ns.size),
            "total_s": float(ns.sum()) * 1e-9,
            "fault": res.fault,
        }
    if "python" in report and "compiled" in report:
        report["speedup"] = (report["python"]["mean"]
                             / report["compiled"]["mean"])
    return report


def format_trace_csv(trace: Dict[str, np.ndarray]) -> str:
    """Render a trace as CSV text with %.12g fields."""
    cols = [np.asarray(trace[name]) for name in TRACE_COLUMNS]
    n = cols[0].shape[0]
    for name, c in zip(TRACE_COLUMNS, cols):
        if c.shape[0] != n:
            raise ValidationError(f"trace column {name} has length "
                                  f"{c.shape[0]}, expected {n}")
    buf = io.StringIO()
    buf.write(",".join(TRACE_COLUMNS) + "\n")
    for i in range(n):
        buf.write(",".join("%.12g" % c[i] for c in cols) + "\n")
    return buf.getvalue()


def write_trace_csv(path: str, trace: Dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_trace_csv(trace))


def summary_dict(res: ScenarioResult,
                 settling: Optional[List[SettlingEvent]] = None) -> dict:
    """Result summary following the documented schema."""
    if settling is None:
        settling = settling_times(res.trace, res.scenario.plant.vr,
                                  event_times_of(res.scenario))
    faults = []
    if res.fault != FAULT_NONE:
        faults.append({"code": res.fault, "name": res.fault_name,
                       "step": res.fault_step})
    return {
        "metrics": res.metrics,
        "settling_events": [dataclasses.asdict(e) for e in settling],
        "faults": faults,
        "implied_C": implied_residual_constant(
            res.scenario, res.metrics["max_abs_d1"],
            res.metrics["max_abs_d2"]),
        "scenario": scenario_to_dict(res.scenario),
        "backend": res.backend,
        "final": res.final,
        "wall_s": res.wall_s,
    }


def write_summary_json(path: str, res: ScenarioResult,
                       settling: Optional[List[SettlingEvent]] = None,
                       ) -> None:
    doc = summary_dict(res, settling)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
