"""Boost-converter control with unit-safe saturating functions.

The package splits into five layers:

    ussf         saturating functions, their certification and axioms
    plant        averaged / PWM-switched converter models and the
                 energy-coordinate transform
    estimators   adaptive load observer and disturbance observer
    controllers  fixed-time law, proportional baseline, cascaded PID,
                 reference derivatives
    harness      scenario running, metrics, comparisons, benchmarks

plus a compiled simulation kernel with a pure-Python fallback (see
``backend``) and a command line front end (``ussfboost --help``).
"""

from .backend import BACKEND, available_backends
from .config import (ControllerConfig, DobConfig, ObserverConfig, Scenario,
                     SimSettings, ValidationError, load_scenario,
                     scenario_from_dict, scenario_to_dict)
from .controllers import (ControllerFault, FtcGains, FtcOutput, FtcState,
                          PidGains, PidState, ReferenceTracker,
                          baseline_step, ftc_step, lyapunov_value, pid_step,
                          reference_derivatives)
from .estimators import (AdaptiveObserverState, DisturbanceObserverState,
                         ObserverFault, adaptive_observer_step,
                         disturbance_observer_step, dob_injections)
from .harness import (ComparisonReport, LyapunovAudit, ScenarioResult,
                      SettlingEvent, audit_lyapunov, benchmark_step_latency,
                      compare, compare_controllers, compute_metrics,
                      run_comparison, run_scenario, settling_times,
                      sweep_initial_conditions, write_summary_json,
                      write_trace_csv)
from .plant import (DutyResult, IntegrationFault, LoadSchedule, PlantParams,
                    PlantState, TransformedState, nu_from_duty, nu_to_duty,
                    plant_deriv, pwm_switch, reference_energy, rk4_step,
                    step_rk4, step_switched, to_transformed)
from .ussf import (AxiomReport, CertificationError, DomainError,
                   UssfCertificate, UssfKind, certify_epsilon, register_ussf,
                   signed_power, tail_complement, ussf_deriv, ussf_eval,
                   verify_axioms)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveObserverState", "AxiomReport", "BACKEND", "CertificationError",
    "ComparisonReport", "ControllerConfig", "ControllerFault",
    "DisturbanceObserverState", "DobConfig", "DomainError", "DutyResult",
    "FtcGains", "FtcOutput", "FtcState", "IntegrationFault", "LoadSchedule",
    "LyapunovAudit", "ObserverConfig", "ObserverFault", "PidGains",
    "PidState", "PlantParams", "PlantState", "ReferenceTracker", "Scenario",
    "ScenarioResult", "SettlingEvent", "SimSettings", "TransformedState",
    "UssfCertificate", "UssfKind", "ValidationError",
    "adaptive_observer_step", "audit_lyapunov", "available_backends",
    "baseline_step", "benchmark_step_latency", "certify_epsilon", "compare",
    "compare_controllers", "compute_metrics", "disturbance_observer_step",
    "dob_injections", "ftc_step", "load_scenario", "lyapunov_value",
    "nu_from_duty", "nu_to_duty", "pid_step", "plant_deriv", "pwm_switch",
    "reference_derivatives", "reference_energy", "register_ussf",
    "rk4_step", "run_comparison", "run_scenario", "scenario_from_dict",
    "scenario_to_dict", "settling_times", "signed_power", "step_rk4",
    "step_switched", "sweep_initial_conditions", "tail_complement",
    "to_transformed", "ussf_deriv", "ussf_eval", "verify_axioms",
    "write_summary_json", "write_trace_csv",
]
