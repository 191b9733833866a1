"""Scenario configuration: dataclasses, JSON schema, validation.

A scenario JSON looks like

    {
      "plant": {"L": 1e-5, "C": 1e-4, "Vi": 6.0, "vr": 12.0, "fs": 1e5},
      "load_schedule": [[0.0, 10.0], [0.2, 20.0], [0.6, 10.0]],
      "initial_state": {"v0": 6.0, "iL": 0.0},
      "sim": {"t_end": 1.0, "step": 1e-6, "model": "averaged",
              "noise_sigma": 0.0, "decimation": 10},
      "controller": {"type": "ftc", "ussf": "alg", "iota": 3.0,
                     "use_dob": false, "cross_term": "e1",
                     "gains": {"k1": 1e4, "k2": 1e4, "k3": 1.0,
                               "k4": 9e4, "k5": 9e4, "k6": 1.0}},
      "observer": {"K1": 4165.0, "K2": 4165.0, "kappa": 200.0,
                   "G0": 0.05},
      "dob": {"enabled": false, "kappa1": 50.0, ..., "theta": 3.0,
              "ussf": "alg"},
      "seed": 0
    }

Every key is optional; omitted sections fall back to the defaults
above, which reproduce the reference study (boost converter, 6 V in,
12 V out, load steps 10/20/10 ohm at 0.2 s and 0.6 s).  Controller
types: "ftc", "pid", "baseline", and "fixed" (constant duty, for
open-loop studies).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .controllers import FtcGains, PidGains
from .estimators import G_MAX_DEFAULT, G_MIN_DEFAULT
from .plant import LoadSchedule, PlantParams
from .ussf import KIND_CODES

CONTROLLER_TYPES = ("ftc", "pid", "baseline", "fixed")
MODELS = ("averaged", "switched")
CROSS_TERMS = ("e1", "e2")


class ValidationError(ValueError):
    """A scenario or CLI argument failed validation."""


@dataclass(frozen=True)
class SimSettings:
    t_end: float = 1.0
    step: float = 1e-6
    model: str = "averaged"
    noise_sigma: float = 0.0
    decimation: int = 10

    def __post_init__(self):
        if not (self.t_end > 0.0 and math.isfinite(self.t_end)):
            raise ValidationError("sim.t_end must be positive")
        if not (self.step > 0.0 and math.isfinite(self.step)):
            raise ValidationError("sim.step must be positive")
        if self.model not in MODELS:
            raise ValidationError(f"sim.model must be one of {MODELS}")
        if self.noise_sigma < 0.0:
            raise ValidationError("sim.noise_sigma cannot be negative")
        if not (isinstance(self.decimation, int) and self.decimation >= 1):
            raise ValidationError("sim.decimation must be an integer >= 1")


@dataclass(frozen=True)
class ObserverConfig:
    K1: float = 4165.0
    K2: float = 4165.0
    kappa: float = 200.0
    G0: float = 0.05
    g_min: float = G_MIN_DEFAULT
    g_max: float = G_MAX_DEFAULT

    def __post_init__(self):
        if not (self.K1 > 0.0 and self.K2 > 0.0 and self.kappa > 0.0):
            raise ValidationError("observer gains must be positive")
        if not (self.g_min < self.G0 < self.g_max):
            raise ValidationError("observer.G0 must lie inside "
                                  "(g_min, g_max)")


@dataclass(frozen=True)
class DobConfig:
    # kappa3 (and kappa6) trade tracking lag against sampling bias: the
    # held-measurement stepping biases the stored injection by about
    # kappa3 * d1 * h / 2, which must stay inside the residual band
    # 2 (kappa1 + kappa2) eps / kappa3.
    enabled: bool = False
    kappa1: float = 50.0
    kappa2: float = 50.0
    kappa3: float = 2e3
    kappa4: float = 50.0
    kappa5: float = 50.0
    kappa6: float = 2e3
    theta: float = 3.0
    ussf: str = "alg"

    def __post_init__(self):
        for name in ("kappa1", "kappa2", "kappa3",
                     "kappa4", "kappa5", "kappa6"):
            if not (getattr(self, name) > 0.0):
                raise ValidationError(f"dob.{name} must be positive")
        if not (self.theta > 2.0):
            raise ValidationError("dob.theta must exceed 2")
        if self.ussf not in KIND_CODES:
            raise ValidationError(
                f"dob.ussf must be a built-in kind: {sorted(KIND_CODES)}")


@dataclass(frozen=True)
class ControllerConfig:
    type: str = "ftc"
    ftc: FtcGains = field(default_factory=lambda: FtcGains(
        k1=1e4, k2=1e4, k3=1.0, k4=9e4, k5=9e4, k6=1.0))
    pid: PidGains = field(default_factory=PidGains)
    c1: float = 1e5
    c2: float = 1e5
    u_fixed: float = 0.5
    use_dob: bool = False
    cross_term: str = "e1"

    def __post_init__(self):
        if self.type not in CONTROLLER_TYPES:
            raise ValidationError(
                f"controller.type must be one of {CONTROLLER_TYPES}")
        if not (self.c1 > 0.0 and self.c2 > 0.0):
            raise ValidationError("baseline gains must be positive")
        if not (0.0 <= self.u_fixed <= 1.0):
            raise ValidationError("fixed duty must lie in [0, 1]")
        if self.cross_term not in CROSS_TERMS:
            raise ValidationError(
                f"controller.cross_term must be one of {CROSS_TERMS}")
        if self.ftc.f_kind not in KIND_CODES or \
                self.ftc.g_kind not in KIND_CODES:
            raise ValidationError(
                "scenario controllers are limited to built-in USSF kinds "
                "(the batch kernels dispatch them by code); custom kinds "
                "are available through the per-step API")


@dataclass(frozen=True)
class Scenario:
    plant: PlantParams = field(default_factory=lambda: PlantParams(
        L=1e-5, C=1e-4, Vi=6.0, vr=12.0, fs=1e5))
    schedule: LoadSchedule = field(default_factory=lambda: LoadSchedule((
        (0.0, 10.0), (0.2, 20.0), (0.6, 10.0))))
    v0_0: float = 6.0
    iL_0: float = 0.0
    sim: SimSettings = field(default_factory=SimSettings)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    observer: ObserverConfig = field(default_factory=ObserverConfig)
    dob: DobConfig = field(default_factory=DobConfig)
    seed: int = 0

    def __post_init__(self):
        if not (self.v0_0 >= 0.0 and math.isfinite(self.v0_0)):
            raise ValidationError("initial v0 must be finite and >= 0")
        if not math.isfinite(self.iL_0):
            raise ValidationError("initial iL must be finite")
        if self.plant.fs * self.sim.step > 1.0 + 1e-12:
            raise ValidationError(
                "sim.step too coarse: need fs * step <= 1 so the PWM "
                "carrier advances at most one period per step")
        if self.controller.use_dob and not self.dob.enabled:
            raise ValidationError(
                "controller.use_dob requires dob.enabled")

    @property
    def n_steps(self) -> int:
        return int(round(self.sim.t_end / self.sim.step))

    def replace(self, **kw) -> "Scenario":
        return dataclasses.replace(self, **kw)


def _require_keys(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown {where} keys: {sorted(unknown)}")


def scenario_from_dict(cfg: dict) -> Scenario:
    """Build a validated Scenario from a parsed JSON document."""
    if not isinstance(cfg, dict):
        raise ValidationError("scenario document must be a JSON object")
    _require_keys(cfg, ("plant", "load_schedule", "initial_state", "sim",
                        "controller", "observer", "dob", "seed", "compare"),
                  "scenario")
    try:
        kw = {}
        if "plant" in cfg:
            d = dict(cfg["plant"])
            _require_keys(d, ("L", "C", "Vi", "vr", "fs"), "plant")
            d.setdefault("vr", 12.0)
            kw["plant"] = PlantParams(**{k: float(v) for k, v in d.items()})
        if "load_schedule" in cfg:
            kw["schedule"] = LoadSchedule.from_pairs(cfg["load_schedule"])
        if "initial_state" in cfg:
            d = dict(cfg["initial_state"])
            _require_keys(d, ("v0", "iL"), "initial_state")
            if "v0" in d:
                kw["v0_0"] = float(d["v0"])
            if "iL" in d:
                kw["iL_0"] = float(d["iL"])
        if "sim" in cfg:
            d = dict(cfg["sim"])
            _require_keys(d, ("t_end", "step", "model", "noise_sigma",
                              "decimation"), "sim")
            if "decimation" in d:
                d["decimation"] = int(d["decimation"])
            kw["sim"] = SimSettings(**d)
        if "controller" in cfg:
            kw["controller"] = _controller_from_dict(cfg["controller"])
        if "observer" in cfg:
            d = dict(cfg["observer"])
            _require_keys(d, ("K1", "K2", "kappa", "G0", "g_min", "g_max"),
                          "observer")
            kw["observer"] = ObserverConfig(
                **{k: float(v) for k, v in d.items()})
        if "dob" in cfg:
            d = dict(cfg["dob"])
            _require_keys(d, ("enabled", "kappa1", "kappa2", "kappa3",
                              "kappa4", "kappa5", "kappa6", "theta", "ussf"),
                          "dob")
            kw["dob"] = DobConfig(**d)
        if "seed" in cfg:
            kw["seed"] = int(cfg["seed"])
        return Scenario(**kw)
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc


def _controller_from_dict(cfg: dict) -> ControllerConfig:
    d = dict(cfg)
    _require_keys(d, ("type", "gains", "ussf", "iota", "use_dob",
                      "cross_term"), "controller")
    ctype = d.get("type", "ftc")
    gains = dict(d.get("gains", {}))
    kw = {
        "type": ctype,
        "use_dob": bool(d.get("use_dob", False)),
        "cross_term": d.get("cross_term", "e1"),
    }
    if ctype == "ftc":
        fkw = {"iota": float(d.get("iota", 3.0)),
               "f_kind": d.get("ussf", "alg"),
               "g_kind": d.get("ussf", "alg")}
        base = FtcGains(k1=1e4, k2=1e4, k3=1.0, k4=9e4, k5=9e4, k6=1.0,
                        **fkw)
        if gains:
            _require_keys(gains, ("k1", "k2", "k3", "k4", "k5", "k6"),
                          "controller.gains")
            base = dataclasses.replace(
                base, **{k: float(v) for k, v in gains.items()})
        kw["ftc"] = base
    elif ctype == "pid":
        if gains:
            _require_keys(gains, ("kv_p", "kv_i", "kv_d", "ki_p", "ki_i",
                                  "ki_d", "iv_clamp", "ii_clamp"),
                          "controller.gains")
            kw["pid"] = PidGains(**{k: float(v) for k, v in gains.items()})
    elif ctype == "baseline":
        if gains:
            _require_keys(gains, ("c1", "c2"), "controller.gains")
            kw["c1"] = float(gains.get("c1", 1e5))
            kw["c2"] = float(gains.get("c2", 1e5))
    elif ctype == "fixed":
        if gains:
            _require_keys(gains, ("u",), "controller.gains")
            kw["u_fixed"] = float(gains.get("u", 0.5))
    return ControllerConfig(**kw)


def load_scenario(path: str) -> Scenario:
    """Read and validate a scenario JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read scenario file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in {path}: {exc}") from exc
    return scenario_from_dict(doc)


def scenario_to_dict(sc: Scenario) -> dict:
    """Scenario back to its JSON document form."""
    ctrl = {"type": sc.controller.type,
            "use_dob": sc.controller.use_dob,
            "cross_term": sc.controller.cross_term}
    if sc.controller.type == "ftc":
        g = sc.controller.ftc
        ctrl["ussf"] = g.f_kind
        ctrl["iota"] = g.iota
        ctrl["gains"] = {k: getattr(g, k)
                         for k in ("k1", "k2", "k3", "k4", "k5", "k6")}
    elif sc.controller.type == "pid":
        g = sc.controller.pid
        ctrl["gains"] = {k: getattr(g, k)
                         for k in ("kv_p", "kv_i", "kv_d",
                                   "ki_p", "ki_i", "ki_d",
                                   "iv_clamp", "ii_clamp")}
    elif sc.controller.type == "baseline":
        ctrl["gains"] = {"c1": sc.controller.c1, "c2": sc.controller.c2}
    else:
        ctrl["gains"] = {"u": sc.controller.u_fixed}
    return {
        "plant": {"L": sc.plant.L, "C": sc.plant.C, "Vi": sc.plant.Vi,
                  "vr": sc.plant.vr, "fs": sc.plant.fs},
        "load_schedule": [[t, r] for t, r in sc.schedule.segments],
        "initial_state": {"v0": sc.v0_0, "iL": sc.iL_0},
        "sim": {"t_end": sc.sim.t_end, "step": sc.sim.step,
                "model": sc.sim.model, "noise_sigma": sc.sim.noise_sigma,
                "decimation": sc.sim.decimation},
        "controller": ctrl,
        "observer": {"K1": sc.observer.K1, "K2": sc.observer.K2,
                     "kappa": sc.observer.kappa, "G0": sc.observer.G0,
                     "g_min": sc.observer.g_min,
                     "g_max": sc.observer.g_max},
        "dob": {"enabled": sc.dob.enabled, "kappa1": sc.dob.kappa1,
                "kappa2": sc.dob.kappa2, "kappa3": sc.dob.kappa3,
                "kappa4": sc.dob.kappa4, "kappa5": sc.dob.kappa5,
                "kappa6": sc.dob.kappa6, "theta": sc.dob.theta,
                "ussf": sc.dob.ussf},
        "seed": sc.seed,
    }


CTRL_CODES = {"ftc": 0, "pid": 1, "baseline": 2, "fixed": 3}


def kernel_config(sc: Scenario, skip_steps: int = 0, audit: bool = False,
                  timed: bool = False) -> dict:
    """Flatten a Scenario into the plain dict the kernels consume."""
    import numpy as np

    n = sc.n_steps
    if n < 1:
        raise ValidationError("scenario horizon shorter than one step")
    ts, rs = sc.schedule.as_arrays()
    if sc.sim.noise_sigma > 0.0:
        rng = np.random.Generator(np.random.PCG64(sc.seed))
        noise = rng.normal(0.0, sc.sim.noise_sigma, size=(n + 1, 2))
    else:
        noise = np.zeros((0, 2), dtype=np.float64)
    ctrl = sc.controller
    g = ctrl.ftc
    pid = ctrl.pid
    return {
        "L": sc.plant.L, "C": sc.plant.C, "Vi": sc.plant.Vi,
        "vr": sc.plant.vr, "fs": sc.plant.fs,
        "sched_t": ts, "sched_r": rs,
        "v0_0": sc.v0_0, "iL_0": sc.iL_0,
        "h": sc.sim.step, "n_steps": n,
        "switched": 1 if sc.sim.model == "switched" else 0,
        "noise": noise,
        "K1": sc.observer.K1, "K2": sc.observer.K2,
        "kappa": sc.observer.kappa, "G0": sc.observer.G0,
        "g_min": sc.observer.g_min, "g_max": sc.observer.g_max,
        "dob_enabled": 1 if sc.dob.enabled else 0,
        "dk1": sc.dob.kappa1, "dk2": sc.dob.kappa2, "dk3": sc.dob.kappa3,
        "dk4": sc.dob.kappa4, "dk5": sc.dob.kappa5, "dk6": sc.dob.kappa6,
        "theta": sc.dob.theta, "dob_kind": KIND_CODES[sc.dob.ussf],
        "ctrl": CTRL_CODES[ctrl.type],
        "k1": g.k1, "k2": g.k2, "k3": g.k3,
        "k4": g.k4, "k5": g.k5, "k6": g.k6,
        "iota": g.iota, "f_kind": KIND_CODES[g.f_kind],
        "g_kind": KIND_CODES[g.g_kind],
        "use_dob": 1 if ctrl.use_dob else 0,
        "cross_e2": 1 if ctrl.cross_term == "e2" else 0,
        "kv_p": pid.kv_p, "kv_i": pid.kv_i, "kv_d": pid.kv_d,
        "ki_p": pid.ki_p, "ki_i": pid.ki_i, "ki_d": pid.ki_d,
        "iv_clamp": pid.iv_clamp, "ii_clamp": pid.ii_clamp,
        "c1": ctrl.c1, "c2": ctrl.c2,
        "u_fixed": ctrl.u_fixed,
        "decimation": sc.sim.decimation,
        "skip_steps": int(skip_steps),
        "audit": 1 if audit else 0,
        "timed": 1 if timed else 0,
    }
