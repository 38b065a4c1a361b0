"""Configuration: one YAML file carries material, grid, sensor, noise,
filter, and experiment settings.

Keys carry their units (``t_pc_K``, ``h_fus_J_per_kg``) so parameter
provenance stays auditable. The built-in defaults describe an
illustrative desk-scale module with hexadecane-like composite
properties; they are NOT measurements of any physical device.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .errors import InvalidConfigError
from .materials import FluidParams, GridSpec, PcmThermalParams, SocParams
from .network import KappaFn, LpvSystem, Sensor, sensor_map
from .sdre import NoiseModel, SampleSchedule
from .simulate import InputSignals, OdeConfig

SUPPORTED_RATES_HZ = (80.0, 10.0, 1.0, 0.2)
SENSOR_ORDER = ("tc1", "tc2", "tc3", "tc4")


def default_config() -> dict:
    """Illustrative desk-scale configuration (not ground truth for any device)."""
    return {
        "material": {
            "cp_sol_J_per_kgK": 1900.0,
            "cp_liq_J_per_kgK": 2100.0,
            "h_fus_J_per_kg": 150000.0,
            "t_pc_K": 289.5,
            "delta_t_pc_K": 8.0,
            "kappa_cpcm_W_per_mK": 6.0,
            "rho_cpcm_kg_per_m3": 800.0,
            "kappa_table": None,
        },
        "fluid": {
            "cp_J_per_kgK": 4182.0,
            "u_conv_W_per_m2K": 1200.0,
            "rho_kg_per_m3": 1000.0,
            "kappa_W_per_mK": 0.6,
        },
        "plate": {
            "cp_J_per_kgK": 900.0,
            "rho_kg_per_m3": 2700.0,
            "kappa_W_per_mK": 160.0,
        },
        "geometry": {
            "length_m": 0.12,
            "width_m": 0.06,
            "fluid_height_m": 0.004,
            "plate_height_m": 0.003,
            "cpcm_height_m": 0.015,
        },
        "estimator_grid": {"nx": 3, "ny": 7},
        "truth_grid": {"nx": 21, "ny": 22},
        "soc": {"t_min_K": 278.0, "t_max_K": 308.0},
        "sensors": {
            "tc1": {"column": 3, "layer": 1, "averaged": False},
            "tc2": {"column": 1, "layer": 3, "averaged": True},
            "tc3": {"column": 2, "layer": 3, "averaged": False},
            "tc4": {"column": 3, "layer": 3, "averaged": True},
        },
        "noise": {
            "sigma2_K2": 0.007,
            "process_K2": 1.0e-7,
        },
        # Estimator-side parameter misestimates (truth keeps the base values).
        # Scales of 1.0 mean the estimator model matches the truth exactly;
        # twin studies of measurement-rate sensitivity need nonzero model
        # error, which these scales emulate.
        "estimator_detune": {
            "kappa_cpcm_scale": 1.0,
            "h_fus_scale": 1.0,
            "u_conv_scale": 1.0,
            "t_pc_shift_K": 0.0,
        },
        "filter": {
            "dt_predict_s": 0.0125,
            "update_every": 8,
            "p0_K2": 1.0,
            "x0_K": None,
            "x0_offset_K": 0.0,
        },
        "ode": {
            "rel_tol": 1.0e-8,
            "abs_tol": 1.0e-8,
            "max_dt_s": 1.0,
        },
        "experiment": {
            "mode": "twin-sim",
            "seed": 20260809,
            "withhold": [],
            "base_rate_hz": 80.0,
            "initial_temperature_K": None,
            "measurement_t_start_s": None,
            "profile": [
                {"duration_s": 140.0, "mdot_kg_s": 0.15, "t_in_K": 283.0, "t_in_end_K": 299.0},
                {"duration_s": 60.0, "mdot_kg_s": 0.15, "t_in_K": 299.0},
                {"duration_s": 50.0, "mdot_kg_s": 0.0, "t_in_K": 299.0},
                {"duration_s": 120.0, "mdot_kg_s": 0.15, "t_in_K": 281.0},
                {"duration_s": 50.0, "mdot_kg_s": 0.05, "t_in_K": 290.0},
            ],
        },
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in out:
            raise InvalidConfigError(f"unknown config key: {where}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: Optional[str] = None) -> dict:
    """Read a YAML config, filling unspecified keys from the defaults."""
    cfg = default_config()
    if path is None:
        return cfg
    p = Path(path)
    if not p.exists():
        raise InvalidConfigError(f"no such config file: {p}")
    try:
        loaded = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise InvalidConfigError(f"{p}: not valid YAML: {exc}") from exc
    if loaded is None:
        return cfg
    if not isinstance(loaded, dict):
        raise InvalidConfigError(f"{p}: top level must be a mapping")
    return _merge(cfg, loaded)


def config_hash(cfg: dict) -> str:
    """Hash of the semantic content: whitespace, comments, key order don't matter."""
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canonical.encode()).hexdigest()


def build_pcm_params(cfg: dict) -> PcmThermalParams:
    m = cfg["material"]
    return PcmThermalParams(
        cp_sol=m["cp_sol_J_per_kgK"],
        cp_liq=m["cp_liq_J_per_kgK"],
        h_fus=m["h_fus_J_per_kg"],
        t_pc=m["t_pc_K"],
        delta_t_pc=m["delta_t_pc_K"],
    )


def build_fluid_params(cfg: dict) -> FluidParams:
    return FluidParams(cp_f=cfg["fluid"]["cp_J_per_kgK"], u_conv=cfg["fluid"]["u_conv_W_per_m2K"])


def build_kappa_fn(cfg: dict) -> Optional[KappaFn]:
    """Optional tabulated CPCM conductivity vs temperature (linear interpolation)."""
    table = cfg["material"].get("kappa_table")
    if table is None:
        return None
    pts = np.asarray(table, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise InvalidConfigError("kappa_table must be a list of [T_K, kappa_W_per_mK] pairs")
    if np.any(np.diff(pts[:, 0]) <= 0.0):
        raise InvalidConfigError("kappa_table temperatures must be strictly increasing")
    if np.any(pts[:, 1] <= 0.0):
        raise InvalidConfigError("kappa_table conductivities must be positive")
    t_pts, k_pts = pts[:, 0].copy(), pts[:, 1].copy()
    return lambda T: np.interp(T, t_pts, k_pts)


def build_grid(cfg: dict, which: str) -> GridSpec:
    if which not in ("estimator", "truth"):
        raise InvalidConfigError(f"unknown grid selector {which!r}")
    g = cfg["estimator_grid" if which == "estimator" else "truth_grid"]
    geo = cfg["geometry"]
    return GridSpec.rectangular(
        nx=int(g["nx"]),
        ny=int(g["ny"]),
        length=geo["length_m"],
        width=geo["width_m"],
        fluid_height=geo["fluid_height_m"],
        plate_height=geo["plate_height_m"],
        cpcm_height=geo["cpcm_height_m"],
        rho_fluid=cfg["fluid"]["rho_kg_per_m3"],
        rho_plate=cfg["plate"]["rho_kg_per_m3"],
        rho_cpcm=cfg["material"]["rho_cpcm_kg_per_m3"],
        kappa_fluid=cfg["fluid"]["kappa_W_per_mK"],
        kappa_plate=cfg["plate"]["kappa_W_per_mK"],
        kappa_cpcm=cfg["material"]["kappa_cpcm_W_per_mK"],
        cp_fluid=cfg["fluid"]["cp_J_per_kgK"],
        cp_plate=cfg["plate"]["cp_J_per_kgK"],
    )


def build_sensors(cfg: dict, withhold: Sequence[str] = ()) -> list[Sensor]:
    """Active sensors in canonical output order, minus the withheld names."""
    withheld = {w.lower() for w in withhold}
    unknown = withheld - set(SENSOR_ORDER)
    if unknown:
        raise InvalidConfigError(f"cannot withhold unknown sensors: {sorted(unknown)}")
    sensors = []
    for name in SENSOR_ORDER:
        if name not in cfg["sensors"] or name in withheld:
            continue
        entry = cfg["sensors"][name]
        sensors.append(
            Sensor(
                name=name,
                column=int(entry["column"]),
                layer=int(entry["layer"]),
                averaged=bool(entry["averaged"]),
            )
        )
    if not sensors:
        raise InvalidConfigError(
            "effective sensor set is empty; the detectability guarantee needs at "
            "least one measured control volume"
        )
    return sensors


def build_schedule(cfg: dict, rate_hz: Optional[float] = None) -> SampleSchedule:
    f = cfg["filter"]
    dt = float(f["dt_predict_s"])
    if rate_hz is None:
        return SampleSchedule(dt_predict=dt, update_every=int(f["update_every"]))
    return SampleSchedule.for_rate(rate_hz, dt_predict=dt)


def build_ode_config(cfg: dict) -> OdeConfig:
    o = cfg["ode"]
    return OdeConfig(rel_tol=o["rel_tol"], abs_tol=o["abs_tol"], max_dt=o["max_dt_s"])


def build_profile_signals(cfg: dict) -> tuple[InputSignals, float]:
    """Piecewise synthetic driving profile; returns signals and total duration.

    Each segment holds the mass flow constant; the inlet temperature is
    constant or ramps linearly to ``t_in_end_K`` across the segment.
    """
    profile = cfg["experiment"]["profile"]
    if not profile:
        raise InvalidConfigError("experiment.profile must list at least one segment")
    starts, mdots, t0s, t1s = [], [], [], []
    t = 0.0
    for i, seg in enumerate(profile):
        dur = float(seg["duration_s"])
        if dur <= 0.0:
            raise InvalidConfigError(f"profile segment {i} must have positive duration")
        starts.append(t)
        mdots.append(float(seg["mdot_kg_s"]))
        t0s.append(float(seg["t_in_K"]))
        t1s.append(float(seg.get("t_in_end_K") or seg["t_in_K"]))
        t += dur
    starts_arr = np.asarray(starts)
    ends_arr = np.append(starts_arr[1:], t)
    mdot_arr = np.asarray(mdots)
    t0_arr, t1_arr = np.asarray(t0s), np.asarray(t1s)

    def segment(at: float) -> int:
        return max(0, min(len(profile) - 1, int(np.searchsorted(starts_arr, at, "right")) - 1))

    def mdot(at: float) -> float:
        return float(mdot_arr[segment(at)])

    def t_in(at: float) -> float:
        i = segment(at)
        span = ends_arr[i] - starts_arr[i]
        frac = np.clip((at - starts_arr[i]) / span, 0.0, 1.0)
        return float(t0_arr[i] + (t1_arr[i] - t0_arr[i]) * frac)

    return InputSignals(mdot=mdot, t_in=t_in, breakpoints=starts_arr[1:]), t


@dataclass
class ExperimentSetup:
    """Everything a case study needs, resolved from one config mapping."""

    cfg: dict
    pcm: PcmThermalParams
    fluid: FluidParams
    estimator_grid: GridSpec
    truth_grid: GridSpec
    soc: SocParams
    soc_estimator: SocParams
    sensors: list[Sensor]
    system: LpvSystem
    noise: NoiseModel
    schedule: SampleSchedule
    ode: OdeConfig
    signals: InputSignals
    duration: float
    seed: int
    mode: str
    withhold: tuple[str, ...]

    @property
    def hash(self) -> str:
        return config_hash(self.cfg)


def build_setup(
    cfg: dict,
    withhold: Optional[Sequence[str]] = None,
    rate_hz: Optional[float] = None,
    seed: Optional[int] = None,
) -> ExperimentSetup:
    """Resolve a config mapping (plus CLI overrides) into domain objects."""
    exp = cfg["experiment"]
    mode = exp["mode"]
    if mode not in ("twin-sim", "replay"):
        raise InvalidConfigError(f"experiment.mode must be 'twin-sim' or 'replay', got {mode!r}")
    withhold = tuple(exp["withhold"]) if withhold is None else tuple(withhold)
    seed = int(exp["seed"]) if seed is None else int(seed)

    pcm = build_pcm_params(cfg)
    fluid = build_fluid_params(cfg)
    est_grid = build_grid(cfg, "estimator")
    truth_grid = build_grid(cfg, "truth")
    soc = SocParams.from_temperatures(cfg["soc"]["t_min_K"], cfg["soc"]["t_max_K"], est_grid, pcm)
    sensors = build_sensors(cfg, withhold)
    C = sensor_map(sensors, est_grid)

    # the filter may run on deliberately misestimated material parameters;
    # SOC and all truth-side quantities keep the base values
    detune = cfg["estimator_detune"]
    est_cfg = copy.deepcopy(cfg)
    est_cfg["material"]["kappa_cpcm_W_per_mK"] *= float(detune["kappa_cpcm_scale"])
    est_cfg["material"]["h_fus_J_per_kg"] *= float(detune["h_fus_scale"])
    est_cfg["fluid"]["u_conv_W_per_m2K"] *= float(detune["u_conv_scale"])
    est_cfg["material"]["t_pc_K"] += float(detune["t_pc_shift_K"])
    est_pcm = build_pcm_params(est_cfg)
    est_fluid = build_fluid_params(est_cfg)
    est_model_grid = build_grid(est_cfg, "estimator")
    system = LpvSystem(
        grid=est_model_grid, fluid=est_fluid, pcm=est_pcm, C=C, kappa_fn=build_kappa_fn(est_cfg)
    )
    soc_estimator = SocParams.from_temperatures(
        cfg["soc"]["t_min_K"], cfg["soc"]["t_max_K"], est_model_grid, est_pcm
    )
    noise = NoiseModel.build(
        sensors, est_grid.n, sigma2=cfg["noise"]["sigma2_K2"], process_variance=cfg["noise"]["process_K2"]
    )
    schedule = build_schedule(cfg, rate_hz)
    signals, duration = build_profile_signals(cfg)
    return ExperimentSetup(
        cfg=cfg,
        pcm=pcm,
        fluid=fluid,
        estimator_grid=est_grid,
        truth_grid=truth_grid,
        soc=soc,
        soc_estimator=soc_estimator,
        sensors=sensors,
        system=system,
        noise=noise,
        schedule=schedule,
        ode=build_ode_config(cfg),
        signals=signals,
        duration=duration,
        seed=seed,
        mode=mode,
        withhold=withhold,
    )
