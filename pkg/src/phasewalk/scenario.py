"""Scenario file parsing.

Flat INI-style text: `[section]` headers, `key = value` lines, `#`
comments, UTF-8. Every key has a default except the scenario name.
Unknown sections or keys are hard errors carrying the offending line
number, so typos never pass silently.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .gait import Side, WalkCommand
from .lipm import LipmParams
from .nmpc import NmpcConfig
from .sim import Disturbance, FallThresholds, SimConfig


class ConfigError(Exception):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class SweepMode(enum.Enum):
    DIRECTION = "direction"
    TIMING = "timing"
    MAGNITUDE = "magnitude"
    ABLATION = "ablation"


@dataclass
class SweepSpec:
    """Grid and search settings for disturbance sweeps."""

    mode: SweepMode = SweepMode.DIRECTION
    directions: list[float] = field(default_factory=lambda: [30.0 * k for k in range(12)])
    timings: list[float] = field(default_factory=lambda: [round(0.1 * k, 10) for k in range(9)])
    magnitude_start: float = 10.0
    magnitude_step: float = 10.0
    magnitude_max: float = 600.0
    force_duration: float = 0.2
    methods: list[str] = field(default_factory=lambda: ["M1", "M2", "M3", "M4"])
    push_time: float = 1.2
    cycle_anchor: float = 1.5
    push_direction: float = 0.0
    settle_threshold: float = 0.005

    def validate(self, cycle: float):
        if self.magnitude_step <= 0.0:
            raise ConfigError("magnitude_step must be positive")
        for t in self.timings:
            if not (0.0 <= t < cycle - 1e-9):
                raise ConfigError(
                    f"timing {t} outside the step cycle [0, {cycle})"
                )


def _parse_scalar(raw: str, line: int):
    low = raw.strip().lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        val = float(raw)
    except ValueError:
        return raw.strip()
    return val


def _parse_grid(raw: str, line: int) -> list[float]:
    """Either `a,b,c` or `start:stop:step` (inclusive stop)."""
    raw = raw.strip()
    if ":" in raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid must be start:stop:step, got {raw!r}", line)
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"bad grid value in {raw!r}", line)
        if step <= 0:
            raise ConfigError("grid step must be positive", line)
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 10) for k in range(n)]
    try:
        return [float(p) for p in raw.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"bad list value {raw!r}", line)


_SECTIONS = {
    "model": {"com_height", "zmp_height", "gravity", "mass"},
    "gait": {"step_length", "step_width", "n_steps", "first_swing", "t_ssp", "t_dsp",
             "preview_horizon", "jerk_weight", "zmp_weight"},
    "nmpc": {"n_phases", "weight_zmp", "weight_step", "weight_offset", "weight_timing",
             "zmp_bound_x", "zmp_bound_y", "step_bound_forward", "step_bound_backward",
             "step_bound_lateral", "min_lateral_clearance", "ssp_delta_min",
             "ssp_delta_max", "dsp_delta_max", "dsp_min_duration", "min_phase_lead",
             "max_sqp_iters", "sqp_tolerance", "ssp_timing_enabled",
             "dsp_timing_enabled", "step_adjust_enabled"},
    "sim": {"name", "physics_dt", "control_period", "duration", "swing_height",
            "fall_dcm_err", "fall_sustain", "fall_com_radius", "stop_on_fall"},
    "disturbance": {"force_x", "force_y", "magnitude", "direction_deg", "start_time",
                    "duration"},
    "sweep": {"mode", "directions", "timings", "magnitude_start", "magnitude_step",
              "magnitude_max", "force_duration", "methods", "push_time",
              "cycle_anchor", "push_direction", "settle_threshold"},
}

_GRID_KEYS = {("sweep", "directions"), ("sweep", "timings")}
_LIST_KEYS = {("sweep", "methods")}


def parse_scenario_text(text: str) -> dict[str, dict]:
    """Raw section/key/value tree with strict key validation."""
    tree: dict[str, dict] = {name: {} for name in _SECTIONS}
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw_line.strip()!r}", lineno)
        if section is None:
            raise ConfigError("key outside any [section]", lineno)
        key, raw_val = (part.strip() for part in line.split("=", 1))
        if key not in _SECTIONS[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if (section, key) in _GRID_KEYS:
            tree[section][key] = _parse_grid(raw_val, lineno)
        elif (section, key) in _LIST_KEYS:
            tree[section][key] = [p.strip().upper() for p in raw_val.split(",") if p.strip()]
        else:
            tree[section][key] = _parse_scalar(raw_val, lineno)
    return tree


def _need_float(tree, section, key, default):
    val = tree[section].get(key, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"[{section}] {key} must be a number, got {val!r}")
    return float(val)


def _need_bool(tree, section, key, default):
    val = tree[section].get(key, default)
    if not isinstance(val, bool):
        raise ConfigError(f"[{section}] {key} must be a boolean, got {val!r}")
    return val


def build_sim_config(tree: dict[str, dict]) -> SimConfig:
    if "name" not in tree["sim"]:
        raise ConfigError("[sim] name is required")
    name = str(tree["sim"]["name"])

    try:
        params = LipmParams(
            com_height=_need_float(tree, "model", "com_height", 0.75),
            zmp_height=_need_float(tree, "model", "zmp_height", 0.0),
            gravity=_need_float(tree, "model", "gravity", 9.81),
            mass=_need_float(tree, "model", "mass", 100.0),
        )
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}")

    swing_raw = str(tree["gait"].get("first_swing", "right")).lower()
    if swing_raw not in ("left", "right"):
        raise ConfigError(f"[gait] first_swing must be left or right, got {swing_raw!r}")
    duration = _need_float(tree, "sim", "duration", 10.0)
    t_ssp = _need_float(tree, "gait", "t_ssp", 0.6)
    t_dsp = _need_float(tree, "gait", "t_dsp", 0.3)
    n_steps = tree["gait"].get("n_steps", 0)
    if n_steps in (0, 0.0):
        # enough real steps to cover the scenario; the schedule pads beyond
        n_steps = max(2, int(math.ceil(duration / (t_ssp + t_dsp))) + 1)
    command = WalkCommand(
        step_length=_need_float(tree, "gait", "step_length", 0.0),
        step_width=_need_float(tree, "gait", "step_width", 0.2),
        n_steps=int(n_steps),
        first_swing=Side.LEFT if swing_raw == "left" else Side.RIGHT,
    )

    nmpc_kwargs = {}
    for f in fields(NmpcConfig):
        if f.name not in _SECTIONS["nmpc"]:
            continue
        if f.name in tree["nmpc"]:
            val = tree["nmpc"][f.name]
            if f.type == "bool" or isinstance(f.default, bool):
                if not isinstance(val, bool):
                    raise ConfigError(f"[nmpc] {f.name} must be a boolean")
                nmpc_kwargs[f.name] = val
            elif isinstance(f.default, int) and not isinstance(f.default, bool):
                nmpc_kwargs[f.name] = int(val)
            else:
                nmpc_kwargs[f.name] = float(val)
    try:
        nmpc_cfg = NmpcConfig(**nmpc_kwargs)
    except ValueError as exc:
        raise ConfigError(f"[nmpc] {exc}")

    disturbances = []
    dist = tree["disturbance"]
    if dist:
        if "magnitude" in dist:
            mag = _need_float(tree, "disturbance", "magnitude", 0.0)
            ang = math.radians(_need_float(tree, "disturbance", "direction_deg", 0.0))
            force = np.array([mag * math.cos(ang), mag * math.sin(ang)])
        else:
            force = np.array([
                _need_float(tree, "disturbance", "force_x", 0.0),
                _need_float(tree, "disturbance", "force_y", 0.0),
            ])
        if float(np.linalg.norm(force)) > 0.0:
            disturbances.append(Disturbance(
                force=force,
                start_time=_need_float(tree, "disturbance", "start_time", 1.2),
                duration=_need_float(tree, "disturbance", "duration", 0.2),
            ))

    fall = FallThresholds(
        dcm_err_limit=_need_float(tree, "sim", "fall_dcm_err", 0.5),
        sustain_time=_need_float(tree, "sim", "fall_sustain", 0.2),
        com_radius=_need_float(tree, "sim", "fall_com_radius", 1.0),
    )

    try:
        return SimConfig(
            name=name,
            params=params,
            command=command,
            t_ssp=t_ssp,
            t_dsp=t_dsp,
            nmpc=nmpc_cfg,
            physics_dt=_need_float(tree, "sim", "physics_dt", 5e-4),
            control_period=_need_float(tree, "sim", "control_period", 0.01),
            duration=duration,
            preview_horizon=_need_float(tree, "gait", "preview_horizon", 1.6),
            jerk_weight=_need_float(tree, "gait", "jerk_weight", 1e-6),
            zmp_weight=_need_float(tree, "gait", "zmp_weight", 1.0),
            swing_height=_need_float(tree, "sim", "swing_height", 0.05),
            disturbances=disturbances,
            fall=fall,
            stop_on_fall=_need_bool(tree, "sim", "stop_on_fall", True),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def build_sweep_spec(tree: dict[str, dict], cfg: SimConfig) -> SweepSpec:
    sweep = tree["sweep"]
    mode_raw = str(sweep.get("mode", "direction")).lower()
    try:
        mode = SweepMode(mode_raw)
    except ValueError:
        raise ConfigError(f"[sweep] unknown mode {mode_raw!r}")
    spec = SweepSpec(mode=mode)
    if "directions" in sweep:
        spec.directions = list(sweep["directions"])
    if "timings" in sweep:
        spec.timings = list(sweep["timings"])
    if "methods" in sweep:
        spec.methods = list(sweep["methods"])
    for key in ("magnitude_start", "magnitude_step", "magnitude_max", "force_duration",
                "push_time", "cycle_anchor", "push_direction", "settle_threshold"):
        if key in sweep:
            setattr(spec, key, _need_float(tree, "sweep", key, getattr(spec, key)))
    for m in spec.methods:
        if m not in ("M1", "M2", "M3", "M4"):
            raise ConfigError(f"[sweep] unknown method {m!r}")
    spec.validate(cfg.t_ssp + cfg.t_dsp)
    return spec


def load_scenario(path: str) -> tuple[SimConfig, SweepSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        tree = parse_scenario_text(fh.read())
    cfg = build_sim_config(tree)
    return cfg, build_sweep_spec(tree, cfg)
