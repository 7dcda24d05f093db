"""Disturbance sweeps: per-cell maximum recoverable impulse searches.

A cell fixes push direction (or timing) and controller method; the force
magnitude then rises in fixed increments until the closed loop fails to
recover, mirroring the per-trial procedure the searches are calibrated
against. Cells are independent worlds, so they run in parallel across
processes; results are gathered by cell index and are invariant to
execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .nmpc import ablation_config
from .scenario import SweepSpec
from .sim import Disturbance, SimConfig, SimLog, run_scenario


@dataclass
class CellResult:
    cell: float  # direction in degrees or timing offset in seconds
    method: str
    max_impulse: float
    trials: int
    capped: bool


def _with_method(cfg: SimConfig, method: str) -> SimConfig:
    return replace(cfg, nmpc=ablation_config(method, cfg.nmpc))


def _with_push(cfg: SimConfig, magnitude: float, direction_deg: float,
               start_time: float, duration: float) -> SimConfig:
    ang = math.radians(direction_deg)
    force = np.array([magnitude * math.cos(ang), magnitude * math.sin(ang)])
    return replace(cfg, disturbances=[
        Disturbance(force=force, start_time=start_time, duration=duration)
    ])


def recovered(log: SimLog, spec: SweepSpec, push_end: float) -> bool:
    """No fall, and the DCM error has resettled below the threshold by the
    end of the run."""
    if log.fell:
        return False
    t = log.col("time")
    tail = t >= max(push_end, t[-1] - 0.5) if len(t) else slice(0)
    err = np.hypot(log.col("dcm_err_x")[tail], log.col("dcm_err_y")[tail])
    return bool(err.size) and float(err.max()) < spec.settle_threshold * 4


def settle_time(log: SimLog, push_end: float, threshold: float) -> float:
    """First time after the push from which the DCM error norm stays below
    the threshold; inf when it never settles."""
    t = log.col("time")
    err = np.hypot(log.col("dcm_err_x"), log.col("dcm_err_y"))
    after = np.flatnonzero(t >= push_end)
    for idx in after:
        if np.all(err[idx:] < threshold):
            return float(t[idx])
    return math.inf


def max_recoverable_impulse(cfg: SimConfig, spec: SweepSpec, method: str,
                            direction_deg: float, start_time: float) -> CellResult:
    """Raise the push force by magnitude_step per trial until recovery fails."""
    cfg = _with_method(cfg, method)
    best = 0.0
    trials = 0
    magnitude = spec.magnitude_start
    while magnitude <= spec.magnitude_max + 1e-9:
        trial_cfg = _with_push(cfg, magnitude, direction_deg, start_time,
                               spec.force_duration)
        log = run_scenario(trial_cfg)
        trials += 1
        if not recovered(log, spec, start_time + spec.force_duration):
            return CellResult(direction_deg, method, best, trials, capped=False)
        best = magnitude * spec.force_duration
        magnitude += spec.magnitude_step
    return CellResult(direction_deg, method, best, trials, capped=True)


def _direction_cell(args):
    cfg, spec, method, direction = args
    return max_recoverable_impulse(cfg, spec, method, direction, spec.push_time)


def _timing_cell(args):
    cfg, spec, method, timing = args
    res = max_recoverable_impulse(cfg, spec, method, spec.push_direction,
                                  spec.cycle_anchor + timing)
    return CellResult(timing, method, res.max_impulse, res.trials, res.capped)


def _run_cells(worker, jobs, threads: int):
    if threads <= 1:
        return [worker(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, jobs, chunksize=1))


def run_direction_sweep(cfg: SimConfig, spec: SweepSpec, threads: int = 1) -> list[CellResult]:
    jobs = [(cfg, spec, m, d) for m in spec.methods for d in spec.directions]
    return _run_cells(_direction_cell, jobs, threads)


def run_timing_sweep(cfg: SimConfig, spec: SweepSpec, threads: int = 1) -> list[CellResult]:
    jobs = [(cfg, spec, m, t) for m in spec.methods for t in spec.timings]
    return _run_cells(_timing_cell, jobs, threads)


@dataclass
class AblationRun:
    method: str
    log: SimLog
    recovered: bool
    settle: float
    peak_err: float


def run_ablation(cfg: SimConfig, spec: SweepSpec, methods=None) -> list[AblationRun]:
    """Identical scenario under each strategy subset."""
    if not cfg.disturbances:
        raise ValueError("ablation scenario needs a configured disturbance")
    push = cfg.disturbances[0]
    push_end = push.start_time + push.duration
    out = []
    for method in methods or spec.methods:
        log = run_scenario(_with_method(cfg, method))
        err = np.hypot(log.col("dcm_err_x"), log.col("dcm_err_y"))
        out.append(AblationRun(
            method=method,
            log=log,
            recovered=recovered(log, spec, push_end),
            settle=settle_time(log, push_end, spec.settle_threshold),
            peak_err=float(err.max()) if err.size else math.inf,
        ))
    return out
