"""Closed-loop point-mass simulator.

Two-rate loop: the plant integrates the pendulum dynamics plus external
force at the physics rate (semi-implicit Euler, 2 kHz by default); the
controller runs at the control rate (100 Hz): regenerate references from
the live schedule, measure the DCM error, solve the predictive problem,
then apply ZMP = reference + modulation interpolated over the committed
phase duration, retarget the swing spline, and commit the new duration.
A phase transition fires when the in-phase clock reaches the committed
duration; a finishing single support commits its swing target as the
landed footstep and shifts the remaining plan by the landing deviation.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .gait import (
    GaitSchedule,
    PhaseType,
    PreviewGenerator,
    Side,
    WalkCommand,
    build_schedule,
    plan_footsteps,
    preview_com,
)
from .lipm import LipmParams, RobotState, Vec2, as_vec2, dcm_of
from .nmpc import (
    NmpcConfig,
    NmpcController,
    NmpcSolution,
    build_contexts,
    shift_warm_start,
    solution_diagnostics,
)
from .qp import QpStatus


@dataclass
class Disturbance:
    """Constant external force on the point mass over a time window."""

    force: Vec2
    start_time: float
    duration: float

    def __post_init__(self):
        self.force = as_vec2(self.force)
        if self.duration <= 0.0:
            raise ValueError("disturbance duration must be positive")

    @property
    def impulse(self) -> float:
        return float(np.linalg.norm(self.force)) * self.duration

    def active(self, t: float) -> bool:
        return self.start_time <= t < self.start_time + self.duration


@dataclass
class SwingTrajectory:
    """Quintic per horizontal axis plus a lift bump for logging."""

    coeffs: np.ndarray  # (2, 6), per-axis polynomial coefficients, ascending
    start_time: float
    end_time: float
    target: Vec2
    lift_height: float = 0.0

    def _tau(self, t: float) -> float:
        return min(max(t, self.start_time), self.end_time) - self.start_time

    def position(self, t: float) -> Vec2:
        tau = self._tau(t)
        powers = tau ** np.arange(6)
        return self.coeffs @ powers

    def velocity(self, t: float) -> Vec2:
        tau = self._tau(t)
        powers = np.array([0, 1, 2 * tau, 3 * tau**2, 4 * tau**3, 5 * tau**4], dtype=float)
        return self.coeffs @ powers

    def acceleration(self, t: float) -> Vec2:
        tau = self._tau(t)
        powers = np.array([0, 0, 2, 6 * tau, 12 * tau**2, 20 * tau**3], dtype=float)
        return self.coeffs @ powers

    def lift(self, t: float) -> float:
        span = self.end_time - self.start_time
        s = self._tau(t) / span if span > 0 else 1.0
        return self.lift_height * math.sin(math.pi * s) ** 2


def swing_quintic(
    start_pos: Vec2,
    start_vel: Vec2,
    start_acc: Vec2,
    target: Vec2,
    t0: float,
    t1: float,
    lift_height: float = 0.0,
) -> SwingTrajectory:
    """Quintic matching (pos, vel, acc) at t0 and (target, 0, 0) at t1."""
    span = t1 - t0
    if span <= 1e-9:
        raise ValueError(f"degenerate swing interval [{t0}, {t1}]")
    start_pos = as_vec2(start_pos)
    start_vel = as_vec2(start_vel)
    start_acc = as_vec2(start_acc)
    target = as_vec2(target)
    coeffs = np.zeros((2, 6))
    d = span
    mat = np.array(
        [
            [d**3, d**4, d**5],
            [3 * d**2, 4 * d**3, 5 * d**4],
            [6 * d, 12 * d**2, 20 * d**3],
        ]
    )
    for axis in range(2):
        a0, a1, a2 = start_pos[axis], start_vel[axis], 0.5 * start_acc[axis]
        rhs = np.array(
            [
                target[axis] - (a0 + a1 * d + a2 * d * d),
                -(a1 + 2 * a2 * d),
                -2 * a2,
            ]
        )
        a345 = np.linalg.solve(mat, rhs)
        coeffs[axis] = [a0, a1, a2, *a345]
    return SwingTrajectory(coeffs=coeffs, start_time=t0, end_time=t1, target=target,
                           lift_height=lift_height)


@dataclass
class FallThresholds:
    dcm_err_limit: float = 0.5
    sustain_time: float = 0.2
    com_radius: float = 1.0


class FallMonitor:
    """Declares a fall when the DCM error stays over the limit for the
    sustain window, or the CoM leaves the support footprint radius."""

    def __init__(self, thresholds: FallThresholds, control_period: float):
        self.thresholds = thresholds
        self._needed = max(1, int(round(thresholds.sustain_time / control_period)))
        self._over = 0

    def update(self, dcm_err: Vec2, com: Vec2, feet: list[Vec2]) -> bool:
        th = self.thresholds
        if float(np.linalg.norm(dcm_err)) > th.dcm_err_limit:
            self._over += 1
        else:
            self._over = 0
        if self._over >= self._needed:
            return True
        dist = min(float(np.linalg.norm(com - f)) for f in feet)
        return dist > th.com_radius


def physics_step(
    state: RobotState, zmp_des: Vec2, ext_force: Vec2, params: LipmParams, dt: float
) -> RobotState:
    """Semi-implicit Euler update of the pendulum plus external force."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    acc = (params.gravity / params.pendulum_height) * (state.com - zmp_des) \
        + ext_force / params.mass
    vel = state.com_vel + acc * dt
    com = state.com + vel * dt
    return RobotState(com=com, com_vel=vel, time_in_phase=state.time_in_phase + dt)


@dataclass
class SimConfig:
    name: str = "scenario"
    params: LipmParams = field(default_factory=LipmParams)
    command: WalkCommand = field(default_factory=WalkCommand)
    t_ssp: float = 0.6
    t_dsp: float = 0.3
    nmpc: NmpcConfig = field(default_factory=NmpcConfig)
    physics_dt: float = 5e-4
    control_period: float = 0.01
    duration: float = 10.0
    preview_horizon: float = 1.6
    jerk_weight: float = 1e-6
    zmp_weight: float = 1.0
    swing_height: float = 0.05
    disturbances: list[Disturbance] = field(default_factory=list)
    fall: FallThresholds = field(default_factory=FallThresholds)
    stop_on_fall: bool = True

    def __post_init__(self):
        ratio = self.control_period / self.physics_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("control_period must be an integer multiple of physics_dt")

    @property
    def substeps(self) -> int:
        return int(round(self.control_period / self.physics_dt))


TICK_COLUMNS = [
    "time", "com_x", "com_y", "com_vel_x", "com_vel_y",
    "dcm_x", "dcm_y", "dcm_ref_x", "dcm_ref_y", "dcm_err_x", "dcm_err_y",
    "zmp_ref_x", "zmp_ref_y", "zmp_ctrl_x", "zmp_ctrl_y", "zmp_des_x", "zmp_des_y",
    "phase_index", "phase_type", "time_in_phase", "t_new",
    "swing_target_x", "swing_target_y", "disturbance_active",
    "sqp_iterations", "sqp_step_norm", "sqp_converged",
    "continuity_gap", "dsp_step_norm", "bound_violation", "phase1_lead",
    "solve_time",
]


class SimLog:
    """Columnar per-tick record plus an event list."""

    def __init__(self, n_ticks: int):
        self.data = np.full((n_ticks, len(TICK_COLUMNS)), np.nan)
        self.events: list[dict] = []
        self.n_rows = 0
        self.fall_time: float | None = None

    def col(self, name: str) -> np.ndarray:
        return self.data[: self.n_rows, TICK_COLUMNS.index(name)]

    def add_row(self, values: dict):
        row = self.data[self.n_rows]
        for key, val in values.items():
            row[TICK_COLUMNS.index(key)] = val
        self.n_rows += 1

    def add_event(self, time: float, kind: str, **payload):
        self.events.append({"time": time, "kind": kind, **payload})

    @property
    def fell(self) -> bool:
        return self.fall_time is not None

    def rows(self) -> np.ndarray:
        return self.data[: self.n_rows]


class World:
    """One closed-loop scenario instance. Not thread-safe; one per worker."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.params = cfg.params
        plan = plan_footsteps(cfg.command)
        self.schedule = build_schedule(plan, cfg.t_ssp, cfg.t_dsp)
        self.preview = PreviewGenerator(
            cfg.params,
            sample_period=cfg.control_period,
            horizon=cfg.preview_horizon,
            jerk_weight=cfg.jerk_weight,
            zmp_weight=cfg.zmp_weight,
        )
        self.controller = NmpcController(cfg.params, cfg.nmpc)
        self.feet = {
            Side.LEFT: plan.start_stance.left.copy(),
            Side.RIGHT: plan.start_stance.right.copy(),
        }
        start = self.schedule.current.support_foot.copy()
        self.state = RobotState(com=start.copy(), com_vel=np.zeros(2))
        self.ref_state = np.zeros((3, 2))  # reference (com, vel, acc) rows
        self.ref_state[0] = start
        self.time = 0.0
        self.time_in_phase = 0.0
        self.phase_counter = 0
        self.warm: NmpcSolution | None = None
        self.monitor = FallMonitor(cfg.fall, cfg.control_period)
        # applied controls, zero-order-held across NMPC failures
        self.zmp_ctrl_start = np.zeros(2)
        self.zmp_ctrl_end = np.zeros(2)
        self.swing_target = self.schedule.current.landing_foot.copy()
        self.swing_traj: SwingTrajectory | None = None
        self._pending_boundary_zmp: Vec2 | None = None
        if self.schedule.current.phase_type is PhaseType.SSP:
            self._start_swing()

    # -- phase machine -----------------------------------------------------

    def phase_machine_step(self, log: SimLog):
        if self.time_in_phase < self.schedule.current_duration - 1e-9:
            return
        finished = self.schedule.current
        boundary_des = finished.zmp_end + self.zmp_ctrl_end
        if finished.phase_type is PhaseType.SSP:
            self._commit_landing(log)
        self.schedule.advance()
        self.phase_counter += 1
        self.time_in_phase = 0.0
        self.warm = shift_warm_start(self.warm)
        # hand the ZMP modulation across the boundary; the next solve
        # re-optimizes from this, which is what keeps the input continuous
        self.zmp_ctrl_start = self.zmp_ctrl_end.copy()
        self.zmp_ctrl_end = self.zmp_ctrl_start.copy()
        self._pending_boundary_zmp = boundary_des
        current = self.schedule.current
        if current.phase_type is PhaseType.SSP:
            self.swing_target = current.landing_foot.copy()
            self._start_swing()
        else:
            self.swing_traj = None
        log.add_event(self.time, "transition",
                      phase_index=self.phase_counter,
                      phase_type=current.phase_type.value)

    def _commit_landing(self, log: SimLog):
        finished = self.schedule.current
        landed = self.swing_target.copy()
        delta = landed - finished.landing_foot
        finished.landing_foot = landed
        self.feet[finished.swing_side] = landed.copy()
        idx = self.schedule.current_index
        dsp = self.schedule.phase(1)
        dsp.landing_foot = landed.copy()
        dsp.zmp_end = landed.copy()
        if float(np.linalg.norm(delta)) > 1e-12:
            # remaining plan rides along with the landing deviation
            for phase in self.schedule.phases[idx + 2:]:
                phase.support_foot = phase.support_foot + delta
                phase.landing_foot = phase.landing_foot + delta
                phase.zmp_start = phase.zmp_start + delta
                phase.zmp_end = phase.zmp_end + delta
            log.add_event(self.time, "footstep_update",
                          landed_x=float(landed[0]), landed_y=float(landed[1]),
                          delta_x=float(delta[0]), delta_y=float(delta[1]))

    def _start_swing(self):
        phase = self.schedule.current
        planted = self.feet[phase.swing_side].copy()
        duration = max(self.schedule.current_duration - self.time_in_phase, 0.02)
        self.swing_traj = swing_quintic(
            planted, np.zeros(2), np.zeros(2), self.swing_target,
            self.time, self.time + duration, self.cfg.swing_height,
        )

    # -- control -------------------------------------------------------------

    def control_tick(self, log: SimLog):
        cfg = self.cfg
        self.phase_machine_step(log)
        phase = self.schedule.current
        robot = RobotState(self.state.com, self.state.com_vel, self.time_in_phase)
        refs = preview_com(
            self.schedule,
            RobotState(self.ref_state[0], self.ref_state[1], self.time_in_phase),
            self.preview,
            initial_acc=self.ref_state[2],
        )
        dcm = dcm_of(robot, self.params)
        dcm_ref = refs.dcm[0]
        dcm_err = dcm - dcm_ref

        t_solve = _time.perf_counter()
        contexts = build_contexts(self.schedule, refs, self.time_in_phase,
                                  self.params, cfg.nmpc.n_phases)
        solution = self.controller.solve_from_error(dcm_err, contexts, self.warm)
        solve_time = _time.perf_counter() - t_solve

        if solution.qp_status is QpStatus.OPTIMAL:
            self.warm = solution
            block = solution.blocks[0]
            self.zmp_ctrl_start = block.zmp_start_ctrl.copy()
            self.zmp_ctrl_end = block.zmp_end_ctrl.copy()
            self.schedule.current_duration = contexts[0].duration + block.duration_delta
            if phase.phase_type is PhaseType.SSP:
                target = phase.landing_foot + block.step_ctrl
                self._retarget_swing(target)
            diag = solution_diagnostics(contexts, solution, cfg.nmpc)
        else:
            # hold previous controls for one tick
            log.add_event(self.time, "nmpc_failure", status=solution.qp_status.value)
            diag = {"continuity_gap": np.nan, "dsp_step_norm": np.nan,
                    "bound_violation": np.nan, "phase1_lead": np.nan}

        t_new = self.schedule.current_duration
        frac = min(self.time_in_phase / t_new, 1.0)
        zmp_ref_now = (1.0 - frac) * phase.zmp_start + frac * phase.zmp_end
        zmp_ctrl_now = (1.0 - frac) * self.zmp_ctrl_start + frac * self.zmp_ctrl_end
        zmp_des_now = zmp_ref_now + zmp_ctrl_now

        if self._pending_boundary_zmp is not None:
            gap = float(np.max(np.abs(
                (phase.zmp_start + self.zmp_ctrl_start) - self._pending_boundary_zmp)))
            log.add_event(self.time, "zmp_boundary", gap=gap)
            self._pending_boundary_zmp = None

        disturbed = any(d.active(self.time) for d in cfg.disturbances)
        log.add_row({
            "time": self.time,
            "com_x": self.state.com[0], "com_y": self.state.com[1],
            "com_vel_x": self.state.com_vel[0], "com_vel_y": self.state.com_vel[1],
            "dcm_x": dcm[0], "dcm_y": dcm[1],
            "dcm_ref_x": dcm_ref[0], "dcm_ref_y": dcm_ref[1],
            "dcm_err_x": dcm_err[0], "dcm_err_y": dcm_err[1],
            "zmp_ref_x": zmp_ref_now[0], "zmp_ref_y": zmp_ref_now[1],
            "zmp_ctrl_x": zmp_ctrl_now[0], "zmp_ctrl_y": zmp_ctrl_now[1],
            "zmp_des_x": zmp_des_now[0], "zmp_des_y": zmp_des_now[1],
            "phase_index": self.phase_counter,
            "phase_type": 0.0 if phase.phase_type is PhaseType.SSP else 1.0,
            "time_in_phase": self.time_in_phase,
            "t_new": t_new,
            "swing_target_x": self.swing_target[0],
            "swing_target_y": self.swing_target[1],
            "disturbance_active": float(disturbed),
            "sqp_iterations": solution.iterations,
            "sqp_step_norm": solution.step_norm,
            "sqp_converged": float(solution.converged),
            "solve_time": solve_time,
            **diag,
        })

        # roll the reference pattern state forward by one sample
        jerk0 = self._reference_jerk(refs)
        self.ref_state = self.preview.a_mat @ self.ref_state \
            + np.outer(self.preview.b_mat, jerk0)

        self._physics_window()

        fell = self.monitor.update(dcm_err, self.state.com, list(self.feet.values()))
        if fell and log.fall_time is None:
            log.fall_time = self.time
            log.add_event(self.time, "fall",
                          dcm_err=float(np.linalg.norm(dcm_err)))

    def _reference_jerk(self, refs) -> Vec2:
        # first-sample jerk recovered from the preview acceleration series
        return (refs.com_acc[1] - refs.com_acc[0]) / self.preview.dt

    def _retarget_swing(self, target: Vec2):
        if self.swing_traj is None:
            return
        remaining = self.schedule.current_duration - self.time_in_phase
        if remaining < 0.015:
            self.swing_target = target.copy()
            return
        pos = self.swing_traj.position(self.time)
        vel = self.swing_traj.velocity(self.time)
        acc = self.swing_traj.acceleration(self.time)
        self.swing_target = target.copy()
        self.swing_traj = swing_quintic(
            pos, vel, acc, target, self.time, self.time + remaining,
            self.cfg.swing_height,
        )

    def _physics_window(self):
        cfg = self.cfg
        phase = self.schedule.current
        t_new = self.schedule.current_duration
        for _ in range(cfg.substeps):
            frac = min(self.time_in_phase / t_new, 1.0)
            zmp_des = (1.0 - frac) * (phase.zmp_start + self.zmp_ctrl_start) \
                + frac * (phase.zmp_end + self.zmp_ctrl_end)
            force = np.zeros(2)
            for d in cfg.disturbances:
                if d.active(self.time):
                    force = force + d.force
            self.state = physics_step(self.state, zmp_des, force, self.params,
                                      cfg.physics_dt)
            self.time += cfg.physics_dt
            self.time_in_phase += cfg.physics_dt

    # -- driver ---------------------------------------------------------------

    def run(self) -> SimLog:
        cfg = self.cfg
        n_ticks = int(round(cfg.duration / cfg.control_period))
        log = SimLog(n_ticks)
        for _ in range(n_ticks):
            self.control_tick(log)
            if log.fell and cfg.stop_on_fall:
                break
        return log


def run_scenario(cfg: SimConfig) -> SimLog:
    """Run one deterministic closed-loop scenario."""
    return World(cfg).run()
