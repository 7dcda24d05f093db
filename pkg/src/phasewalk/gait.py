"""Footstep plan, support-phase schedule, and reference trajectories.

The nominal gait is an alternating sequence of single support (ZMP
parked on the support foot center) and double support (ZMP sliding
linearly to the next support foot center). A receding-horizon preview
generator turns the piecewise-linear reference ZMP into reference CoM /
DCM trajectories by minimizing CoM jerk plus ZMP tracking error over a
triple-integrator model, the classic walking pattern generator recipe.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .lipm import LipmParams, RobotState, Vec2, ZmpSegment, as_vec2
from .qp import QpProblem, QpSolver, QpStatus


class PhaseType(enum.Enum):
    SSP = "ssp"
    DSP = "dsp"


class Side(enum.Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass
class PhaseSpec:
    """One support phase with its reference ZMP endpoints.

    SSP: zmp_start == zmp_end == support foot center, landing_foot is the
    swing target. DSP: zmp slides support -> landing, both foot anchors
    inherited from the preceding SSP and never modified afterwards.
    """

    phase_type: PhaseType
    nominal_duration: float
    support_foot: Vec2
    landing_foot: Vec2
    zmp_start: Vec2
    zmp_end: Vec2
    swing_side: Side | None = None

    def __post_init__(self):
        self.support_foot = as_vec2(self.support_foot)
        self.landing_foot = as_vec2(self.landing_foot)
        self.zmp_start = as_vec2(self.zmp_start)
        self.zmp_end = as_vec2(self.zmp_end)
        if self.nominal_duration <= 0.0:
            raise ValueError(f"phase duration must be positive, got {self.nominal_duration}")
        if self.phase_type is PhaseType.SSP:
            if not np.array_equal(self.zmp_start, self.zmp_end):
                raise ValueError("SSP reference ZMP must be constant")
            if self.swing_side is None:
                raise ValueError("SSP needs a swing side")

    def ref_segment(self, duration: float | None = None) -> ZmpSegment:
        return ZmpSegment(self.zmp_start, self.zmp_end, duration or self.nominal_duration)


@dataclass
class StanceFeet:
    left: Vec2
    right: Vec2

    def __post_init__(self):
        self.left = as_vec2(self.left)
        self.right = as_vec2(self.right)

    def foot(self, side: Side) -> Vec2:
        return self.left if side is Side.LEFT else self.right


@dataclass
class WalkCommand:
    """High-level stepping request handed to the footstep planner."""

    step_length: float = 0.0
    step_width: float = 0.2
    n_steps: int = 4
    start_stance: StanceFeet | None = None
    first_swing: Side = Side.RIGHT

    def __post_init__(self):
        if self.start_stance is None:
            w = 0.5 * self.step_width
            self.start_stance = StanceFeet(left=np.array([0.0, w]), right=np.array([0.0, -w]))


@dataclass
class FootstepPlan:
    """Planner output: landing positions with their swing sides."""

    landings: list[Vec2]
    swing_sides: list[Side]
    start_stance: StanceFeet


def plan_footsteps(command: WalkCommand) -> FootstepPlan:
    """Alternating landings advancing step_length in x per step.

    Landing k (1-based) sits at x = k * step_length on the swinging
    foot's own lateral line; step_length = 0 gives in-place stepping.
    """
    if command.step_width <= 0.0:
        raise ValueError(f"step_width must be positive, got {command.step_width}")
    if command.n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {command.n_steps}")
    stance = command.start_stance
    landings, sides = [], []
    side = command.first_swing
    for k in range(1, command.n_steps + 1):
        y = stance.foot(side)[1]
        landings.append(np.array([k * command.step_length, y]))
        sides.append(side)
        side = Side.LEFT if side is Side.RIGHT else Side.RIGHT
    return FootstepPlan(landings=landings, swing_sides=sides, start_stance=stance)


class GaitSchedule:
    """Ordered SSP/DSP phases with a cursor and a committed live duration.

    The phase list is extended on demand with in-place step cycles so any
    preview window is always well defined. current_duration is the duration
    the active phase is currently committed to run for; it starts at the
    nominal value and is overwritten by the controller every tick.
    """

    def __init__(self, phases: list[PhaseSpec], t_ssp: float, t_dsp: float):
        if not phases:
            raise ValueError("schedule needs at least one phase")
        self.phases = phases
        self.t_ssp = t_ssp
        self.t_dsp = t_dsp
        self.current_index = 0
        self.current_duration = phases[0].nominal_duration

    @property
    def current(self) -> PhaseSpec:
        return self.phases[self.current_index]

    def phase(self, offset: int) -> PhaseSpec:
        """Phase at current_index + offset, padding the tail as needed."""
        while self.current_index + offset >= len(self.phases):
            self._append_pad_cycle()
        return self.phases[self.current_index + offset]

    def advance(self):
        self.phase(1)
        self.current_index += 1
        self.current_duration = self.current.nominal_duration

    def final_stance(self) -> tuple[Vec2, Vec2, Side]:
        """Feet after the last scheduled phase plus the next swing side."""
        last_ssp = None
        for ph in reversed(self.phases):
            if ph.phase_type is PhaseType.SSP:
                last_ssp = ph
                break
        if last_ssp is None:
            raise ValueError("schedule has no SSP phase")
        support, landed = last_ssp.support_foot, last_ssp.landing_foot
        next_swing = Side.LEFT if last_ssp.swing_side is Side.RIGHT else Side.RIGHT
        return support, landed, next_swing

    def _append_pad_cycle(self):
        support, landed, swing = self.final_stance()
        # after landing, the landed foot supports and the old support swings
        # in place
        target = support.copy()
        self.phases.append(
            PhaseSpec(
                phase_type=PhaseType.SSP,
                nominal_duration=self.t_ssp,
                support_foot=landed,
                landing_foot=target,
                zmp_start=landed,
                zmp_end=landed,
                swing_side=swing,
            )
        )
        self.phases.append(
            PhaseSpec(
                phase_type=PhaseType.DSP,
                nominal_duration=self.t_dsp,
                support_foot=landed,
                landing_foot=target,
                zmp_start=landed,
                zmp_end=target,
            )
        )


def build_schedule(plan: FootstepPlan, t_ssp: float = 0.6, t_dsp: float = 0.3) -> GaitSchedule:
    """SSP/DSP pair per planned landing, reference ZMP per phase type."""
    if t_ssp <= 0.0 or t_dsp <= 0.0:
        raise ValueError("phase durations must be positive")
    if not plan.landings:
        raise ValueError("empty footstep list")
    phases: list[PhaseSpec] = []
    feet = {
        Side.LEFT: plan.start_stance.left.copy(),
        Side.RIGHT: plan.start_stance.right.copy(),
    }
    for landing, swing in zip(plan.landings, plan.swing_sides):
        support_side = Side.LEFT if swing is Side.RIGHT else Side.RIGHT
        support = feet[support_side].copy()
        landing = as_vec2(landing)
        phases.append(
            PhaseSpec(
                phase_type=PhaseType.SSP,
                nominal_duration=t_ssp,
                support_foot=support,
                landing_foot=landing,
                zmp_start=support,
                zmp_end=support,
                swing_side=swing,
            )
        )
        phases.append(
            PhaseSpec(
                phase_type=PhaseType.DSP,
                nominal_duration=t_dsp,
                support_foot=support,
                landing_foot=landing,
                zmp_start=support,
                zmp_end=landing,
            )
        )
        feet[swing] = landing.copy()
    return GaitSchedule(phases, t_ssp, t_dsp)


@dataclass
class ReferenceTrajectory:
    """Sampled references starting at the current instant (index 0).

    Sample k sits at now + k * sample_period. phase_ends[i] is the sample
    index where previewed phase i (0-based from the schedule cursor) hands
    over to the next one. dcm_offset_refs holds the reference DCM offset at
    each covered phase end.
    """

    sample_period: float
    zmp: np.ndarray
    com: np.ndarray
    com_vel: np.ndarray
    com_acc: np.ndarray
    dcm: np.ndarray
    phase_ends: np.ndarray
    dcm_offset_refs: np.ndarray

    def __len__(self):
        return self.com.shape[0]


class PreviewGenerator:
    """Jerk-minimizing CoM preview over a triple integrator with ZMP output.

    Condensed formulation: stacking the ZMP predictions as a linear map of
    the jerk sequence gives an unconstrained strictly convex QP per axis,
    solved through the shared QP engine. Prediction matrices are cached per
    horizon length.
    """

    def __init__(
        self,
        params: LipmParams,
        sample_period: float = 0.01,
        horizon: float = 1.6,
        jerk_weight: float = 1e-6,
        zmp_weight: float = 1.0,
    ):
        if jerk_weight <= 0.0 or zmp_weight <= 0.0:
            raise ValueError("preview weights must be positive")
        self.params = params
        self.dt = sample_period
        self.horizon_samples = max(2, int(round(horizon / sample_period)))
        self.jerk_weight = jerk_weight
        self.zmp_weight = zmp_weight
        dt = sample_period
        self.a_mat = np.array([[1.0, dt, dt * dt / 2.0], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
        self.b_mat = np.array([dt**3 / 6.0, dt * dt / 2.0, dt])
        self.c_zmp = np.array([1.0, 0.0, -params.pendulum_height / params.gravity])
        self._cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._solver = QpSolver()

    def _matrices(self, n: int):
        cached = self._cache.get(n)
        if cached is not None:
            return cached
        px = np.zeros((n, 3))
        pu = np.zeros((n, n))
        a_pow = np.eye(3)
        impulse = []  # C A^k B for k = 0..n-1
        for i in range(n):
            a_pow = self.a_mat @ a_pow
            px[i] = self.c_zmp @ a_pow
            impulse.append(self.c_zmp @ np.linalg.matrix_power(self.a_mat, i) @ self.b_mat)
        for i in range(n):
            for j in range(i + 1):
                pu[i, j] = impulse[i - j]
        hessian = self.jerk_weight * np.eye(n) + self.zmp_weight * (pu.T @ pu)
        self._cache[n] = (px, pu, hessian)
        return self._cache[n]

    def solve(self, x0: np.ndarray, zmp_ref: np.ndarray):
        """Jerk sequences (n, 2) for initial per-axis states x0 (3, 2)."""
        n = zmp_ref.shape[0]
        px, pu, hessian = self._matrices(n)
        jerks = np.zeros((n, 2))
        for axis in range(2):
            grad = self.zmp_weight * (pu.T @ (px @ x0[:, axis] - zmp_ref[:, axis]))
            sol = self._solver.solve(QpProblem(hessian=hessian, gradient=grad))
            if sol.status != QpStatus.OPTIMAL:
                raise RuntimeError(f"preview QP failed with status {sol.status}")
            jerks[:, axis] = sol.primal
        return jerks

    def rollout(self, x0: np.ndarray, jerks: np.ndarray):
        """Integrate the triple integrator; returns states (n+1, 3, 2)."""
        n = jerks.shape[0]
        states = np.empty((n + 1, 3, 2))
        states[0] = x0
        for k in range(n):
            states[k + 1] = self.a_mat @ states[k] + np.outer(self.b_mat, jerks[k])
        return states


def reference_zmp_series(
    schedule: GaitSchedule, time_in_phase: float, n: int, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Reference ZMP at sample times now + k*dt for k = 0..n, by walking the
    schedule from the live phase (at its committed duration) through the
    nominal tail, holding the final endpoint beyond the schedule.

    Also returns the sample index of each phase handover encountered.
    """
    zmp = np.empty((n + 1, 2))
    ends = []
    offset = 0
    seg = schedule.current
    seg_duration = schedule.current_duration
    seg_start = -time_in_phase  # segment start relative to "now"
    for k in range(n + 1):
        tau = k * dt
        while tau - seg_start >= seg_duration - 1e-12:
            seg_start += seg_duration
            offset += 1
            ends.append(k)
            seg = schedule.phase(offset)
            seg_duration = seg.nominal_duration
        frac = (tau - seg_start) / seg_duration
        zmp[k] = (1.0 - frac) * seg.zmp_start + frac * seg.zmp_end
    return zmp, np.asarray(ends, dtype=int)


def preview_com(
    schedule: GaitSchedule,
    initial: RobotState,
    generator: PreviewGenerator,
    initial_acc: Vec2 | None = None,
    horizon_samples: int | None = None,
) -> ReferenceTrajectory:
    """Reference CoM/DCM window from the given state along the schedule.

    The initial acceleration closes the triple-integrator state; when not
    supplied it is taken from the pendulum law at the current reference ZMP.
    """
    n = horizon_samples or generator.horizon_samples
    params = generator.params
    zmp_ref, ends = reference_zmp_series(schedule, initial.time_in_phase, n, generator.dt)
    if initial_acc is None:
        initial_acc = (params.gravity / params.pendulum_height) * (initial.com - zmp_ref[0])
    x0 = np.stack([initial.com, initial.com_vel, as_vec2(initial_acc)])
    jerks = generator.solve(x0, zmp_ref[1:])
    states = generator.rollout(x0, jerks)
    com = states[:, 0, :]
    com_vel = states[:, 1, :]
    com_acc = states[:, 2, :]
    dcm = com + params.time_constant * com_vel
    traj = ReferenceTrajectory(
        sample_period=generator.dt,
        zmp=zmp_ref,
        com=com,
        com_vel=com_vel,
        com_acc=com_acc,
        dcm=dcm,
        phase_ends=ends,
        dcm_offset_refs=np.zeros((0, 2)),
    )
    traj.dcm_offset_refs = reference_dcm_offset(schedule, traj)
    return traj


def reference_dcm_offset(schedule: GaitSchedule, traj: ReferenceTrajectory) -> np.ndarray:
    """Reference DCM offset (dcm at phase end minus landing anchor) per
    previewed phase whose end falls inside the trajectory window."""
    offsets = []
    for i, end_idx in enumerate(traj.phase_ends):
        phase = schedule.phase(i)
        offsets.append(traj.dcm[end_idx] - phase.landing_foot)
    return np.asarray(offsets).reshape(-1, 2)


def implied_zmp(traj: ReferenceTrajectory, params: LipmParams) -> np.ndarray:
    """ZMP implied by the CoM samples: z = c - (c_z - z_z)/g * c_ddot."""
    return traj.com - (params.pendulum_height / params.gravity) * traj.com_acc
