"""Phase-based predictive balance controller.

Per previewed support phase the controller owns nine decision scalars:
ZMP modulation endpoints (4), step location adjustment (2), DCM offset
error (2), and a phase duration adjustment (1). The dynamics constraint
ties them together: starting from the measured DCM error, the DCM error
propagated in closed form over the adjusted duration, under reference
plus modulated ZMP and assuming the reference endpoint is invariant to
the re-timing, must land exactly on step adjustment plus offset error.
That constraint is nonlinear only through the duration adjustment, so a
small SQP with an exact quadratic cost converges in a handful of
iterations from a warm start.

Phase 1 is the live phase, evaluated at the current in-phase time; later
phases chain through their predecessor's endpoint error. Step adjustments
are forbidden in double support, the phase-type pattern being known, so
the conditional constraint set is compiled per phase at assembly time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .gait import GaitSchedule, PhaseType, ReferenceTrajectory, Side
from .lipm import LipmParams, RobotState, Vec2, dcm_of
from .qp import QpProblem, QpSolution, QpSolver, QpStatus

BLOCK_SIZE = 9
# scalar layout within a block
_Z0, _ZT, _F, _B, _DT = slice(0, 2), slice(2, 4), slice(4, 6), slice(6, 8), 8


@dataclass
class DecisionBlock:
    """Decision scalars of one previewed phase, serialized as
    [zmp_start_ctrl, zmp_end_ctrl, step_ctrl, dcm_offset_err, duration_delta]."""

    zmp_start_ctrl: Vec2
    zmp_end_ctrl: Vec2
    step_ctrl: Vec2
    dcm_offset_err: Vec2
    duration_delta: float

    @staticmethod
    def zeros() -> "DecisionBlock":
        return DecisionBlock(np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), 0.0)

    @staticmethod
    def from_array(v: np.ndarray) -> "DecisionBlock":
        v = np.asarray(v, dtype=float).ravel()
        return DecisionBlock(
            zmp_start_ctrl=v[_Z0].copy(),
            zmp_end_ctrl=v[_ZT].copy(),
            step_ctrl=v[_F].copy(),
            dcm_offset_err=v[_B].copy(),
            duration_delta=float(v[_DT]),
        )

    def to_array(self) -> np.ndarray:
        out = np.empty(BLOCK_SIZE)
        out[_Z0] = self.zmp_start_ctrl
        out[_ZT] = self.zmp_end_ctrl
        out[_F] = self.step_ctrl
        out[_B] = self.dcm_offset_err
        out[_DT] = self.duration_delta
        return out


@dataclass
class NmpcConfig:
    """Weights, bounds, and solver limits.

    Bounds on the duration adjustment are anchored to the nominal phase
    duration; the live phase additionally must outlast the elapsed time by
    min_phase_lead, and a double support can never shrink below
    dsp_min_duration. The *_enabled switches clamp whole strategy groups
    for ablation runs.
    """

    n_phases: int = 3
    weight_zmp: float = 1.0
    weight_step: float = 0.01
    weight_offset: float = 500.0
    weight_timing: float = 100.0
    zmp_bound_x: float = 0.07
    zmp_bound_y: float = 0.07
    step_bound_forward: float = 0.30
    step_bound_backward: float = 0.15
    step_bound_lateral: float = 0.30
    min_lateral_clearance: float = 0.16
    ssp_delta_min: float = -0.30
    ssp_delta_max: float = 0.20
    dsp_delta_max: float = 0.20
    dsp_min_duration: float = 0.10
    min_phase_lead: float = 0.02
    max_sqp_iters: int = 20
    sqp_tolerance: float = 1e-6
    residual_early_exit: float = 1e-10
    ssp_timing_enabled: bool = True
    dsp_timing_enabled: bool = True
    step_adjust_enabled: bool = True

    def __post_init__(self):
        if self.n_phases < 1:
            raise ValueError("n_phases must be >= 1")
        for w in (self.weight_zmp, self.weight_step, self.weight_offset, self.weight_timing):
            if w <= 0.0:
                raise ValueError("weights must be positive")
        if self.ssp_delta_min > self.ssp_delta_max:
            raise ValueError("ssp duration bounds out of order")

    def block_weights(self) -> np.ndarray:
        w = np.empty(BLOCK_SIZE)
        w[_Z0] = self.weight_zmp
        w[_ZT] = self.weight_zmp
        w[_F] = self.weight_step
        w[_B] = self.weight_offset
        w[_DT] = self.weight_timing
        return w


def ablation_config(method: str, base: NmpcConfig | None = None) -> NmpcConfig:
    """Strategy subsets M1..M4: M1 full, M2 fixed DSP duration, M3 fixed
    SSP and DSP durations, M4 ZMP modulation only."""
    cfg = base or NmpcConfig()
    method = method.upper()
    if method == "M1":
        return replace(cfg, ssp_timing_enabled=True, dsp_timing_enabled=True,
                       step_adjust_enabled=True)
    if method == "M2":
        return replace(cfg, ssp_timing_enabled=True, dsp_timing_enabled=False,
                       step_adjust_enabled=True)
    if method == "M3":
        return replace(cfg, ssp_timing_enabled=False, dsp_timing_enabled=False,
                       step_adjust_enabled=True)
    if method == "M4":
        return replace(cfg, ssp_timing_enabled=False, dsp_timing_enabled=False,
                       step_adjust_enabled=False)
    raise ValueError(f"unknown ablation method {method!r}")


@dataclass
class PhasePreviewContext:
    """Everything the dynamics residual of one previewed phase needs.

    duration is what the current reference ZMP segment interpolates over
    (the committed live duration for phase 1, nominal otherwise); elapsed
    is the in-phase time, zero for future phases. dcm_ref is the reference
    DCM at the evaluation instant. Foot anchors ride along for the bound
    assembly.
    """

    phase_type: PhaseType
    duration: float
    nominal_duration: float
    zmp_start_ref: Vec2
    zmp_end_ref: Vec2
    dcm_ref: Vec2
    elapsed: float
    time_constant: float
    support_foot: Vec2
    landing_foot_ref: Vec2
    swing_side: Side | None = None


@dataclass
class NmpcSolution:
    blocks: list[DecisionBlock]
    iterations: int
    step_norm: float
    converged: bool
    constraint_residual: float
    qp_status: QpStatus = QpStatus.OPTIMAL

    def stacked(self) -> np.ndarray:
        return np.concatenate([b.to_array() for b in self.blocks])


def _alpha(z0, z_end, duration, b):
    return z_end + (b / duration) * (z_end - z0)


def _beta(z0, z_end, duration, t, b):
    return z0 + ((t + b) / duration) * (z_end - z0)


def residual(ctx: PhasePreviewContext, block: DecisionBlock, xi_err_in: Vec2) -> Vec2:
    """Dynamics defect of one phase: zero iff step adjustment plus offset
    error equals the DCM error propagated over the adjusted duration."""
    b = ctx.time_constant
    t = ctx.elapsed
    dur = ctx.duration
    dur_new = dur + block.duration_delta
    if dur_new <= t:
        raise ValueError(
            f"adjusted duration {dur_new:.4f} does not exceed elapsed time {t:.4f}"
        )
    e_new = math.exp((dur_new - t) / b)
    e_old = math.exp((dur - t) / b)
    z0c, ztc = block.zmp_start_ctrl, block.zmp_end_ctrl
    z0r, ztr = ctx.zmp_start_ref, ctx.zmp_end_ref
    return (
        block.step_ctrl
        + block.dcm_offset_err
        - _alpha(z0c, ztc, dur_new, b)
        - _alpha(z0r, ztr, dur_new, b)
        + _alpha(z0r, ztr, dur, b)
        - e_new * (xi_err_in - _beta(z0c, ztc, dur_new, t, b))
        - (e_new - e_old) * ctx.dcm_ref
        + e_new * _beta(z0r, ztr, dur_new, t, b)
        - e_old * _beta(z0r, ztr, dur, t, b)
    )


def residual_jacobian(
    ctx: PhasePreviewContext, block: DecisionBlock, xi_err_in: Vec2
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic partials of the residual.

    Returns (J, K): J is 2x9 over this block's scalars, K is 2x4 over the
    previous block's (step_ctrl, dcm_offset_err), through which the
    incoming endpoint error chains.
    """
    b = ctx.time_constant
    t = ctx.elapsed
    dur = ctx.duration
    dur_new = dur + block.duration_delta
    if dur_new <= t:
        raise ValueError(
            f"adjusted duration {dur_new:.4f} does not exceed elapsed time {t:.4f}"
        )
    e_new = math.exp((dur_new - t) / b)
    qc = block.zmp_end_ctrl - block.zmp_start_ctrl
    qr = ctx.zmp_end_ref - ctx.zmp_start_ref
    eye = np.eye(2)

    jac = np.zeros((2, BLOCK_SIZE))
    jac[:, _Z0] = (b / dur_new + e_new * (1.0 - (t + b) / dur_new)) * eye
    jac[:, _ZT] = (-(1.0 + b / dur_new) + e_new * (t + b) / dur_new) * eye
    jac[:, _F] = eye
    jac[:, _B] = eye
    dalpha = b / dur_new**2  # -d z_alpha / d duration, per endpoint gap unit
    dbeta = (t + b) / dur_new**2
    jac[:, _DT] = (
        dalpha * (qc + qr)
        - (e_new / b) * (xi_err_in - _beta(block.zmp_start_ctrl, block.zmp_end_ctrl,
                                           dur_new, t, b))
        - e_new * dbeta * qc
        - (e_new / b) * ctx.dcm_ref
        + (e_new / b) * _beta(ctx.zmp_start_ref, ctx.zmp_end_ref, dur_new, t, b)
        - e_new * dbeta * qr
    )
    coupling = np.hstack([-e_new * eye, -e_new * eye])
    return jac, coupling


def build_contexts(
    schedule: GaitSchedule,
    refs: ReferenceTrajectory,
    time_in_phase: float,
    params: LipmParams,
    n_phases: int,
) -> list[PhasePreviewContext]:
    """Preview contexts for the live phase plus the next n_phases-1."""
    b = params.time_constant
    contexts = []
    last_sample = len(refs) - 1
    for i in range(n_phases):
        phase = schedule.phase(i)
        if i == 0:
            duration = schedule.current_duration
            elapsed = time_in_phase
            dcm_ref = refs.dcm[0]
        else:
            duration = phase.nominal_duration
            elapsed = 0.0
            idx = int(refs.phase_ends[i - 1]) if i - 1 < len(refs.phase_ends) else last_sample
            dcm_ref = refs.dcm[min(idx, last_sample)]
        contexts.append(
            PhasePreviewContext(
                phase_type=phase.phase_type,
                duration=duration,
                nominal_duration=phase.nominal_duration,
                zmp_start_ref=phase.zmp_start,
                zmp_end_ref=phase.zmp_end,
                dcm_ref=np.asarray(dcm_ref, dtype=float).copy(),
                elapsed=elapsed,
                time_constant=b,
                support_foot=phase.support_foot,
                landing_foot_ref=phase.landing_foot,
                swing_side=phase.swing_side,
            )
        )
    return contexts


def _variable_bounds(contexts, cfg: NmpcConfig):
    """Per-scalar absolute bounds plus a pin mask for components that are
    locked to zero (double-support steps, disabled strategies)."""
    n = len(contexts)
    lo = np.full(n * BLOCK_SIZE, -np.inf)
    hi = np.full(n * BLOCK_SIZE, np.inf)
    pinned = np.zeros(n * BLOCK_SIZE, dtype=bool)
    for i, ctx in enumerate(contexts):
        base = i * BLOCK_SIZE
        lo[base + 0], hi[base + 0] = -cfg.zmp_bound_x, cfg.zmp_bound_x
        lo[base + 1], hi[base + 1] = -cfg.zmp_bound_y, cfg.zmp_bound_y
        lo[base + 2], hi[base + 2] = -cfg.zmp_bound_x, cfg.zmp_bound_x
        lo[base + 3], hi[base + 3] = -cfg.zmp_bound_y, cfg.zmp_bound_y

        is_ssp = ctx.phase_type is PhaseType.SSP
        if is_ssp and cfg.step_adjust_enabled:
            lo[base + 4], hi[base + 4] = -cfg.step_bound_backward, cfg.step_bound_forward
            gap = float(ctx.landing_foot_ref[1] - ctx.support_foot[1])
            if gap > 1e-9:
                lo[base + 5] = cfg.min_lateral_clearance - gap
                hi[base + 5] = cfg.step_bound_lateral
            elif gap < -1e-9:
                lo[base + 5] = -cfg.step_bound_lateral
                hi[base + 5] = -(cfg.min_lateral_clearance + gap)
            else:
                lo[base + 5], hi[base + 5] = -cfg.step_bound_lateral, cfg.step_bound_lateral
        else:
            pinned[base + 4] = pinned[base + 5] = True

        timing_free = cfg.ssp_timing_enabled if is_ssp else cfg.dsp_timing_enabled
        if timing_free:
            if is_ssp:
                lo_abs = ctx.nominal_duration + cfg.ssp_delta_min
                hi_abs = ctx.nominal_duration + cfg.ssp_delta_max
            else:
                lo_abs = cfg.dsp_min_duration
                hi_abs = ctx.nominal_duration + cfg.dsp_delta_max
            d_lo = lo_abs - ctx.duration
            d_hi = hi_abs - ctx.duration
            if i == 0:
                # the live phase may not end sooner than min_phase_lead from
                # now, but once inside that window the current commitment
                # stays allowed, otherwise the floor would chase the clock
                # and the phase could never end
                d_lo = max(d_lo, min(ctx.elapsed + cfg.min_phase_lead - ctx.duration, 0.0))
                d_hi = max(d_hi, d_lo)
            lo[base + 8], hi[base + 8] = d_lo, d_hi
        else:
            pinned[base + 8] = True
    return lo, hi, pinned


def assemble_subproblem(
    state_err: Vec2,
    contexts: list[PhasePreviewContext],
    v_current: np.ndarray,
    cfg: NmpcConfig,
) -> QpProblem:
    """Linearize the dynamics at v_current into a dense QP over the step.

    The cost is exactly quadratic, so its Hessian is constant and its
    gradient is evaluated at the iterate. Equalities: linearized dynamics
    with cross-block chaining, ZMP continuity between adjacent blocks, and
    pinned components. Inequalities: plain boxes on the free components.
    """
    n = len(contexts)
    dim = n * BLOCK_SIZE
    v_current = np.asarray(v_current, dtype=float).ravel()
    weights = np.tile(cfg.block_weights(), n)
    hessian = np.diag(2.0 * weights)
    gradient = 2.0 * weights * v_current

    blocks = [DecisionBlock.from_array(v_current[i * BLOCK_SIZE:(i + 1) * BLOCK_SIZE])
              for i in range(n)]
    lo, hi, pinned = _variable_bounds(contexts, cfg)

    eq_rows, eq_rhs = [], []
    xi_in = np.asarray(state_err, dtype=float)
    for i, ctx in enumerate(contexts):
        base = i * BLOCK_SIZE
        f_val = residual(ctx, blocks[i], xi_in)
        jac, coupling = residual_jacobian(ctx, blocks[i], xi_in)
        for r in range(2):
            row = np.zeros(dim)
            row[base:base + BLOCK_SIZE] = jac[r]
            if i > 0:
                prev = (i - 1) * BLOCK_SIZE
                row[prev + 4:prev + 8] = coupling[r]
            eq_rows.append(row)
            eq_rhs.append(-f_val[r])
        xi_in = blocks[i].step_ctrl + blocks[i].dcm_offset_err

    for i in range(n - 1):
        for axis in range(2):
            row = np.zeros(dim)
            row[i * BLOCK_SIZE + 2 + axis] = 1.0
            row[(i + 1) * BLOCK_SIZE + axis] = -1.0
            eq_rows.append(row)
            eq_rhs.append(-(v_current[i * BLOCK_SIZE + 2 + axis]
                            - v_current[(i + 1) * BLOCK_SIZE + axis]))

    for j in np.flatnonzero(pinned):
        row = np.zeros(dim)
        row[j] = 1.0
        eq_rows.append(row)
        eq_rhs.append(-v_current[j])

    free = ~pinned
    ineq = np.eye(dim)[free]
    return QpProblem(
        hessian=hessian,
        gradient=gradient,
        eq_matrix=np.asarray(eq_rows),
        eq_rhs=np.asarray(eq_rhs),
        ineq_matrix=ineq,
        lower=lo[free] - v_current[free],
        upper=hi[free] - v_current[free],
    )


def _residual_stack(contexts, v, state_err):
    """All phase residuals at iterate v, chained through block endpoints."""
    out = np.empty((len(contexts), 2))
    xi_in = state_err
    for i, ctx in enumerate(contexts):
        block = DecisionBlock.from_array(v[i * BLOCK_SIZE:(i + 1) * BLOCK_SIZE])
        out[i] = residual(ctx, block, xi_in)
        xi_in = block.step_ctrl + block.dcm_offset_err
    return out


def solution_diagnostics(contexts, solution: NmpcSolution, cfg: NmpcConfig):
    """Structural checks on a solution: continuity gap, DSP step lock,
    box violation, and live-phase duration lead over elapsed time."""
    v = solution.stacked()
    n = len(contexts)
    cont = 0.0
    for i in range(n - 1):
        gap = v[i * BLOCK_SIZE + 2:i * BLOCK_SIZE + 4] - v[(i + 1) * BLOCK_SIZE:(i + 1) * BLOCK_SIZE + 2]
        cont = max(cont, float(np.max(np.abs(gap))))
    dsp_step = 0.0
    for i, ctx in enumerate(contexts):
        if ctx.phase_type is PhaseType.DSP:
            dsp_step = max(dsp_step, float(np.max(np.abs(v[i * BLOCK_SIZE + 4:i * BLOCK_SIZE + 6]))))
    lo, hi, pinned = _variable_bounds(contexts, cfg)
    viol = 0.0
    for j in range(n * BLOCK_SIZE):
        if pinned[j]:
            viol = max(viol, abs(v[j]))
        else:
            viol = max(viol, v[j] - hi[j], lo[j] - v[j], 0.0)
    lead = (contexts[0].duration + solution.blocks[0].duration_delta) - contexts[0].elapsed
    return {
        "continuity_gap": cont,
        "dsp_step_norm": dsp_step,
        "bound_violation": float(viol),
        "phase1_lead": float(lead),
    }


def shift_warm_start(solution: NmpcSolution | None) -> NmpcSolution | None:
    """Receding-horizon shift at a phase transition: drop the finished
    block and duplicate the last one."""
    if solution is None:
        return None
    blocks = solution.blocks[1:] + [replace(solution.blocks[-1])]
    return replace(solution, blocks=blocks)


class NmpcController:
    """SQP driver; owns a QP engine and per-tick warm-start state."""

    def __init__(self, params: LipmParams, cfg: NmpcConfig | None = None):
        self.params = params
        self.cfg = cfg or NmpcConfig()
        self._qp = QpSolver(max_pivots=2000)
        self._qp_warm: QpSolution | None = None
        self._merit_penalty = 10.0

    def solve(
        self,
        state: RobotState,
        schedule: GaitSchedule,
        refs: ReferenceTrajectory,
        warm: NmpcSolution | None = None,
    ) -> NmpcSolution:
        cfg = self.cfg
        contexts = build_contexts(schedule, refs, state.time_in_phase, self.params,
                                  cfg.n_phases)
        state_err = dcm_of(state, self.params) - refs.dcm[0]
        return self.solve_from_error(state_err, contexts, warm)

    def solve_from_error(
        self,
        state_err: Vec2,
        contexts: list[PhasePreviewContext],
        warm: NmpcSolution | None = None,
    ) -> NmpcSolution:
        cfg = self.cfg
        n = len(contexts)
        lo, hi, pinned = _variable_bounds(contexts, cfg)
        if warm is not None and len(warm.blocks) == n:
            v = warm.stacked()
        else:
            v = np.zeros(n * BLOCK_SIZE)
        v[pinned] = 0.0
        v = np.clip(v, lo, hi)

        weights = np.tile(cfg.block_weights(), n)
        iterations = 0
        step_norm = np.inf
        converged = False
        status = QpStatus.OPTIMAL
        for k in range(cfg.max_sqp_iters):
            res = _residual_stack(contexts, v, state_err)
            res_norm = float(np.max(np.abs(res)))
            if k > 0 and res_norm <= cfg.residual_early_exit:
                converged = True
                break
            problem = assemble_subproblem(state_err, contexts, v, cfg)
            qsol = self._qp.solve(problem, warm_start=self._qp_warm)
            if qsol.status != QpStatus.OPTIMAL:
                status = qsol.status
                break
            self._qp_warm = qsol
            dv = qsol.primal
            step_norm = float(np.linalg.norm(dv))
            iterations = k + 1
            if step_norm < cfg.sqp_tolerance:
                v = v + dv
                converged = True
                break
            v = self._line_search(contexts, v, dv, state_err, weights,
                                  qsol.eq_multipliers)
        final_res = float(np.max(np.abs(_residual_stack(contexts, v, state_err))))
        blocks = [DecisionBlock.from_array(v[i * BLOCK_SIZE:(i + 1) * BLOCK_SIZE])
                  for i in range(n)]
        return NmpcSolution(
            blocks=blocks,
            iterations=iterations,
            step_norm=step_norm,
            converged=converged,
            constraint_residual=final_res,
            qp_status=status,
        )

    def _line_search(self, contexts, v, dv, state_err, weights, eq_mult):
        """Backtracking on the L1 merit (cost + penalty * |dynamics defect|)."""
        if eq_mult.size:
            self._merit_penalty = max(self._merit_penalty,
                                      1.5 * float(np.max(np.abs(eq_mult))))
        mu = self._merit_penalty

        def merit(x):
            res = _residual_stack(contexts, x, state_err)
            return float(x @ (weights * x)) + mu * float(np.sum(np.abs(res)))

        m0 = merit(v)
        res0 = float(np.sum(np.abs(_residual_stack(contexts, v, state_err))))
        descent = float(2.0 * (weights * v) @ dv) - mu * res0
        beta = 1.0
        best_v, best_m = None, np.inf
        while beta >= 1.0 / 64.0 - 1e-12:
            cand = v + beta * dv
            m1 = merit(cand)
            if m1 <= m0 + 1e-4 * beta * descent:
                return cand
            if m1 < best_m:
                best_v, best_m = cand, m1
            beta *= 0.5
        return best_v if best_v is not None else v + dv / 64.0
