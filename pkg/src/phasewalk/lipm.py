"""Point-mass linear inverted pendulum model and its divergent component.

The robot is reduced to a point mass at constant height. Horizontal CoM
acceleration is linear in the CoM-ZMP offset,

    c_ddot = g / (c_z - z_z) * (c - z),

and the unstable mode of that system, the DCM

    xi = c + b * c_dot,        b = sqrt((c_z - z_z) / g),

obeys the first-order divergence law xi_dot = (xi - z) / b. With a ZMP
that is linear in time within a phase, the DCM flow has a closed form,
which is what the predictive controller is built on. Everything here is
2-D (x forward, y lateral) and pure: values in, values out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Positions in the horizontal plane are plain float64 arrays of shape (2,).
Vec2 = np.ndarray


def vec2(x: float, y: float) -> Vec2:
    """Build a finite 2-D point/vector."""
    v = np.array([x, y], dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite vector ({x}, {y})")
    return v


def as_vec2(v) -> Vec2:
    out = np.asarray(v, dtype=float).reshape(2)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"non-finite vector {v}")
    return out


@dataclass
class LipmParams:
    """Pendulum geometry and inertia.

    com_height and zmp_height are the vertical CoM and ZMP positions;
    only their difference enters the dynamics. time_constant is derived
    and recomputed on every access so the params may be mutated freely.
    """

    com_height: float = 0.75
    zmp_height: float = 0.0
    gravity: float = 9.81
    mass: float = 100.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (self.com_height > self.zmp_height >= 0.0):
            raise ValueError(
                f"need com_height > zmp_height >= 0, got {self.com_height}, {self.zmp_height}"
            )
        if self.gravity <= 0.0:
            raise ValueError(f"gravity must be positive, got {self.gravity}")
        if self.mass <= 0.0:
            raise ValueError(f"mass must be positive, got {self.mass}")

    @property
    def pendulum_height(self) -> float:
        return self.com_height - self.zmp_height

    @property
    def time_constant(self) -> float:
        """b = sqrt((c_z - z_z) / g), seconds."""
        return math.sqrt(self.pendulum_height / self.gravity)


@dataclass
class RobotState:
    """Horizontal CoM position/velocity plus elapsed time in the current phase."""

    com: Vec2
    com_vel: Vec2
    time_in_phase: float = 0.0

    def __post_init__(self):
        self.com = as_vec2(self.com)
        self.com_vel = as_vec2(self.com_vel)
        if self.time_in_phase < 0.0:
            raise ValueError(f"time_in_phase must be >= 0, got {self.time_in_phase}")


# Durations below this are rejected: the flow coefficients divide by the
# segment duration and become ill-conditioned.
MIN_SEGMENT_DURATION = 1e-4


@dataclass
class ZmpSegment:
    """ZMP linearly interpolated from start to end over duration seconds."""

    start: Vec2
    end: Vec2
    duration: float

    def __post_init__(self):
        self.start = as_vec2(self.start)
        self.end = as_vec2(self.end)
        if not self.duration > MIN_SEGMENT_DURATION:
            raise ValueError(
                f"segment duration must exceed {MIN_SEGMENT_DURATION}, got {self.duration}"
            )


@dataclass(frozen=True)
class DcmOffset:
    """Gap between a DCM endpoint and the step location it belongs to."""

    value: Vec2 = field(default_factory=lambda: np.zeros(2))


def lipm_accel(state: RobotState, zmp: Vec2, params: LipmParams) -> Vec2:
    """CoM acceleration for a given ZMP, m/s^2."""
    return (params.gravity / params.pendulum_height) * (state.com - zmp)


def dcm_of(state: RobotState, params: LipmParams) -> Vec2:
    """DCM xi = c + b * c_dot."""
    return state.com + params.time_constant * state.com_vel


def com_vel_from_dcm(com: Vec2, dcm: Vec2, params: LipmParams) -> Vec2:
    """Invert the DCM definition: c_dot = (xi - c) / b."""
    return (dcm - com) / params.time_constant


def zmp_interp(seg: ZmpSegment, t: float) -> Vec2:
    """ZMP at phase time t in [0, duration]."""
    if t < 0.0 or t > seg.duration:
        raise ValueError(f"t={t} outside [0, {seg.duration}]")
    s = t / seg.duration
    return (1.0 - s) * seg.start + s * seg.end


def z_alpha(seg: ZmpSegment, params: LipmParams) -> Vec2:
    """End-point flow coefficient: z_T + (b/T) (z_T - z_0)."""
    return seg.end + (params.time_constant / seg.duration) * (seg.end - seg.start)


def z_beta(seg: ZmpSegment, t: float, params: LipmParams) -> Vec2:
    """Start-point flow coefficient: z_0 + ((t+b)/T) (z_T - z_0).

    Equals the particular solution of the DCM flow at time t, so
    z_alpha(seg) == z_beta(seg, T).
    """
    return seg.start + ((t + params.time_constant) / seg.duration) * (seg.end - seg.start)


def dcm_flow(seg: ZmpSegment, xi_t: Vec2, t: float, s: float, params: LipmParams) -> Vec2:
    """DCM at time s given DCM xi_t at time t, under the segment's linear ZMP.

    xi(s) = Z_beta(T, s) + e^{(s-t)/b} (xi_t - Z_beta(T, t)). Times may sit
    anywhere in [0, T]; s < t runs the flow backwards.
    """
    b = params.time_constant
    return z_beta(seg, s, params) + math.exp((s - t) / b) * (xi_t - z_beta(seg, t, params))


def propagate_dcm(seg: ZmpSegment, xi_t: Vec2, t: float, params: LipmParams) -> Vec2:
    """Closed-form DCM at the end of the segment from its value at time t."""
    if t < 0.0 or t > seg.duration:
        raise ValueError(f"t={t} outside [0, {seg.duration}]")
    b = params.time_constant
    return z_alpha(seg, params) + math.exp((seg.duration - t) / b) * (
        xi_t - z_beta(seg, t, params)
    )


def dcm_offset(xi_end: Vec2, step_location: Vec2) -> DcmOffset:
    """Decompose a DCM endpoint into step location plus offset."""
    return DcmOffset(value=np.asarray(xi_end, dtype=float) - np.asarray(step_location, dtype=float))
