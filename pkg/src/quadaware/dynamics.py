"""Rigid-body quadrotor plant with injected disturbances.

The inertial frame has ``e3`` along gravity, so the thrust force is
``-T R e3`` and altitude above ground is ``-p[2]``.

Internally the integrator works on a flat 13-vector ``[p, v, q, w]``;
:class:`State` is the public value type.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import cos, sin, sqrt

import numpy as np

from .se3 import quat_normalize, quat_to_matrix


class DivergenceError(RuntimeError):
    """Raised when the integrated state stops being finite."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


@dataclass
class State:
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    w: np.ndarray

    @classmethod
    def hover(cls, p=(0.0, 0.0, 0.0)) -> State:
        return cls(np.array(p, dtype=float), np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_flat(cls, y: np.ndarray) -> State:
        y = np.asarray(y, dtype=float)
        return cls(y[0:3].copy(), y[3:6].copy(), y[6:10].copy(), y[10:13].copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.q, self.w])

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.q)


@dataclass
class ControlInput:
    T: float
    tau: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.array([self.T, self.tau[0], self.tau[1], self.tau[2]])


@dataclass
class VehicleParams:
    m: float = 1.0
    J: np.ndarray = field(default_factory=lambda: np.diag([0.016, 0.016, 0.03]))
    g: float = 9.81
    T_max: float | None = None  # defaults to 4 m g
    tau_max: float = 2.0

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=float)
        if self.J.shape == (3,):
            self.J = np.diag(self.J)
        if self.m <= 0 or self.g <= 0:
            raise ValueError("mass and gravity must be positive")
        if not np.allclose(self.J, self.J.T) or np.min(np.linalg.eigvalsh(self.J)) <= 0:
            raise ValueError("inertia must be symmetric positive definite")
        if self.T_max is None:
            self.T_max = 4.0 * self.m * self.g
        self.J_inv = np.linalg.inv(self.J)

    @property
    def hover_thrust(self) -> float:
        return self.m * self.g


@dataclass
class DisturbanceSpec:
    """Drag, lateral wind and persistent oscillations, all multiplied by ``scale``."""

    drag_lin: np.ndarray = field(default_factory=lambda: np.array([0.30, 0.30, 0.40]))
    drag_ang: np.ndarray = field(default_factory=lambda: np.array([0.02, 0.02, 0.03]))
    wind_amp: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.4, 0.0]))
    wind_freq: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 1.0]))
    vert_amp: float = 0.8
    vert_freq: float = 2.0
    yaw_amp: float = 0.05
    yaw_freq: float = 2.5
    scale: float = 1.0

    def __post_init__(self):
        for name in ("drag_lin", "drag_ang", "wind_amp", "wind_freq"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape == (3, 3):
                arr = np.diag(arr).copy()
            setattr(self, name, arr)
        if (np.any(self.wind_amp < 0) or np.any(self.drag_lin < 0) or np.any(self.drag_ang < 0)
                or self.vert_amp < 0 or self.yaw_amp < 0):
            raise ValueError("disturbance amplitudes must be non-negative")
        if np.any(self.wind_freq <= 0) or self.vert_freq <= 0 or self.yaw_freq <= 0:
            raise ValueError("disturbance frequencies must be positive")

    def with_scale(self, scale: float) -> DisturbanceSpec:
        return DisturbanceSpec(self.drag_lin, self.drag_ang, self.wind_amp, self.wind_freq,
                               self.vert_amp, self.vert_freq, self.yaw_amp, self.yaw_freq, scale)


def _disturbance_flat(v, w, t: float, spec: DisturbanceSpec) -> np.ndarray:
    s = float(spec.scale)
    if s == 0.0:
        return np.zeros(6)
    a0, a1, a2 = spec.wind_amp.tolist()
    o0, o1, o2 = spec.wind_freq.tolist()
    c0, c1, c2 = spec.drag_lin.tolist()
    d0, d1, d2 = spec.drag_ang.tolist()
    v0, v1, v2 = v.tolist()
    w0, w1, w2 = w.tolist()
    t = float(t)
    return np.array([
        s * (-c0 * v0 + a0 * sin(o0 * t)),
        s * (-c1 * v1 + a1 * cos(o1 * t)),
        s * (-c2 * v2 + a2 * sin(o2 * t) + spec.vert_amp * sin(spec.vert_freq * t)),
        -s * d0 * w0,
        -s * d1 * w1,
        s * (-d2 * w2 + spec.yaw_amp * sin(spec.yaw_freq * t)),
    ])


def true_disturbance(x: State, t: float, spec: DisturbanceSpec) -> np.ndarray:
    """Ground-truth generalized disturbance ``[f_trans (N), f_rot (N m)]``."""
    return _disturbance_flat(np.asarray(x.v, dtype=float), np.asarray(x.w, dtype=float), t, spec)


def _deriv_flat(y: np.ndarray, T: float, tau, f, params: VehicleParams) -> np.ndarray:
    # python floats: numpy scalar arithmetic dominates the step cost otherwise
    _, _, _, vx, vy, vz, qw, qx, qy, qz, wx, wy, wz = y.tolist()
    t0, t1, t2 = (float(tau[0]), float(tau[1]), float(tau[2]))
    f0, f1, f2, f3, f4, f5 = f.tolist() if isinstance(f, np.ndarray) else map(float, f)
    T = float(T)
    m = params.m
    # third column of R(q)
    b3x = 2.0 * (qx * qz + qw * qy)
    b3y = 2.0 * (qy * qz - qw * qx)
    b3z = 1.0 - 2.0 * (qx * qx + qy * qy)
    J = params.J.tolist()
    Jw0 = J[0][0] * wx + J[0][1] * wy + J[0][2] * wz
    Jw1 = J[1][0] * wx + J[1][1] * wy + J[1][2] * wz
    Jw2 = J[2][0] * wx + J[2][1] * wy + J[2][2] * wz
    r0 = t0 + f3 - (wy * Jw2 - wz * Jw1)
    r1 = t1 + f4 - (wz * Jw0 - wx * Jw2)
    r2 = t2 + f5 - (wx * Jw1 - wy * Jw0)
    Ji = params.J_inv.tolist()
    return np.array([
        vx, vy, vz,
        (-T * b3x + f0) / m,
        (-T * b3y + f1) / m,
        params.g + (-T * b3z + f2) / m,
        0.5 * (-qx * wx - qy * wy - qz * wz),
        0.5 * (qw * wx + qy * wz - qz * wy),
        0.5 * (qw * wy - qx * wz + qz * wx),
        0.5 * (qw * wz + qx * wy - qy * wx),
        Ji[0][0] * r0 + Ji[0][1] * r1 + Ji[0][2] * r2,
        Ji[1][0] * r0 + Ji[1][1] * r1 + Ji[1][2] * r2,
        Ji[2][0] * r0 + Ji[2][1] * r1 + Ji[2][2] * r2,
    ])


def derivative(x: State, u: ControlInput, f, params: VehicleParams) -> np.ndarray:
    """Time derivative of ``[p, v, q, w]`` (13 entries; the quaternion part realizes ``R hat(w)``)."""
    return _deriv_flat(x.flat(), float(u.T), np.asarray(u.tau, float), np.asarray(f, float), params)


def rk4_flat(y: np.ndarray, T: float, tau: np.ndarray, t: float, dt: float,
             spec: DisturbanceSpec, params: VehicleParams) -> np.ndarray:
    """One classical RK4 step with the input held constant; renormalizes the quaternion."""
    h2 = 0.5 * dt
    k1 = _deriv_flat(y, T, tau, _disturbance_flat(y[3:6], y[10:13], t, spec), params)
    y2 = y + h2 * k1
    k2 = _deriv_flat(y2, T, tau, _disturbance_flat(y2[3:6], y2[10:13], t + h2, spec), params)
    y3 = y + h2 * k2
    k3 = _deriv_flat(y3, T, tau, _disturbance_flat(y3[3:6], y3[10:13], t + h2, spec), params)
    y4 = y + dt * k3
    k4 = _deriv_flat(y4, T, tau, _disturbance_flat(y4[3:6], y4[10:13], t + dt, spec), params)
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    q = out[6:10]
    n = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if not np.isfinite(out).all() or not n > 0.0:
        raise DivergenceError("non-finite state after integration step")
    out[6:10] = q / n
    return out


def step(x: State, u: ControlInput, t: float, dt: float, spec: DisturbanceSpec,
         params: VehicleParams) -> State:
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = rk4_flat(x.flat(), float(u.T), np.asarray(u.tau, float), t, dt, spec, params)
    return State.from_flat(y)


def clamp_input(u: ControlInput, params: VehicleParams) -> ControlInput:
    """Componentwise clamp to ``[0, T_max] x [-tau_max, tau_max]^3``."""
    T = min(max(float(u.T), 0.0), params.T_max)
    lim = params.tau_max
    tau = np.array([min(max(float(c), -lim), lim) for c in u.tau])
    return ControlInput(T, tau)


def normalize_state(x: State) -> State:
    return State(x.p, x.v, quat_normalize(x.q), x.w)
