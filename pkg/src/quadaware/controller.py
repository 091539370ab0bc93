"""Geometric SE(3) tracking controller with optional disturbance compensation.

The nominal law is the Lee-style construction: a desired force vector sets
the thrust and the desired body z-axis, and a PD law on SO(3) with
gyroscopic and feedforward terms sets the torque.  A learned disturbance
estimate ``fhat = [f_trans, f_rot]`` can be compensated either

* ``"force-aug"``: ``f_trans`` is added to the desired force, so the
  attitude command is re-oriented to cancel it in all three axes, or
* ``"kdyn"``: only the thrust-axis component is cancelled through
  :func:`kdyn_map`.

Both modes subtract ``f_rot`` from the torque.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import sqrt

import numpy as np

from .dynamics import ControlInput, State, VehicleParams, clamp_input
from .se3 import E3, attitude_error, cross, hat, quat_to_matrix

COMPENSATION_MODES = ("force-aug", "kdyn")
SINGULAR_FORCE = 1e-6
JACOBIAN_STEP = 1e-6


def _diag3(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return np.full(3, float(v))
    if v.shape == (3, 3):
        return np.diag(v).copy()
    return v.reshape(3).copy()


@dataclass
class Gains:
    """Diagonal feedback gains plus the translational / rotational scale knobs."""

    kp: np.ndarray = field(default_factory=lambda: np.full(3, 6.0))
    kv: np.ndarray = field(default_factory=lambda: np.full(3, 4.0))
    kR: np.ndarray = field(default_factory=lambda: np.full(3, 6.5))
    kw: np.ndarray = field(default_factory=lambda: np.full(3, 0.55))
    trans_scale: float = 1.0
    rot_scale: float = 1.0

    def __post_init__(self):
        self.kp, self.kv = _diag3(self.kp), _diag3(self.kv)
        self.kR, self.kw = _diag3(self.kR), _diag3(self.kw)
        if self.trans_scale < 0 or self.rot_scale < 0:
            raise ValueError("gain scales must be non-negative")
        for v in (self.kp, self.kv, self.kR, self.kw):
            if np.any(v < 0):
                raise ValueError("gain diagonals must be non-negative")

    @property
    def Kp(self) -> np.ndarray:
        return self.trans_scale * self.kp

    @property
    def Kv(self) -> np.ndarray:
        return self.trans_scale * self.kv

    @property
    def KR(self) -> np.ndarray:
        return self.rot_scale * self.kR

    @property
    def Kw(self) -> np.ndarray:
        return self.rot_scale * self.kw

    def H(self) -> np.ndarray:
        """Block-diagonal 12x12 gain matrix."""
        return np.diag(np.concatenate([self.Kp, self.Kv, self.KR, self.Kw]))

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.H()))

    def scaled(self, alpha: float) -> Gains:
        """Every gain entry multiplied by ``alpha``."""
        return replace(self, kp=alpha * self.kp, kv=alpha * self.kv,
                       kR=alpha * self.kR, kw=alpha * self.kw)

    def with_scales(self, trans_scale: float | None = None, rot_scale: float | None = None) -> Gains:
        return replace(self,
                       trans_scale=self.trans_scale if trans_scale is None else trans_scale,
                       rot_scale=self.rot_scale if rot_scale is None else rot_scale)


@dataclass
class ReferencePoint:
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    yaw: float = 0.0
    yaw_rate: float = 0.0
    R_d: np.ndarray = field(default_factory=lambda: np.eye(3))
    w_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dw_d: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class ControlOutput:
    u: ControlInput
    u_raw: ControlInput
    clamped: bool
    R_d: np.ndarray
    error: np.ndarray
    singular: bool


def desired_attitude(F_d: np.ndarray, yaw: float) -> np.ndarray | None:
    """Rotation whose third column is ``F_d / |F_d|`` and whose heading follows ``yaw``.

    Returns ``None`` when the force is too small to define a direction.
    """
    F_d = np.asarray(F_d, dtype=float)
    n = sqrt(F_d @ F_d)
    if n < SINGULAR_FORCE:
        return None
    b3 = F_d / n
    b1c = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    b2 = cross(b3, b1c)
    n2 = sqrt(b2 @ b2)
    if n2 < 1e-9:
        # heading parallel to thrust axis; fall back to the inertial y-axis
        b2 = cross(b3, np.array([0.0, 1.0, 0.0]))
        n2 = sqrt(b2 @ b2)
    b2 = b2 / n2
    b1 = cross(b2, b3)
    return np.array([b1, b2, b3]).T


def feedback_input(R: np.ndarray, e: np.ndarray, gains: Gains) -> np.ndarray:
    """Feedback part ``h_fb(x) H e`` of the control, as ``[T, tau]``."""
    e = np.asarray(e, dtype=float)
    b3 = R[:, 2]
    T = float(b3 @ (gains.Kp * e[0:3] + gains.Kv * e[3:6]))
    tau = -gains.KR * e[6:9] - gains.Kw * e[9:12]
    return np.array([T, tau[0], tau[1], tau[2]])


def feedback_matrix(x: State, gains: Gains) -> np.ndarray:
    """Closed form of ``h_fb(x) H`` (4x12)."""
    b3 = quat_to_matrix(x.q)[:, 2]
    M = np.zeros((4, 12))
    M[0, 0:3] = b3 * gains.Kp
    M[0, 3:6] = b3 * gains.Kv
    M[1:4, 6:9] = -np.diag(gains.KR)
    M[1:4, 9:12] = -np.diag(gains.Kw)
    return M


def kdyn_map(x: State) -> np.ndarray:
    """4x6 map distributing ``fhat`` into ``[T, tau]``; the control applies ``-kdyn_map(x) @ fhat``.

    The thrust row is ``[-(R e3)^T, 0]`` so that subtracting it adds the
    thrust-axis component of ``f_trans`` to ``T``; the torque rows are
    ``[0, I]`` so ``f_rot`` is subtracted from the torque.
    """
    b3 = quat_to_matrix(x.q)[:, 2]
    K = np.zeros((4, 6))
    K[0, 0:3] = -b3
    K[1:4, 3:6] = np.eye(3)
    return K


def hfb_jacobian(x: State, gains: Gains, h: float = JACOBIAN_STEP) -> np.ndarray:
    """Central-difference Jacobian of :func:`feedback_input` in ``e`` at ``e = 0``."""
    R = quat_to_matrix(x.q)
    J = np.empty((4, 12))
    for j in range(12):
        d = np.zeros(12)
        d[j] = h
        J[:, j] = (feedback_input(R, d, gains) - feedback_input(R, -d, gains)) / (2.0 * h)
    if not np.isfinite(J).all():
        raise FloatingPointError("non-finite feedback Jacobian")
    return J


def aggressiveness(gains: Gains, x: State, rows=None, cols=None) -> float:
    """Feedback-induced aggressiveness: spectral norm of the feedback Jacobian.

    ``rows`` / ``cols`` restrict the Jacobian to a sub-block first (e.g. the
    thrust row against the vertical position/velocity columns).
    """
    J = hfb_jacobian(x, gains)
    if rows is not None:
        J = J[np.atleast_1d(rows), :]
    if cols is not None:
        J = J[:, np.atleast_1d(cols)]
    return float(np.linalg.norm(J, 2))


class GeometricController:
    """Stateful wrapper: remembers the last attitude command for the thrust singularity."""

    def __init__(self, gains: Gains, params: VehicleParams, compensation: str = "force-aug"):
        if compensation not in COMPENSATION_MODES:
            raise ValueError(f"unknown compensation mode {compensation!r}")
        self.gains = gains
        self.params = params
        self.compensation = compensation
        self._last_Rd = np.eye(3)
        self.singular_steps = 0
        # scaled gain diagonals and the hover force, fixed for the controller's lifetime
        self._K = (gains.Kp, gains.Kv, gains.KR, gains.Kw)
        self._hover_force = params.m * params.g * E3

    def reset(self, R_d: np.ndarray | None = None):
        self._last_Rd = np.eye(3) if R_d is None else np.array(R_d, dtype=float)
        self.singular_steps = 0

    def compute(self, x: State, ref: ReferencePoint, fhat=None) -> ControlOutput:
        prm = self.params
        Kp, Kv, KR, Kw = self._K
        R = quat_to_matrix(x.q)
        w = x.w
        e_p = x.p - ref.p
        e_v = x.v - ref.v

        F_d = self._hover_force - prm.m * np.asarray(ref.a) + Kp * e_p + Kv * e_v
        comp = np.zeros(4)
        if fhat is not None:
            fhat = np.asarray(fhat, dtype=float)
            if self.compensation == "force-aug":
                F_d = F_d + fhat[0:3]
                comp[1:4] = -fhat[3:6]
            else:
                comp = -kdyn_map(x) @ fhat

        R_d = desired_attitude(F_d, ref.yaw)
        singular = R_d is None
        if singular:
            R_d = self._last_Rd
            self.singular_steps += 1
        else:
            self._last_Rd = R_d

        e_R = attitude_error(R, R_d)
        RtRd = R.T @ R_d
        w_d_body = RtRd @ ref.w_d
        e_w = w - w_d_body
        e = np.concatenate((e_p, e_v, e_R, e_w))

        T = float(F_d @ R[:, 2]) + comp[0]
        Jw = prm.J @ w
        tau = (-KR * e_R - Kw * e_w + cross(w, Jw)
               - prm.J @ (cross(w, w_d_body) - RtRd @ ref.dw_d) + comp[1:4])
        u_raw = ControlInput(T, tau)
        u = clamp_input(u_raw, prm)
        clamped = u.T != T or bool(np.any(u.tau != tau))
        return ControlOutput(u, u_raw, clamped, R_d, e, singular)


def compute_control(x: State, ref: ReferencePoint, gains: Gains, params: VehicleParams,
                    fhat=None, mode: str = "force-aug") -> ControlInput:
    """One-shot (stateless) evaluation of the control law; returns the clamped input."""
    return GeometricController(gains, params, mode).compute(x, ref, fhat).u
