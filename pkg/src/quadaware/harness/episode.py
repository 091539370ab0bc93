"""Closed-loop episode execution."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from ..controller import GeometricController, feedback_matrix
from ..dynamics import DivergenceError, State, _disturbance_flat, rk4_flat
from ..se3 import quat_to_matrix
from .config import GP_MODES, ScenarioConfig
from .reference import reference_table

log = logging.getLogger(__name__)


@dataclass
class EpisodeResult:
    """Per-sample logs; every array has ``steps + 1`` rows."""

    t: np.ndarray
    states: np.ndarray  # (n+1, 13) [p, v, q, w]
    inputs: np.ndarray  # (n+1, 4) clamped [T, tau]
    errors: np.ndarray  # (n+1, 12)
    fhat: np.ndarray  # (n+1, 6) compensation fed to the controller
    gate: np.ndarray  # NaN when no oracle is active
    rho: np.ndarray
    aggr: np.ndarray
    clamped: np.ndarray
    f_true: np.ndarray  # (n+1, 6)
    residual: np.ndarray  # norm of the lifted residual perturbation
    meta: dict = field(default_factory=dict)

    @property
    def ep_norm(self) -> np.ndarray:
        return np.linalg.norm(self.errors[:, 0:3], axis=1)

    @property
    def e_norm(self) -> np.ndarray:
        return np.linalg.norm(self.errors, axis=1)

    @property
    def final_error(self) -> float:
        return float(self.ep_norm[-1])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


class NullOracle:
    """No compensation."""

    active = False

    def reset(self):
        pass

    def predict(self, x: State, t: float, dt: float):
        return None, np.nan, np.nan

    def observe(self, k: int, t: float, y: np.ndarray, u: np.ndarray):
        pass


class ExactOracle(NullOracle):
    """Feeds the true disturbance (optionally scaled) back as the estimate; diagnostic use only."""

    active = True

    def __init__(self, spec, fraction: float = 1.0):
        self.spec = spec
        self.fraction = fraction

    def predict(self, x: State, t: float, dt: float):
        return self.fraction * _disturbance_flat(x.v, x.w, t, self.spec), 1.0, 0.0


def initial_state(cfg: ScenarioConfig) -> State:
    sim = cfg.simulation
    ref0 = reference_table(cfg.reference, cfg.vehicle.g, sim.dt, sim.steps)[0]
    offset = np.asarray(sim.position_offset, dtype=float)
    if sim.start == "reference":
        from ..se3 import matrix_to_quat
        return State(ref0.p + offset, ref0.v.copy(), matrix_to_quat(ref0.R_d), ref0.w_d.copy())
    return State.hover(ref0.p + offset)


def run_episode(cfg: ScenarioConfig, oracle=None, trans_scale: float | None = None) -> EpisodeResult:
    """Run one closed-loop episode.

    ``oracle`` supplies the disturbance estimate (``None`` runs the nominal
    controller).  ``trans_scale`` overrides the mode's gain scale.
    """
    sim = cfg.simulation
    params = cfg.vehicle
    spec = cfg.disturbance
    dt, n = sim.dt, sim.steps
    gains = cfg.controller.gains(trans_scale)
    ctrl = GeometricController(gains, params, cfg.controller.compensation)
    refs = reference_table(cfg.reference, params.g, dt, n)
    oracle = oracle if oracle is not None else NullOracle()
    oracle.reset()

    x0 = initial_state(cfg)
    ctrl.reset(refs[0].R_d)
    y = x0.flat()

    states = np.empty((n + 1, 13))
    inputs = np.empty((n + 1, 4))
    errors = np.empty((n + 1, 12))
    fhat_log = np.zeros((n + 1, 6))
    gate = np.full(n + 1, np.nan)
    rho = np.full(n + 1, np.nan)
    aggr = np.empty(n + 1)
    clamped = np.zeros(n + 1, dtype=bool)
    f_true = np.empty((n + 1, 6))
    residual = np.empty(n + 1)
    J_inv, m = params.J_inv, params.m
    kdyn = cfg.controller.compensation == "kdyn"

    s_aggr = float(np.linalg.norm(feedback_matrix(x0, gains), 2))
    for k in range(n + 1):
        t = k * dt
        x = State(y[0:3], y[3:6], y[6:10], y[10:13])
        fhat, g_k, r_k = oracle.predict(x, t, dt)
        out = ctrl.compute(x, refs[k], fhat)
        u = out.u
        states[k] = y
        inputs[k, 0] = u.T
        inputs[k, 1:4] = u.tau
        errors[k] = out.error
        clamped[k] = out.clamped
        aggr[k] = s_aggr
        f = _disturbance_flat(y[3:6], y[10:13], t, spec)
        f_true[k] = f
        d_t = f[0:3].copy()
        d_r = f[3:6].copy()
        if fhat is not None:
            fhat_log[k] = fhat
            gate[k], rho[k] = g_k, r_k
            if kdyn:
                b3 = quat_to_matrix(y[6:10])[:, 2]
                d_t -= b3 * (b3 @ fhat[0:3])
            else:
                d_t -= fhat[0:3]
            d_r -= fhat[3:6]
        e_p = out.error[0:3]
        if not sqrt(e_p @ e_p) <= sim.divergence_bound:
            raise DivergenceError("position error beyond divergence bound", step=k)
        a_r = J_inv @ d_r
        residual[k] = sqrt((d_t @ d_t) / (m * m) + a_r @ a_r)
        if k == n:
            break
        oracle.observe(k, t, y, inputs[k])
        try:
            y = rk4_flat(y, u.T, u.tau, t, dt, spec, params)
        except DivergenceError as exc:
            raise DivergenceError("episode diverged", step=k) from exc

    if ctrl.singular_steps:
        log.warning("thrust direction singular on %d steps", ctrl.singular_steps)
    meta = {
        "mode": cfg.controller.mode,
        "trans_scale": gains.trans_scale,
        "rot_scale": gains.rot_scale,
        "dist_scale": spec.scale,
        "H_fro": gains.frobenius(),
        "clamp_count": int(clamped.sum()),
        "singular_steps": ctrl.singular_steps,
        "gp": cfg.controller.mode in GP_MODES or getattr(oracle, "active", False),
    }
    return EpisodeResult(np.arange(n + 1) * dt, states, inputs, errors, fhat_log, gate, rho,
                         aggr, clamped, f_true, residual, meta)
