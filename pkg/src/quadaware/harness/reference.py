"""Figure-eight reference with small altitude modulation and constant yaw."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..controller import ReferencePoint, desired_attitude
from ..se3 import E3


@dataclass(frozen=True)
class ReferenceConfig:
    ax: float = 1.5
    ay: float = 1.0
    omega: float = 0.5
    az: float = 0.2
    omega_alt: float = 0.8
    z0: float = -1.0  # 1 m above ground (e3 points down)
    yaw: float = 0.0
    fd_step: float = 1e-3


def position(t: float, cfg: ReferenceConfig):
    """``(p, p_dot, p_ddot)`` in closed form."""
    w, wa = cfg.omega, cfg.omega_alt
    s1, c1 = np.sin(w * t), np.cos(w * t)
    s2, c2 = np.sin(2 * w * t), np.cos(2 * w * t)
    sa, ca = np.sin(wa * t), np.cos(wa * t)
    p = np.array([cfg.ax * s1, cfg.ay * s2, cfg.z0 + cfg.az * sa])
    v = np.array([cfg.ax * w * c1, 2 * cfg.ay * w * c2, cfg.az * wa * ca])
    a = np.array([-cfg.ax * w * w * s1, -4 * cfg.ay * w * w * s2, -cfg.az * wa * wa * sa])
    return p, v, a


def _attitude(t: float, cfg: ReferenceConfig, g: float) -> np.ndarray:
    _, _, a = position(t, cfg)
    return desired_attitude(g * E3 - a, cfg.yaw)


def _body_rate(t: float, cfg: ReferenceConfig, g: float) -> np.ndarray:
    h = cfg.fd_step
    R = _attitude(t, cfg, g)
    dR = (_attitude(t + h, cfg, g) - _attitude(t - h, cfg, g)) / (2 * h)
    S = R.T @ dR
    S = 0.5 * (S - S.T)
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def reference(t: float, cfg: ReferenceConfig = ReferenceConfig(), g: float = 9.81) -> ReferencePoint:
    """Reference point at time ``t``.

    ``R_d`` is the attitude that produces the feedforward force along the
    reference; ``w_d`` and ``dw_d`` come from central differences of that
    construction in time.
    """
    p, v, a = position(t, cfg)
    h = cfg.fd_step
    R_d = _attitude(t, cfg, g)
    w_d = _body_rate(t, cfg, g)
    dw_d = (_body_rate(t + h, cfg, g) - _body_rate(t - h, cfg, g)) / (2 * h)
    return ReferencePoint(p, v, a, cfg.yaw, 0.0, R_d, w_d, dw_d)


def _positions(t: np.ndarray, cfg: ReferenceConfig) -> np.ndarray:
    """Vectorized accelerations from :func:`position`, shape ``(n, 3)``."""
    w, wa = cfg.omega, cfg.omega_alt
    return np.column_stack([-cfg.ax * w * w * np.sin(w * t), -4 * cfg.ay * w * w * np.sin(2 * w * t),
                            -cfg.az * wa * wa * np.sin(wa * t)])


def _attitudes(t: np.ndarray, cfg: ReferenceConfig, g: float) -> np.ndarray | None:
    """Vectorized :func:`_attitude`; ``None`` if any sample hits a degenerate heading."""
    F = g * E3 - _positions(t, cfg)
    b3 = F / np.linalg.norm(F, axis=1, keepdims=True)
    b1c = np.array([np.cos(cfg.yaw), np.sin(cfg.yaw), 0.0])
    b2 = np.cross(b3, b1c)
    n2 = np.linalg.norm(b2, axis=1, keepdims=True)
    if np.any(n2 < 1e-9):
        return None
    b2 = b2 / n2
    return np.stack([np.cross(b2, b3), b2, b3], axis=-1)


def _body_rates(t: np.ndarray, cfg: ReferenceConfig, g: float):
    h = cfg.fd_step
    R, Rp, Rm = (_attitudes(t + d, cfg, g) for d in (0.0, h, -h))
    if R is None or Rp is None or Rm is None:
        return None
    S = np.einsum("nji,njk->nik", R, (Rp - Rm) / (2 * h))
    S = 0.5 * (S - np.swapaxes(S, 1, 2))
    return R, np.column_stack([S[:, 2, 1], S[:, 0, 2], S[:, 1, 0]])


@lru_cache(maxsize=8)
def _table(cfg: ReferenceConfig, g: float, dt: float, n: int):
    t = np.arange(n + 1) * dt
    h = cfg.fd_step
    mid, hi, lo = (_body_rates(t + d, cfg, g) for d in (0.0, h, -h))
    if mid is None or hi is None or lo is None:
        return tuple(reference(k * dt, cfg, g) for k in range(n + 1))
    R, W = mid
    dW = (hi[1] - lo[1]) / (2 * h)
    pts = []
    for k in range(n + 1):
        p, v, a = position(t[k], cfg)
        pts.append(ReferencePoint(p, v, a, cfg.yaw, 0.0, R[k], W[k], dW[k]))
    return tuple(pts)


def reference_table(cfg: ReferenceConfig, g: float, dt: float, n: int) -> tuple[ReferencePoint, ...]:
    """Reference points at ``k * dt`` for ``k = 0..n`` (cached; treat as read-only)."""
    return _table(cfg, float(g), float(dt), int(n))
