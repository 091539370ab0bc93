"""Budgeted residual GP updated online on top of a fixed offline model."""

from __future__ import annotations

import logging
from collections import deque
from math import hypot

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from ..dynamics import ControlInput, State, VehicleParams
from .features import FEATURE_DIM, OUTPUT_DIM, SG_INPUT_WEIGHTS, SG_WEIGHTS, make_label
from .gating import GateConfig, GpCompensator, compensation_target, gate, saturate
from .gp import GpFitError, GpModel, cholesky_jitter, se_ard

log = logging.getLogger(__name__)


def chol_append(L: np.ndarray, k_cross: np.ndarray, k_self: float) -> np.ndarray | None:
    """Factor of the Gram matrix grown by one point; ``None`` if the new pivot is not positive."""
    n = len(L)
    l = solve_triangular(L, k_cross, lower=True) if n else np.empty(0)
    d2 = k_self - l @ l
    if not d2 > 0:
        return None
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = L
    out[n, :n] = l
    out[n, n] = np.sqrt(d2)
    return out


def chol_rank1_update(L: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Lower factor of ``L L^T + x x^T``."""
    L = L.copy()
    x = np.array(x, dtype=float)
    for k in range(len(x)):
        r = hypot(L[k, k], x[k])
        c = r / L[k, k]
        s = x[k] / L[k, k]
        L[k, k] = r
        L[k + 1:, k] = (L[k + 1:, k] + s * x[k + 1:]) / c
        x[k + 1:] = c * x[k + 1:] - s * L[k + 1:, k]
    return L


def chol_drop_first(L: np.ndarray) -> np.ndarray:
    """Factor of the Gram matrix with its first point removed."""
    return chol_rank1_update(L[1:, 1:], L[1:, 0])


class ResidualGp:
    """FIFO-budgeted GP with frozen hyperparameters, one independent output per channel."""

    def __init__(self, lengthscales: np.ndarray, signal_std: float = 0.05, noise_std: float = 0.01,
                 budget: int = 350):
        if budget < 1:
            raise ValueError("budget must be >= 1")
        self.lengthscales = np.atleast_2d(np.asarray(lengthscales, dtype=float))
        if self.lengthscales.shape != (OUTPUT_DIM, FEATURE_DIM):
            raise ValueError(f"expected {OUTPUT_DIM}x{FEATURE_DIM} length-scales")
        self.signal_std = float(signal_std)
        self.noise_std = float(noise_std)
        self.budget = int(budget)
        self.Z = np.empty((0, FEATURE_DIM))
        self.Y = np.empty((0, OUTPUT_DIM))
        self._L = [np.empty((0, 0)) for _ in range(OUTPUT_DIM)]
        self.alpha = np.empty((0, OUTPUT_DIM))
        self.refactorizations = 0

    def __len__(self) -> int:
        return len(self.Z)

    def _gram(self, j: int) -> np.ndarray:
        return (se_ard(self.Z, self.Z, self.signal_std, self.lengthscales[j])
                + self.noise_std ** 2 * np.eye(len(self.Z)))

    def _refactor(self):
        self._L = [cholesky_jitter(self._gram(j), j)[0] for j in range(OUTPUT_DIM)]
        self.refactorizations += 1

    def _solve(self):
        self.alpha = np.column_stack([cho_solve((self._L[j], True), self.Y[:, j]) if len(self) else
                                      np.empty(0) for j in range(OUTPUT_DIM)])

    def add(self, z: np.ndarray, y: np.ndarray):
        z = np.asarray(z, dtype=float).reshape(FEATURE_DIM)
        y = np.asarray(y, dtype=float).reshape(OUTPUT_DIM)
        if not (np.isfinite(z).all() and np.isfinite(y).all()):
            raise ValueError("non-finite residual sample")
        if len(self) >= self.budget:
            self.Z, self.Y = self.Z[1:], self.Y[1:]
            self._L = [chol_drop_first(L) for L in self._L]
        k_self = self.signal_std ** 2 + self.noise_std ** 2
        grown = []
        for j in range(OUTPUT_DIM):
            k = se_ard(self.Z, z[None, :], self.signal_std, self.lengthscales[j])[:, 0]
            grown.append(chol_append(self._L[j], k, k_self))
        self.Z = np.vstack([self.Z, z])
        self.Y = np.vstack([self.Y, y])
        if any(L is None for L in grown):
            self._refactor()
        else:
            self._L = grown
        self._solve()

    def factor(self, j: int) -> np.ndarray:
        return self._L[j]

    def predict(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Residual posterior mean and latent std; the prior (zero, ``signal_std``) when empty."""
        z = np.asarray(z, dtype=float)
        if not len(self):
            return np.zeros(OUTPUT_DIM), np.full(OUTPUT_DIM, self.signal_std)
        mu = np.empty(OUTPUT_DIM)
        sd = np.empty(OUTPUT_DIM)
        for j in range(OUTPUT_DIM):
            k = se_ard(self.Z, z[None, :], self.signal_std, self.lengthscales[j])[:, 0]
            mu[j] = k @ self.alpha[:, j]
            v = solve_triangular(self._L[j], k, lower=True)
            sd[j] = np.sqrt(max(self.signal_std ** 2 - v @ v, 0.0))
        return mu, sd


def online_update(residual: ResidualGp, z: np.ndarray, y_residual: np.ndarray) -> ResidualGp:
    """Add one residual sample (``label - offline prediction``) in place and return the model."""
    residual.add(z, y_residual)
    return residual


class OnlineCompensator(GpCompensator):
    """Offline GP plus a gated residual GP refreshed from labels during the episode."""

    def __init__(self, model: GpModel, residual: ResidualGp, params: VehicleParams,
                 cfg: GateConfig = GateConfig(), dist_scale: float = 1.0, freqs=(2.0, 2.5, 0.5),
                 period: float = 0.01, update_interval: float = 0.05, label_noise_std: float = 0.0,
                 rng: np.random.Generator | None = None):
        self.residual = residual
        self.params = params
        self.update_interval = update_interval
        self.label_noise_std = label_noise_std
        self.rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(model, cfg, dist_scale, freqs, period)

    def reset(self):
        super().reset()
        self._states = deque(maxlen=5)
        self._inputs = deque(maxlen=5)
        self._g_on = np.nan
        self._dt = None
        self.gate_online = []
        self.updates = 0
        self.failures = 0

    def _unit(self) -> float:
        return self.dist_scale if self.model.normalize_by_dist else 1.0

    def _evaluate(self, x: State, t: float):
        z = self.feature(x, t)
        mu_off, sd_off = self.model.predict_physical(z)
        mu_res, sd_res = self.residual.predict(z)
        unit = abs(self._unit())
        _, self._g, self._rho = compensation_target(mu_off, sd_off, self.cfg)
        self._g_on = gate(float(np.linalg.norm(sd_res * unit)), self.cfg)
        self._target = saturate(self._g * mu_off + self._g_on * mu_res * self._unit(), self.cfg)

    def predict(self, x: State, t: float, dt: float):
        self._dt = dt
        out = super().predict(x, t, dt)
        self.gate_online.append(self._g_on)
        return out

    def observe(self, k: int, t: float, y: np.ndarray, u: np.ndarray):
        self._states.append(np.array(y, dtype=float))
        self._inputs.append(np.array(u, dtype=float))
        dt = self._dt
        if dt is None or len(self._states) < 5:
            return
        every = max(1, int(round(self.update_interval / dt)))
        if k % every:
            return
        S = np.array(self._states)
        U = np.array(self._inputs)
        c = S[2]
        x_c = State(c[0:3], c[3:6], c[6:10], c[10:13])
        vdot = SG_WEIGHTS @ S[:, 3:6] / dt
        wdot = SG_WEIGHTS @ S[:, 10:13] / dt
        u_c = SG_INPUT_WEIGHTS @ U[0:4]
        label = make_label(x_c, vdot, wdot, ControlInput(u_c[0], u_c[1:4]), self.params,
                           self.label_noise_std, self.rng)
        z_c = self.feature(x_c, t - 2 * dt)
        mu_off, _ = self.model.predict(z_c)
        try:
            self.residual.add(z_c, label / self._unit() - mu_off)
            self.updates += 1
        except (GpFitError, ValueError, np.linalg.LinAlgError) as exc:
            self.failures += 1
            log.warning("online update at step %d failed: %s", k, exc)
