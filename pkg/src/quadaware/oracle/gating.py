"""Uncertainty gate, saturation and low-pass filtering of the GP compensation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dynamics import State
from .features import build_feature
from .gp import GpModel


@dataclass(frozen=True)
class GateConfig:
    center: float = 0.25
    slope: float = 20.0
    saturation: tuple = (6.0, 6.0, 6.0, 1.0, 1.0, 1.0)
    filter_tau: float = 0.02

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError("gate slope must be positive")
        if np.any(np.asarray(self.saturation, dtype=float) <= 0):
            raise ValueError("saturation bounds must be positive")
        if self.filter_tau < 0:
            raise ValueError("filter time constant must be non-negative")

    @classmethod
    def from_gp_config(cls, gp_cfg) -> GateConfig:
        return cls(gp_cfg.gate_center, gp_cfg.gate_slope, tuple(gp_cfg.saturation), gp_cfg.filter_tau)


def gate(rho: float, cfg: GateConfig = GateConfig()) -> float:
    """Sigmoid confidence weight in ``[0, 1]``; 0.5 at ``rho == center``."""
    a = cfg.slope * (rho - cfg.center)
    # written to avoid overflow for large |a|
    if a >= 0:
        e = np.exp(-a)
        return float(e / (1.0 + e))
    return float(1.0 / (1.0 + np.exp(a)))


def filter_alpha(dt: float, tau: float) -> float:
    """Discrete first-order low-pass coefficient (exact for a held input)."""
    if tau <= 0:
        return 1.0
    return float(1.0 - np.exp(-dt / tau))


def saturate(f: np.ndarray, cfg: GateConfig) -> np.ndarray:
    bound = np.asarray(cfg.saturation, dtype=float)
    return np.clip(f, -bound, bound)


def compensation_target(mu: np.ndarray, sd: np.ndarray, cfg: GateConfig) -> tuple[np.ndarray, float, float]:
    """``(sat(g * mu), g, rho)`` with ``rho = ||sd||``."""
    rho = float(np.linalg.norm(sd))
    g = gate(rho, cfg)
    return saturate(g * np.asarray(mu, dtype=float), cfg), g, rho


def gated_compensation(model: GpModel, z: np.ndarray, cfg: GateConfig, prev_output: np.ndarray | None,
                       dt: float) -> np.ndarray:
    """One filter step towards ``sat(g(rho) mu(z))``; ``prev_output=None`` starts the filter there."""
    mu, sd = model.predict_physical(z)
    target, _, _ = compensation_target(mu, sd, cfg)
    if prev_output is None:
        return target
    prev = np.asarray(prev_output, dtype=float)
    return prev + filter_alpha(dt, cfg.filter_tau) * (target - prev)


@dataclass
class GpCompensator:
    """Episode oracle: evaluates the GP every ``period`` seconds, holds, and filters every step."""

    model: GpModel
    cfg: GateConfig = field(default_factory=GateConfig)
    dist_scale: float = 1.0
    freqs: tuple = (2.0, 2.5, 0.5)
    period: float = 0.01
    active: bool = True

    def __post_init__(self):
        self.reset()

    def reset(self):
        self._out = None
        self._target = np.zeros(6)
        self._g = np.nan
        self._rho = np.nan
        self.evaluations = 0

    def feature(self, x: State, t: float) -> np.ndarray:
        return build_feature(x, t, self.dist_scale, self.freqs)

    def _evaluate(self, x: State, t: float):
        mu, sd = self.model.predict_physical(self.feature(x, t))
        self._target, self._g, self._rho = compensation_target(mu, sd, self.cfg)

    def predict(self, x: State, t: float, dt: float):
        every = max(1, int(round(self.period / dt)))
        if self._out is None or int(round(t / dt)) % every == 0:
            self._evaluate(x, t)
            self.evaluations += 1
        if self._out is None:
            self._out = self._target.copy()
        else:
            self._out = self._out + filter_alpha(dt, self.cfg.filter_tau) * (self._target - self._out)
        return self._out.copy(), self._g, self._rho

    def observe(self, k: int, t: float, y: np.ndarray, u: np.ndarray):
        pass
