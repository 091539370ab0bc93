"""Feature vectors and disturbance labels for the GP oracle."""

from __future__ import annotations

import numpy as np

from ..dynamics import ControlInput, DisturbanceSpec, State, VehicleParams
from ..se3 import E3, quat_to_matrix

FEATURE_DIM = 20
OUTPUT_DIM = 6

# 5-point Savitzky-Golay first-derivative weights (quadratic fit)
SG_WEIGHTS = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) / 10.0
# ZOH inputs u_{k-2..k+1} seen by the SG window, weighted to match its O(dt^2) centre
SG_INPUT_WEIGHTS = np.array([0.2, 0.3, 0.3, 0.2])
SG_HALF = 2


def phase_frequencies(spec: DisturbanceSpec) -> tuple[float, float, float]:
    """Frequencies used for the sin/cos phase features: vertical, yaw, first wind axis."""
    return float(spec.vert_freq), float(spec.yaw_freq), float(spec.wind_freq[0])


def build_feature(x: State, t: float, dist_scale: float,
                  freqs: tuple[float, float, float] | None = None) -> np.ndarray:
    """20-d feature: ``p, v, q, w``, three sin/cos phase pairs, then the disturbance scale."""
    if freqs is None:
        freqs = phase_frequencies(DisturbanceSpec())
    z = np.empty(FEATURE_DIM)
    z[0:3] = x.p
    z[3:6] = x.v
    z[6:10] = x.q
    z[10:13] = x.w
    for i, om in enumerate(freqs):
        z[13 + 2 * i] = np.sin(om * t)
        z[14 + 2 * i] = np.cos(om * t)
    z[19] = dist_scale
    return z


def build_features(states: np.ndarray, t: np.ndarray, dist_scale: float,
                   freqs: tuple[float, float, float]) -> np.ndarray:
    """Vectorized :func:`build_feature` over flat ``(n, 13)`` states."""
    states = np.atleast_2d(states)
    t = np.asarray(t, dtype=float)
    Z = np.empty((len(states), FEATURE_DIM))
    Z[:, 0:13] = states
    for i, om in enumerate(freqs):
        Z[:, 13 + 2 * i] = np.sin(om * t)
        Z[:, 14 + 2 * i] = np.cos(om * t)
    Z[:, 19] = dist_scale
    return Z


def make_label(x: State, v_dot: np.ndarray, w_dot: np.ndarray, u: ControlInput,
               params: VehicleParams, noise_std: float = 0.0,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Disturbance implied by measured accelerations: the model terms are subtracted out."""
    R = quat_to_matrix(x.q)
    m, J = params.m, params.J
    w = np.asarray(x.w, dtype=float)
    y = np.empty(OUTPUT_DIM)
    y[0:3] = m * np.asarray(v_dot) - m * params.g * E3 + u.T * R[:, 2]
    y[3:6] = J @ np.asarray(w_dot) + np.cross(w, J @ w) - np.asarray(u.tau)
    if noise_std > 0:
        if rng is None:
            raise ValueError("noise requires an rng")
        y = y + rng.normal(0.0, noise_std, OUTPUT_DIM)
    return y


def sg_derivative(series: np.ndarray, dt: float) -> np.ndarray:
    """Smoothed derivative at the interior samples ``2..n-3`` (edges are trimmed)."""
    series = np.asarray(series, dtype=float)
    n = len(series)
    if n < 5:
        raise ValueError("need at least 5 samples")
    out = np.zeros((n - 4,) + series.shape[1:])
    for j, c in enumerate(SG_WEIGHTS):
        if c:
            out += c * series[j:n - 4 + j]
    return out / dt


def sg_input(inputs: np.ndarray) -> np.ndarray:
    """Inputs matched to :func:`sg_derivative`: weighted mean of ``u_{k-2..k+1}``."""
    inputs = np.asarray(inputs, dtype=float)
    n = len(inputs)
    out = np.zeros((n - 4,) + inputs.shape[1:])
    for j, c in enumerate(SG_INPUT_WEIGHTS):
        out += c * inputs[j:n - 4 + j]
    return out


def episode_labels(states: np.ndarray, inputs: np.ndarray, dt: float,
                   params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    """Labels at every interior sample of a logged episode.

    Returns ``(index, Y)`` where ``index`` are the sample indices the rows of
    ``Y`` belong to.
    """
    states = np.asarray(states, dtype=float)
    vdot = sg_derivative(states[:, 3:6], dt)
    wdot = sg_derivative(states[:, 10:13], dt)
    U = sg_input(inputs)
    idx = np.arange(SG_HALF, len(states) - SG_HALF)
    q = states[idx, 6:10]
    w = states[idx, 10:13]
    qw, qx, qy, qz = q.T
    b3 = np.column_stack([2.0 * (qx * qz + qw * qy), 2.0 * (qy * qz - qw * qx), 1.0 - 2.0 * (qx * qx + qy * qy)])
    m, J = params.m, params.J
    Y = np.empty((len(idx), OUTPUT_DIM))
    Y[:, 0:3] = m * vdot - m * params.g * E3 + U[:, 0:1] * b3
    Jw = w @ J.T
    Y[:, 3:6] = wdot @ J.T + np.cross(w, Jw) - U[:, 1:4]
    return idx, Y
