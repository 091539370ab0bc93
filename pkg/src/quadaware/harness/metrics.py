"""Tracking and aggressiveness summaries of an episode."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


def rms(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.sqrt(np.mean(a * a))) if a.size else 0.0


def input_rates(inputs: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Forward-difference ``|T_dot|`` and ``||tau_dot||``; entry ``k`` belongs to sample ``k``."""
    d = np.diff(np.asarray(inputs, dtype=float), axis=0) / dt
    return np.abs(d[:, 0]), np.linalg.norm(d[:, 1:4], axis=1)


@dataclass
class MetricsReport:
    final_error: float
    peak_error: float
    Tdot_rms_tr: float
    Tdot_rms_ss: float
    taudot_rms_tr: float
    taudot_rms_ss: float
    effort_T_tr: float  # RMS |T - m g|
    effort_T_ss: float
    effort_tau_tr: float  # RMS ||tau||
    effort_tau_ss: float
    H_fro: float
    aggressiveness: float
    gate_mean_ss: float | None = None
    rho_mean_ss: float | None = None
    clamp_count: int = 0
    mode: str = ""
    trans_scale: float = 1.0
    dist_scale: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(result, transient_end: float = 3.0, m: float = 1.0, g: float = 9.81) -> MetricsReport:
    """Summaries on the windows ``[0, transient_end)`` and ``[transient_end, T]``."""
    t = result.t
    if len(t) < 2:
        raise ValueError("episode too short for rate metrics")
    dt = result.dt
    Tdot, taudot = input_rates(result.inputs, dt)
    tr = t < transient_end - 1e-12
    ss = ~tr
    tr_r, ss_r = tr[:-1], ss[:-1]
    thrust_dev = np.abs(result.inputs[:, 0] - m * g)
    tau_norm = np.linalg.norm(result.inputs[:, 1:4], axis=1)
    gp = bool(result.meta.get("gp")) and np.isfinite(result.gate[ss]).any()
    return MetricsReport(
        final_error=result.final_error,
        peak_error=float(result.ep_norm.max()),
        Tdot_rms_tr=rms(Tdot[tr_r]), Tdot_rms_ss=rms(Tdot[ss_r]),
        taudot_rms_tr=rms(taudot[tr_r]), taudot_rms_ss=rms(taudot[ss_r]),
        effort_T_tr=rms(thrust_dev[tr]), effort_T_ss=rms(thrust_dev[ss]),
        effort_tau_tr=rms(tau_norm[tr]), effort_tau_ss=rms(tau_norm[ss]),
        H_fro=float(result.meta.get("H_fro", np.nan)),
        aggressiveness=float(np.nanmean(result.aggr)),
        gate_mean_ss=float(np.nanmean(result.gate[ss])) if gp else None,
        rho_mean_ss=float(np.nanmean(result.rho[ss])) if gp else None,
        clamp_count=int(result.meta.get("clamp_count", 0)),
        mode=str(result.meta.get("mode", "")),
        trans_scale=float(result.meta.get("trans_scale", np.nan)),
        dist_scale=float(result.meta.get("dist_scale", np.nan)),
    )


def metrics(result, cfg) -> MetricsReport:
    return compute_metrics(result, cfg.simulation.transient_end, cfg.vehicle.m, cfg.vehicle.g)
