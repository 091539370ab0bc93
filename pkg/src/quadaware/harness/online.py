"""GP-compensated episodes: offline-only and offline plus online residual."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..oracle.features import phase_frequencies
from ..oracle.gating import GateConfig, GpCompensator
from ..oracle.gp import GpModel
from ..oracle.online import OnlineCompensator, ResidualGp
from .config import ScenarioConfig
from .episode import EpisodeResult, run_episode
from .seeds import rng_for


def make_compensator(cfg: ScenarioConfig, model: GpModel) -> GpCompensator:
    return GpCompensator(model, GateConfig.from_gp_config(cfg.gp), cfg.dist_scale,
                         phase_frequencies(cfg.disturbance), cfg.gp.oracle_period)


def make_online_compensator(cfg: ScenarioConfig, model: GpModel) -> OnlineCompensator:
    oc = cfg.gp.online
    residual = ResidualGp(model.hyper.lengthscales, oc.signal_std, oc.noise_std, oc.budget)
    return OnlineCompensator(model, residual, cfg.vehicle, GateConfig.from_gp_config(cfg.gp),
                             cfg.dist_scale, phase_frequencies(cfg.disturbance), cfg.gp.oracle_period,
                             oc.update_interval, cfg.gp.label_noise_std,
                             rng_for(cfg.simulation.seed, "online-label-noise"))


def run_offline(cfg: ScenarioConfig, model: GpModel, trans_scale: float | None = 1.0) -> EpisodeResult:
    return run_episode(cfg, make_compensator(cfg, model), trans_scale)


@dataclass
class OnlineRun:
    result: EpisodeResult
    residual: ResidualGp
    updates: int
    failures: int


def run_online(cfg: ScenarioConfig, model: GpModel, trans_scale: float | None = 1.0) -> OnlineRun:
    """Episode with the residual GP refreshed every ``gp.online.update_interval`` seconds."""
    oracle = make_online_compensator(cfg, model)
    res = run_episode(cfg, oracle, trans_scale)
    g_on = np.asarray(oracle.gate_online, dtype=float)
    ss = res.t >= cfg.simulation.transient_end - 1e-12
    res.meta["gate_online"] = g_on
    res.meta["gate_off_mean_ss"] = float(np.nanmean(res.gate[ss]))
    res.meta["gate_on_mean_ss"] = float(np.nanmean(g_on[ss]))
    res.meta["residual_size"] = len(oracle.residual)
    res.meta["online_updates"] = oracle.updates
    res.meta["online_failures"] = oracle.failures
    res.meta["refactorizations"] = oracle.residual.refactorizations
    return OnlineRun(res, oracle.residual, oracle.updates, oracle.failures)
