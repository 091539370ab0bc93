"""Labeled training data from fixed-low episodes."""

from __future__ import annotations

import logging

import numpy as np

from ..oracle.features import build_features, episode_labels, phase_frequencies
from ..oracle.gp import Dataset, FitOptions, GpModel, fit
from .config import ScenarioConfig
from .episode import run_episode
from .seeds import derive_seed, rng_for

log = logging.getLogger(__name__)


def episode_dataset(cfg: ScenarioConfig, noise: bool = True, rng=None, result=None) -> Dataset:
    """Run (or reuse) one fixed-low episode and turn it into decimated labeled samples."""
    cfg = cfg.replace(**{"controller.mode": "fixed-low"})
    res = result if result is not None else run_episode(cfg)
    idx, Y = episode_labels(res.states, res.inputs, res.dt, cfg.vehicle)
    keep = slice(None, None, cfg.gp.decimation)
    idx, Y = idx[keep], Y[keep]
    if noise and cfg.gp.label_noise_std > 0:
        rng = rng if rng is not None else rng_for(cfg.simulation.seed, "label-noise")
        Y = Y + rng.normal(0.0, cfg.gp.label_noise_std, Y.shape)
    Z = build_features(res.states[idx], res.t[idx], cfg.dist_scale, phase_frequencies(cfg.disturbance))
    meta = {"dist_scales": [cfg.dist_scale], "decimation": cfg.gp.decimation,
            "seed": cfg.simulation.seed, "controller": "fixed-low", "dt": cfg.simulation.dt}
    return Dataset(Z, Y, cfg.gp.label_noise_std, cfg.gp.normalize_by_dist, meta)


def collect_training_data(cfgs, noise: bool = True) -> Dataset:
    """One episode per scenario, concatenated; label noise drawn from one seeded stream."""
    cfgs = list(cfgs)
    if not cfgs:
        raise ValueError("need at least one scenario")
    rng = rng_for(cfgs[0].simulation.seed, "label-noise")
    parts = []
    for c in cfgs:
        parts.append(episode_dataset(c, noise, rng))
        log.info("collected %d samples at scale %g", len(parts[-1]), c.dist_scale)
    data = Dataset.concat(parts)
    data.meta["dist_scales"] = [c.dist_scale for c in cfgs]
    return data


def default_collection(cfg: ScenarioConfig) -> list[ScenarioConfig]:
    return [cfg.replace(**{"disturbance.scale": float(s)}) for s in cfg.gp.collect_scales]


def fit_options(cfg: ScenarioConfig) -> FitOptions:
    gp = cfg.gp
    return FitOptions(gp.restarts, gp.max_iter, gp.hyper_subset, tuple(gp.lengthscale_bounds),
                      derive_seed(cfg.simulation.seed, "gp-restarts"))


def fit_model(cfg: ScenarioConfig, data: Dataset) -> GpModel:
    return fit(data, fit_options(cfg))
