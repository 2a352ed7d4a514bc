from __future__ import annotations

import numpy as np
from scipy import stats

from app.services.encoding_service import (
    KinematicsSeries,
    SpikeTrain,
    TuningModel,
    log_spike_probability,
)

DT = 0.01


def random_walk_kinematics(n_bins: int, seed: int, step_sd: float = 0.02) -> KinematicsSeries:
    rng = np.random.default_rng(seed)
    steps = rng.normal(0.0, step_sd, size=(n_bins, 2))
    steps[0] = 0.0
    positions = np.cumsum(steps, axis=0)
    velocities = np.zeros_like(positions)
    velocities[1:] = np.diff(positions, axis=0)
    return KinematicsSeries.from_components(np.column_stack([positions, velocities]), DT)


def position_tuned_models(n_neurons: int, *, a: float = 4.0, rate_hz: float = 20.0):
    """Neurons with evenly spread preferred position directions."""
    angles = np.linspace(0.0, 2.0 * np.pi, n_neurons, endpoint=False)
    return [
        TuningModel(
            k=np.array([0.5 * np.cos(t), 0.5 * np.sin(t), 0.0, 0.0, 0.0]),
            a=a,
            b=float(np.log(rate_hz)),
        )
        for t in angles
    ]


def poisson_trains(kin: KinematicsSeries, models, seed: int) -> list[SpikeTrain]:
    rng = np.random.default_rng(seed)
    trains = []
    for model in models:
        lam = np.minimum(np.exp(model.a * (kin.states @ model.k) + model.b), 1000.0)
        trains.append(SpikeTrain(counts=rng.poisson(lam * kin.bin_width_s), bin_width_s=DT))
    return trains


def small_config_dict() -> dict:
    """A scenario small enough for end-to-end runs in a few seconds."""
    return {
        "scenario": {
            "n_neurons": 4,
            "mc_bins": 1500,
            "bc_bins": 1500,
            "n_switching": 2,
            "task": {"pre_cue_bins": 20, "trial_len_bins": 40, "inter_trial_bins": [50, 100]},
        },
        "gapp": {"n_particles": 100},
        "decoder": {"n_particles": 100},
        "dsmcpp": {"n_tuning_particles": 20, "n_kin_particles": 100, "walk_window_s": 2.0},
        "sgd": {
            "learning_rate": 0.1,
            "history_len": 1500,
            "update_every": 100,
            "max_iters": 500,
        },
        "training": {
            "transition_bins": 1500,
            "kinematics_bins": 1500,
            "regression_window_s": 5.0,
            "regression_overlap": 0.9,
        },
        "evaluation": {
            "mi_window_s": 5.0,
            "mi_overlap_s": 4.0,
            "convergence_window": 100,
            "nmse_bins": 1000,
            "zhat_rmse_bins": 500,
            "subset_size": 2,
        },
        "seed": 7,
    }



def grid_bayes_filter(spikes, model, tm, psi, grid, support, z0, dt=DT) -> np.ndarray:
    """Exact Bayes filter for the local/uniform mixture transition on a fixed
    grid; returns the posterior mean per bin."""
    local = stats.norm.pdf(grid[:, None], loc=tm.f * grid[None, :], scale=np.sqrt(tm.r))
    local /= local.sum(axis=0, keepdims=True)
    uniform = ((grid >= support[0]) & (grid <= support[1])).astype(float)
    uniform /= uniform.sum()
    post = np.zeros_like(grid)
    post[np.argmin(np.abs(grid - z0))] = 1.0
    log_lam = np.minimum(model.a * grid + model.b, np.log(1000.0))
    means = []
    for dn in spikes.counts:
        prior = (1.0 - psi) * (local @ post) + psi * uniform
        post = prior * np.exp(log_spike_probability(log_lam, dt, dn))
        post /= post.sum()
        means.append(float(grid @ post))
    return np.asarray(means)
