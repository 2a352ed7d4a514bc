"""Local-search dual SMC baseline (DSMCPP).

Per bin, kinematics are decoded first with the current tuning estimates, then
each neuron's ``K`` particles take a random-walk step, are weighted by the
spike likelihood given the decoded kinematics and are resampled. The tuning
estimate can only drift as fast as the walk covariance allows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from app.core.config import settings
from app.core.errors import InvalidArgumentError
from app.core.logging import get_logger
from app.schemas.config_schema import DsmcppConfig
from app.services.decoding_service import (
    KinematicsTransition,
    SmcppDecoder,
    psd_floor,
    psd_sqrt,
    spike_matrix,
)
from app.services.encoding_service import (
    KIN_DIM,
    STATE_DIM,
    SpikeTrain,
    log_spike_probability,
    modulation_state,
)
from app.services.particle_service import (
    effective_sample_size,
    normalize_log_weights,
    systematic_resample,
)

logger = get_logger(__name__)


@dataclass
class DsmcppResult:
    khat: np.ndarray  # (n_neurons, n_bins, 5)
    xhat: np.ndarray  # (n_bins, 4)
    zhat: np.ndarray  # (n_neurons, n_bins)
    kin_ess: np.ndarray
    tuning_ess: np.ndarray  # (n_neurons, n_bins)


def fit_tuning_walk(k_truth_windows, *, bins_per_step: int = 1) -> np.ndarray:
    """Covariance of successive window differences, per bin.

    Window estimates ``bins_per_step`` apart give the covariance accumulated
    over that many random-walk steps. The mean difference (drift) is removed;
    with only two windows it cannot be separated from the spread, so the raw
    second moment of the single difference is used.
    """
    k = np.asarray(k_truth_windows, dtype=float)
    if k.ndim != 2 or k.shape[1] != STATE_DIM:
        raise InvalidArgumentError("K windows must be (n_windows, 5)")
    if k.shape[0] < 2:
        raise InvalidArgumentError("fit_tuning_walk needs at least 2 windows")
    if bins_per_step < 1:
        raise InvalidArgumentError("bins_per_step must be >= 1")
    diffs = np.diff(k, axis=0)
    if diffs.shape[0] == 1:
        logger.warning("tuning_walk_drift_not_removed", windows=int(k.shape[0]))
        cov = np.outer(diffs[0], diffs[0])
    else:
        cov = np.cov(diffs, rowvar=False)
    return psd_floor(cov) / bins_per_step


def _walk_factors(walk_cov, n_neurons: int, scale: float) -> np.ndarray:
    cov = np.asarray(walk_cov, dtype=float)
    if cov.shape == (STATE_DIM, STATE_DIM):
        cov = np.repeat(cov[None], n_neurons, axis=0)
    if cov.shape != (n_neurons, STATE_DIM, STATE_DIM):
        raise InvalidArgumentError("walk covariance must be 5x5 or one 5x5 per neuron")
    return np.array([psd_sqrt(psd_floor(c) * scale) for c in cov])


def dsmcpp_run(
    spikes: Sequence[SpikeTrain],
    nonlinearities: Sequence[tuple[float, float]],
    kt: KinematicsTransition,
    cfg: DsmcppConfig,
    k0: np.ndarray,
    x0,
    rng: np.random.Generator,
    *,
    walk_cov=None,
) -> DsmcppResult:
    """``walk_cov`` (one 5x5, or one per neuron) defaults to
    ``cfg.tuning_walk_cov``; ``cfg.walk_scale`` multiplies it."""
    counts, dt = spike_matrix(spikes)
    n_bins, n_neurons = counts.shape
    if len(nonlinearities) != n_neurons:
        raise InvalidArgumentError("one (a, b) pair per spike train is required")
    k0 = np.asarray(k0, dtype=float).reshape(n_neurons, STATE_DIM)
    if walk_cov is None:
        if cfg.tuning_walk_cov is None:
            raise InvalidArgumentError("tuning walk covariance is not set")
        walk_cov = cfg.tuning_walk_cov
    factors = _walk_factors(walk_cov, n_neurons, cfg.walk_scale)

    a = np.array([ab[0] for ab in nonlinearities], dtype=float)
    b = np.array([ab[1] for ab in nonlinearities], dtype=float)
    cap = np.log(settings.LAMBDA_MAX_HZ)
    m = cfg.n_tuning_particles

    decoder = SmcppDecoder(kt, cfg.n_kin_particles, x0, rng, dt=dt)
    particles = np.repeat(k0[:, None, :], m, axis=1)  # (n_neurons, m, 5)
    k_est = k0.copy()
    khat = np.empty((n_neurons, n_bins, STATE_DIM))
    xhat = np.empty((n_bins, KIN_DIM))
    kin_ess = np.empty(n_bins)
    tuning_ess = np.empty((n_neurons, n_bins))
    degenerate_bins = 0

    for t in range(n_bins):
        xhat[t], kin_ess[t], _ = decoder.step(counts[t], k_est, a, b)
        x_state = np.append(xhat[t], 1.0)

        noise = rng.standard_normal((n_neurons, m, STATE_DIM))
        particles = particles + np.einsum("nmj,nij->nmi", noise, factors)
        log_lam = np.minimum(a[:, None] * (particles @ x_state) + b[:, None], cap)
        log_lik = log_spike_probability(log_lam, dt, counts[t][:, None])
        for i in range(n_neurons):
            weights, _, degenerate = normalize_log_weights(log_lik[i])
            degenerate_bins += int(degenerate)
            k_est[i] = weights @ particles[i]
            tuning_ess[i, t] = effective_sample_size(weights)
            particles[i] = particles[i][systematic_resample(weights, m, rng)]
        khat[:, t, :] = k_est

    if degenerate_bins:
        logger.warning("dsmcpp_tuning_weights_degenerate", count=degenerate_bins)
    states = np.column_stack([xhat, np.ones(n_bins)])
    zhat = modulation_state(khat, states[None, :, :])
    logger.info("dsmcpp_completed", n_bins=n_bins, n_neurons=n_neurons)
    return DsmcppResult(khat=khat, xhat=xhat, zhat=zhat, kin_ess=kin_ess, tuning_ess=tuning_ess)
