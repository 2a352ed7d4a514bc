"""Globally adaptive modulation-state tracker.

Each bin, two particle sets are proposed: a local set that follows the
learned scalar transition ``z' = F z + N(0, R)`` and a global set drawn
uniformly over ``[z_min, z_max]``. Both are weighted by the Poisson
likelihood of the bin's spike count, combined with mixture weights
``(1 - psi)`` and ``psi`` and resampled back to ``n_particles``. The global
set lets the posterior jump to a distant region after an abrupt tuning change.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from app.core.config import settings
from app.core.errors import DegenerateDataError, InvalidArgumentError
from app.core.logging import get_logger
from app.schemas.config_schema import GappConfig
from app.services.encoding_service import (
    SpikeTrain,
    TuningModel,
    clamped_log_intensity,
    log_spike_probability,
)
from app.services.particle_service import (
    ParticleEnsemble,
    effective_sample_size,
    normalize_log_weights,
    systematic_resample,
    weighted_mean,
)

logger = get_logger(__name__)

BANDWIDTH_FLOOR = 1e-4


@dataclass(frozen=True)
class TransitionModel:
    f: float
    r: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.f) and np.isfinite(self.r)) or self.r < 0:
            raise InvalidArgumentError("transition needs finite F and R >= 0")


@dataclass
class ResampleResult:
    values: np.ndarray
    ess: float
    global_fraction: float


@dataclass
class TrackResult:
    zhat: np.ndarray
    ess: np.ndarray
    global_fraction: np.ndarray
    range_violation: np.ndarray
    saturated: np.ndarray
    degenerate_bins: list[int] = field(default_factory=list)


def fit_transition(z_train: Sequence[float] | np.ndarray) -> TransitionModel:
    """Least-squares AR(1) coefficient and mean squared residual."""
    z = np.asarray(z_train, dtype=float)
    if z.size < 2:
        raise InvalidArgumentError("fit_transition needs at least 2 samples")
    prev, nxt = z[:-1], z[1:]
    denom = float(np.dot(prev, prev))
    if denom == 0.0:
        raise DegenerateDataError("transition design is all zeros")
    f = float(np.dot(prev, nxt) / denom)
    residual = nxt - f * prev
    return TransitionModel(f=f, r=float(np.mean(residual * residual)))


def propagate_local(
    prev: np.ndarray, tm: TransitionModel, rng: np.random.Generator
) -> np.ndarray:
    prev = np.asarray(prev, dtype=float)
    return tm.f * prev + rng.normal(0.0, np.sqrt(tm.r), size=prev.shape)


def propose_global(cfg: GappConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(cfg.z_min, cfg.z_max, size=cfg.n_particles)


def observation_log_likelihood(
    values: np.ndarray, dn: int, model: TuningModel, dt: float
) -> tuple[np.ndarray, int]:
    log_lam, saturated = clamped_log_intensity(model.a, model.b, values)
    return log_spike_probability(log_lam, dt, dn), int(np.sum(saturated))


def weight_by_observation(
    values: np.ndarray, dn: int, model: TuningModel, dt: float
) -> np.ndarray:
    if dn < 0:
        raise InvalidArgumentError("dn must be non-negative")
    log_lik, _ = observation_log_likelihood(values, dn, model, dt)
    weights, _, degenerate = normalize_log_weights(log_lik)
    if degenerate:
        logger.warning("tracker_weights_degenerate", n_particles=len(weights))
    return weights


def combine_and_resample(
    local_values: np.ndarray,
    local_weights: np.ndarray,
    global_values: np.ndarray,
    global_weights: np.ndarray,
    psi: float,
    n: int,
    rng: np.random.Generator,
    *,
    log_evidence: tuple[float, float] | None = None,
) -> ResampleResult:
    """Resample ``n`` values from the ``(1 - psi)``/``psi`` mixture of the two
    internally normalized sets.

    ``log_evidence`` (log mean likelihood of each set) rescales the mixture
    weights by each set's evidence. A set whose mixture weight is zero is left
    out of the candidate pool.
    """
    mix_local, mix_global = 1.0 - psi, psi
    if log_evidence is not None and 0.0 < psi < 1.0:
        log_mix = np.array([np.log(mix_local), np.log(mix_global)]) + np.asarray(log_evidence)
        if np.any(np.isfinite(log_mix)):
            mix = np.exp(log_mix - np.max(log_mix))
            mix_local, mix_global = mix / mix.sum()

    pools, weights = [], []
    if mix_local > 0:
        pools.append(np.asarray(local_values, dtype=float))
        weights.append(mix_local * np.asarray(local_weights, dtype=float))
    if mix_global > 0:
        pools.append(np.asarray(global_values, dtype=float))
        weights.append(mix_global * np.asarray(global_weights, dtype=float))
    candidates = np.concatenate(pools)
    combined = np.concatenate(weights)
    combined /= combined.sum()

    idx = systematic_resample(combined, n, rng)
    n_local = len(local_values) if mix_local > 0 else 0
    return ResampleResult(
        values=candidates[idx],
        ess=effective_sample_size(combined),
        global_fraction=float(np.mean(idx >= n_local)),
    )


def posterior_mean(ensemble: ParticleEnsemble) -> float:
    return weighted_mean(ensemble.values, ensemble.weights)


def silverman_bandwidth(ensemble: ParticleEnsemble) -> float:
    mean = posterior_mean(ensemble)
    var = float(np.dot(ensemble.weights, (ensemble.values - mean) ** 2))
    n = ensemble.values.shape[0]
    return max(1.06 * np.sqrt(var) * n ** (-0.2), BANDWIDTH_FLOOR)


def posterior_density(ensemble: ParticleEnsemble, z_grid: Sequence[float] | np.ndarray) -> np.ndarray:
    """Gaussian-kernel mixture over the particles; diagnostic only."""
    grid = np.asarray(z_grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise InvalidArgumentError("z_grid must be sorted")
    h = silverman_bandwidth(ensemble)
    kernels = stats.norm.pdf(grid[:, None], loc=ensemble.values[None, :], scale=h)
    return kernels @ ensemble.weights


class GappTracker:
    """Sequential tracker for one neuron. Not safe to share between threads
    while stepping."""

    def __init__(
        self,
        model: TuningModel,
        tm: TransitionModel,
        cfg: GappConfig,
        z0: float,
        rng: np.random.Generator,
        *,
        dt: float | None = None,
    ):
        if not cfg.z_min <= z0 <= cfg.z_max:
            raise InvalidArgumentError(
                "z0 must lie inside [z_min, z_max]", details=[{"z0": z0}]
            )
        self.model = model
        self.tm = tm
        self.cfg = cfg
        self.rng = rng
        self.dt = dt or settings.BIN_WIDTH_S
        self.particles = np.full(cfg.n_particles, float(z0))

    def step(self, dn: int) -> tuple[float, ResampleResult, int, bool]:
        cfg = self.cfg
        n = cfg.n_particles
        empty = np.empty(0)
        saturated = 0
        degenerate = False

        local_vals, local_w, ev_local = empty, empty, -np.inf
        if cfg.psi < 1.0:
            local_vals = propagate_local(self.particles, self.tm, self.rng)
            ll, sat = observation_log_likelihood(local_vals, dn, self.model, self.dt)
            local_w, ev_local, deg = normalize_log_weights(ll)
            saturated += sat
            degenerate |= deg

        global_vals, global_w, ev_global = empty, empty, -np.inf
        if cfg.psi > 0.0:
            global_vals = propose_global(cfg, self.rng)
            ll, sat = observation_log_likelihood(global_vals, dn, self.model, self.dt)
            global_w, ev_global, deg = normalize_log_weights(ll)
            saturated += sat
            degenerate |= deg

        evidence = (ev_local, ev_global) if cfg.mixture_weighting == "evidence" else None
        result = combine_and_resample(
            local_vals, local_w, global_vals, global_w, cfg.psi, n, self.rng,
            log_evidence=evidence,
        )
        self.particles = result.values
        return float(np.mean(result.values)), result, saturated, degenerate

    def ensemble(self) -> ParticleEnsemble:
        return ParticleEnsemble.uniform(self.particles.copy())


def track(
    spikes: SpikeTrain,
    model: TuningModel,
    tm: TransitionModel,
    cfg: GappConfig,
    z0: float,
    rng: np.random.Generator,
) -> TrackResult:
    tracker = GappTracker(model, tm, cfg, z0, rng, dt=spikes.bin_width_s)
    n_bins = len(spikes)
    zhat = np.empty(n_bins)
    ess = np.empty(n_bins)
    global_fraction = np.empty(n_bins)
    saturated = np.zeros(n_bins, dtype=np.int64)
    degenerate_bins: list[int] = []

    for k, dn in enumerate(spikes.counts):
        zhat[k], result, saturated[k], degenerate = tracker.step(int(dn))
        ess[k] = result.ess
        global_fraction[k] = result.global_fraction
        if degenerate:
            degenerate_bins.append(k)

    range_violation = (zhat < cfg.z_min) | (zhat > cfg.z_max)
    if degenerate_bins:
        logger.warning("tracker_weights_degenerate", bins=len(degenerate_bins))
    if range_violation.any():
        logger.warning("tracker_range_violation", bins=int(range_violation.sum()))
    if saturated.any():
        logger.warning("intensity_saturated", bins=int((saturated > 0).sum()))
    return TrackResult(
        zhat=zhat,
        ess=ess,
        global_fraction=global_fraction,
        range_violation=range_violation,
        saturated=saturated,
        degenerate_bins=degenerate_bins,
    )


def psi_sweep(
    spikes: SpikeTrain,
    model: TuningModel,
    tm: TransitionModel,
    cfg: GappConfig,
    z0: float,
    z_true: np.ndarray,
    psis: Iterable[float],
    rng_factory,
) -> dict[float, float]:
    """ẑ RMSE against ``z_true`` for each ψ; ``rng_factory(psi)`` supplies a
    fresh generator per run."""
    z_true = np.asarray(z_true, dtype=float)
    out: dict[float, float] = {}
    for psi in psis:
        run_cfg = cfg.model_copy(update={"psi": float(psi)})
        result = track(spikes, model, tm, run_cfg, z0, rng_factory(psi))
        out[float(psi)] = float(np.sqrt(np.mean((result.zhat - z_true) ** 2)))
        logger.info("psi_sweep_point", psi=float(psi), rmse=out[float(psi)])
    return out
