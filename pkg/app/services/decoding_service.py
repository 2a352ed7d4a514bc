"""Sequential Monte Carlo point-process (SMCPP) kinematics decoder.

Particles over ``[px, py, vx, vy]`` follow the linear-Gaussian transition
``x' = A x + N(0, Q)``; the bias component stays fixed at 1. Each particle is
weighted by the joint Poisson likelihood of all neurons' counts, computed in
the log domain, and the estimate is the weighted mean before resampling.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from app.core.config import settings
from app.core.errors import InvalidArgumentError
from app.core.logging import get_logger
from app.services.encoding_service import (
    KIN_DIM,
    KinematicsSeries,
    SpikeTrain,
    TuningModel,
    log_spike_probability,
)
from app.services.particle_service import (
    effective_sample_size,
    normalize_log_weights,
    systematic_resample,
)

logger = get_logger(__name__)

CONDITION_LIMIT = 1e10


@dataclass(frozen=True)
class KinematicsTransition:
    a: np.ndarray  # (4, 4)
    q: np.ndarray  # (4, 4), symmetric PSD
    near_singular: bool = False

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if a.shape != (KIN_DIM, KIN_DIM) or q.shape != (KIN_DIM, KIN_DIM):
            raise InvalidArgumentError("A and Q must be 4x4")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(q))):
            raise InvalidArgumentError("A and Q must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "q", q)

    def noise_factor(self) -> np.ndarray:
        """``L`` with ``L @ L.T == Q`` (eigen square root, PSD-safe)."""
        return psd_sqrt(self.q)


@dataclass
class DecodeResult:
    xhat: np.ndarray  # (n_bins, 4)
    ess: np.ndarray
    degenerate_bins: list[int] = field(default_factory=list)

    def states(self) -> np.ndarray:
        return np.column_stack([self.xhat, np.ones(self.xhat.shape[0])])


def psd_floor(cov: np.ndarray) -> np.ndarray:
    """Symmetrize and clip negative eigenvalues to zero."""
    cov = np.asarray(cov, dtype=float)
    sym = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(sym)
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.T


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def fit_kinematics_transition(kin: KinematicsSeries) -> KinematicsTransition:
    """Least squares ``x_k ~ A x_{k-1}`` over ``[px, py, vx, vy]``.

    Directions the design never excites keep identity dynamics, so a constant
    series yields ``A = I`` and ``Q = 0``.
    """
    comps = kin.components
    if comps.shape[0] < 2:
        raise InvalidArgumentError("fit_kinematics_transition needs at least 2 samples")
    prev, nxt = comps[:-1], comps[1:]
    rank = np.linalg.matrix_rank(prev)
    cond = np.linalg.cond(prev) if rank == KIN_DIM else np.inf
    near_singular = bool(rank < KIN_DIM or cond > CONDITION_LIMIT)
    if near_singular:
        logger.warning("kinematics_design_near_singular", rank=int(rank))
    a_t = np.eye(KIN_DIM) + np.linalg.pinv(prev) @ (nxt - prev)
    residual = nxt - prev @ a_t
    q = psd_floor(residual.T @ residual / residual.shape[0])
    return KinematicsTransition(a=a_t.T, q=q, near_singular=near_singular)


def joint_log_likelihood(
    states: np.ndarray,
    k: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    dn: np.ndarray,
    dt: float,
) -> np.ndarray:
    """Sum over neurons of log p(dn_n | x) for each particle.

    ``states`` is ``(n_particles, 5)``; ``k`` is ``(n_neurons, 5)``.
    """
    if k.shape[0] == 0:
        return np.zeros(states.shape[0])
    cap = np.log(settings.LAMBDA_MAX_HZ)
    log_lam = np.minimum((states @ k.T) * a[None, :] + b[None, :], cap)
    return np.sum(log_spike_probability(log_lam, dt, dn[None, :]), axis=1)


class SmcppDecoder:
    """Bin-by-bin decoder; the caller supplies the current ``K`` per neuron,
    which lets tuning estimates change between bins."""

    def __init__(
        self,
        kt: KinematicsTransition,
        n_particles: int,
        x0,
        rng: np.random.Generator,
        *,
        dt: float,
    ):
        if n_particles < 2:
            raise InvalidArgumentError("n_particles must be >= 2")
        x0 = np.asarray(x0, dtype=float).reshape(-1)[:KIN_DIM]
        self.kt = kt
        self.noise = kt.noise_factor()
        self.rng = rng
        self.dt = dt
        self.particles = np.repeat(x0[None, :], n_particles, axis=0)

    def step(
        self, dn: np.ndarray, k: np.ndarray, a: np.ndarray, b: np.ndarray
    ) -> tuple[np.ndarray, float, bool]:
        n = self.particles.shape[0]
        noise = self.rng.standard_normal((n, KIN_DIM)) @ self.noise.T
        self.particles = self.particles @ self.kt.a.T + noise
        states = np.column_stack([self.particles, np.ones(n)])
        log_lik = joint_log_likelihood(states, k, a, b, dn, self.dt)
        weights, _, degenerate = normalize_log_weights(log_lik)
        estimate = weights @ self.particles
        ess = effective_sample_size(weights)
        self.particles = self.particles[systematic_resample(weights, n, self.rng)]
        return estimate, ess, degenerate


def spike_matrix(spikes: Sequence[SpikeTrain]) -> tuple[np.ndarray, float]:
    """Stack trains into ``(n_bins, n_neurons)`` after checking alignment."""
    if not spikes:
        raise InvalidArgumentError("at least one spike train is required")
    lengths = {len(s) for s in spikes}
    widths = {s.bin_width_s for s in spikes}
    if len(lengths) != 1 or len(widths) != 1:
        raise InvalidArgumentError("spike trains must share length and bin width")
    return np.column_stack([s.counts for s in spikes]), widths.pop()


def smcpp_decode(
    spikes: Sequence[SpikeTrain],
    tunings: Sequence[TuningModel],
    kt: KinematicsTransition,
    n_particles: int,
    x0,
    rng: np.random.Generator,
    *,
    k_series: np.ndarray | None = None,
    n_bins: int | None = None,
    dt: float | None = None,
) -> DecodeResult:
    """Decode kinematics from all trains.

    ``k_series`` (``(n_neurons, n_bins, 5)``) overrides each model's static
    ``K``. With no trains, ``n_bins`` and ``dt`` must be given and the output
    is the prior prediction.
    """
    if spikes:
        counts, dt = spike_matrix(spikes)
        n_bins = counts.shape[0]
    else:
        if n_bins is None or dt is None:
            raise InvalidArgumentError("n_bins and dt are required without spike trains")
        counts = np.zeros((n_bins, 0), dtype=np.int64)
    if len(tunings) != counts.shape[1]:
        raise InvalidArgumentError("one tuning model per spike train is required")

    a = np.array([m.a for m in tunings], dtype=float)
    b = np.array([m.b for m in tunings], dtype=float)
    static_k = np.array([m.k for m in tunings], dtype=float).reshape(-1, 5)
    decoder = SmcppDecoder(kt, n_particles, x0, rng, dt=dt)

    xhat = np.empty((n_bins, KIN_DIM))
    ess = np.empty(n_bins)
    degenerate_bins: list[int] = []
    for t in range(n_bins):
        k = static_k if k_series is None else k_series[:, t, :]
        xhat[t], ess[t], degenerate = decoder.step(counts[t], k, a, b)
        if degenerate:
            degenerate_bins.append(t)
    if degenerate_bins:
        logger.warning("decoder_weights_degenerate", bins=len(degenerate_bins))
    return DecodeResult(xhat=xhat, ess=ess, degenerate_bins=degenerate_bins)
