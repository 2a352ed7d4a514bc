"""Linear-nonlinear-Poisson encoding model.

A neuron's modulation state is the projection ``z = K . x`` of the kinematics
vector ``x = [px, py, vx, vy, 1]`` onto its hyper preferred direction ``K``.
The conditional intensity is ``exp(a*z + b)`` (Hz), clamped at
``LAMBDA_MAX_HZ``, and the per-bin count is Poisson with mean ``lambda*dt``.
Every other service builds on the primitives here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.ndimage import gaussian_filter1d
from scipy.special import gammaln

from app.core.config import settings
from app.core.errors import DegenerateDataError, InvalidArgumentError
from app.core.logging import get_logger

logger = get_logger(__name__)

STATE_DIM = 5
KIN_DIM = 4
NEWTON_GRAD_TOL = 1e-10
NEWTON_MAX_ITERS = 200
REGRESSION_RCOND = 0.05
REGRESSION_GRAD_TOL = 1e-8
REGRESSION_MAX_ITERS = 50
# nats per unit mean squared z shift from the least-squares start
REGRESSION_PRIOR_WEIGHT = 1000.0
# keeps exp(eta) finite inside the regression refinement
ETA_CEILING = 50.0


@dataclass(frozen=True)
class TuningModel:
    k: np.ndarray
    a: float
    b: float

    def __post_init__(self) -> None:
        k = np.asarray(self.k, dtype=float).reshape(-1)
        if k.shape != (STATE_DIM,):
            raise InvalidArgumentError(f"K must have {STATE_DIM} components")
        if not (np.all(np.isfinite(k)) and np.isfinite(self.a) and np.isfinite(self.b)):
            raise InvalidArgumentError("tuning parameters must be finite")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))

    def with_k(self, k: Sequence[float] | np.ndarray) -> "TuningModel":
        return TuningModel(k=np.asarray(k, dtype=float), a=self.a, b=self.b)


@dataclass(frozen=True)
class SpikeTrain:
    counts: np.ndarray
    bin_width_s: float

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 1:
            raise InvalidArgumentError("spike counts must be one-dimensional")
        if self.bin_width_s <= 0:
            raise InvalidArgumentError("bin_width_s must be > 0")
        if counts.size and (np.any(counts < 0) or np.any(counts != np.round(counts))):
            raise InvalidArgumentError("spike counts must be non-negative integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    def __len__(self) -> int:
        return int(self.counts.size)

    def binarized(self) -> "SpikeTrain":
        return SpikeTrain(counts=(self.counts > 0).astype(np.int64), bin_width_s=self.bin_width_s)

    def slice(self, start: int, stop: int | None = None) -> "SpikeTrain":
        return SpikeTrain(counts=self.counts[start:stop], bin_width_s=self.bin_width_s)


@dataclass(frozen=True)
class KinematicsSeries:
    """Per-bin 5-vectors ``[px, py, vx, vy, 1]``; shape ``(n_bins, 5)``."""

    states: np.ndarray
    bin_width_s: float

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[1] != STATE_DIM:
            raise InvalidArgumentError("kinematics must have shape (n_bins, 5)")
        if self.bin_width_s <= 0:
            raise InvalidArgumentError("bin_width_s must be > 0")
        if not np.all(np.isfinite(states)):
            raise InvalidArgumentError("kinematics must be finite")
        if states.size and not np.all(states[:, 4] == 1.0):
            raise InvalidArgumentError("bias component must be exactly 1")
        object.__setattr__(self, "states", states)

    @classmethod
    def from_components(
        cls, kin: np.ndarray, bin_width_s: float
    ) -> "KinematicsSeries":
        kin = np.asarray(kin, dtype=float)
        if kin.ndim != 2 or kin.shape[1] != KIN_DIM:
            raise InvalidArgumentError("kinematics components must have shape (n_bins, 4)")
        return cls(
            states=np.column_stack([kin, np.ones(kin.shape[0])]), bin_width_s=bin_width_s
        )

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @property
    def components(self) -> np.ndarray:
        return self.states[:, :KIN_DIM]

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def slice(self, start: int, stop: int | None = None) -> "KinematicsSeries":
        return KinematicsSeries(states=self.states[start:stop], bin_width_s=self.bin_width_s)


@dataclass
class NonlinearityFit:
    a: float
    b: float
    converged: bool
    iterations: int
    log_likelihood: list[float] = field(default_factory=list)


@dataclass
class RegressionWindows:
    centers: np.ndarray  # bin index of each window center
    k: np.ndarray  # (n_windows, 5)
    pinv_fallback: np.ndarray  # per-window flag
    fitted_rank: np.ndarray  # directions kept per window


def modulation_state(k: Sequence[float] | np.ndarray, x: Sequence[float] | np.ndarray):
    """``K . x``. Either argument may be an ``(n, 5)`` stack (row-wise).

    Single and stacked calls use the same summation order, so they agree
    bit for bit.
    """
    k = np.asarray(k, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(k)) and np.all(np.isfinite(x))):
        raise InvalidArgumentError("modulation_state inputs must be finite")
    z = np.sum(k * x, axis=-1)
    return float(z) if np.ndim(z) == 0 else z


def clamped_log_intensity(
    a: float,
    b: float,
    z,
    *,
    lambda_max: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Log intensity ``a*z + b`` capped at ``log(lambda_max)``; returns the
    capped values and the saturation mask."""
    cap = np.log(lambda_max or settings.LAMBDA_MAX_HZ)
    eta = a * np.asarray(z, dtype=float) + b
    saturated = eta > cap
    return np.minimum(eta, cap), saturated


def conditional_intensity(model: TuningModel, z, *, lambda_max: float | None = None):
    z_arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z_arr)):
        raise InvalidArgumentError("z must be finite")
    eta, saturated = clamped_log_intensity(model.a, model.b, z_arr, lambda_max=lambda_max)
    if np.any(saturated):
        logger.warning("intensity_saturated", count=int(np.sum(saturated)))
    lam = np.exp(eta)
    return float(lam) if lam.ndim == 0 else lam


def spike_probability(lam, dt: float, dn):
    """Poisson pmf of ``dn`` events in a bin of width ``dt`` at rate ``lam``."""
    lam_arr = np.asarray(lam, dtype=float)
    dn_arr = np.asarray(dn)
    if dt <= 0:
        raise InvalidArgumentError("dt must be > 0")
    if np.any(lam_arr < 0) or np.any(dn_arr < 0):
        raise InvalidArgumentError("lambda and dn must be non-negative")
    p = stats.poisson.pmf(dn_arr, lam_arr * dt)
    return float(p) if np.ndim(p) == 0 else p


def log_spike_probability(log_lam, dt: float, dn):
    """Log Poisson pmf evaluated from the log intensity; never underflows."""
    log_lam = np.asarray(log_lam, dtype=float)
    dn = np.asarray(dn, dtype=float)
    return dn * (log_lam + np.log(dt)) - np.exp(log_lam) * dt - gammaln(dn + 1.0)


def _poisson_log_likelihood(theta: np.ndarray, design: np.ndarray, dn: np.ndarray, dt: float) -> float:
    eta = design @ theta
    with np.errstate(over="ignore"):
        value = float(np.sum(dn * eta - np.exp(eta) * dt))
    return value if np.isfinite(value) else -np.inf


def fit_nonlinearity(
    z_series: Sequence[float] | np.ndarray,
    spikes: SpikeTrain,
    *,
    grad_tol: float = NEWTON_GRAD_TOL,
    max_iters: int = NEWTON_MAX_ITERS,
) -> NonlinearityFit:
    """Poisson maximum-likelihood ``(a, b)`` by damped Newton iteration.

    The step is halved until the log-likelihood does not decrease, so the
    recorded trace is monotone.
    """
    z = np.asarray(z_series, dtype=float)
    dn = spikes.counts.astype(float)
    dt = spikes.bin_width_s
    if z.shape != dn.shape:
        raise InvalidArgumentError("z_series and spikes must have equal length")
    if z.size < 2 or np.var(z) == 0.0:
        raise DegenerateDataError("z_series has zero variance; (a, b) not identifiable")
    if dn.sum() == 0:
        raise DegenerateDataError("spike train is empty; b diverges to -inf")

    design = np.column_stack([z, np.ones_like(z)])
    theta = np.array([0.0, np.log(dn.sum() / (dn.size * dt))])
    ll = _poisson_log_likelihood(theta, design, dn, dt)
    trace = [ll]
    converged = False
    iterations = 0

    while iterations < max_iters:
        mu = np.exp(design @ theta) * dt
        grad = design.T @ (dn - mu)
        if np.linalg.norm(grad) < grad_tol:
            converged = True
            break
        info = design.T @ (design * mu[:, None])
        step = np.linalg.solve(info, grad)

        scale = 1.0
        for _ in range(60):
            candidate = theta + scale * step
            ll_new = _poisson_log_likelihood(candidate, design, dn, dt)
            if ll_new >= ll:
                break
            scale *= 0.5
        else:
            # no ascent direction left at working precision
            break
        theta, ll = candidate, ll_new
        trace.append(ll)
        iterations += 1

    if not converged:
        mu = np.exp(design @ theta) * dt
        converged = bool(np.linalg.norm(design.T @ (dn - mu)) < grad_tol)
    if not converged:
        logger.warning(
            "nonlinearity_fit_not_converged", iterations=iterations, a=theta[0], b=theta[1]
        )
    return NonlinearityFit(
        a=float(theta[0]),
        b=float(theta[1]),
        converged=converged,
        iterations=iterations,
        log_likelihood=trace,
    )


def smoothed_spike_probability(spikes: SpikeTrain, kernel_width_s: float = 0.6) -> np.ndarray:
    """Gaussian-smoothed binary train (sigma = ``kernel_width_s``), truncated
    at 3 sigma and renormalized by the kernel mass inside the series."""
    counts = (spikes.counts > 0).astype(float)
    if counts.size == 0:
        raise InvalidArgumentError("spike train is empty")
    sigma_bins = kernel_width_s / spikes.bin_width_s
    smoothed = gaussian_filter1d(counts, sigma_bins, mode="constant", cval=0.0, truncate=3.0)
    mass = gaussian_filter1d(
        np.ones_like(counts), sigma_bins, mode="constant", cval=0.0, truncate=3.0
    )
    return smoothed / mass


def window_schedule(n_bins: int, window_bins: int, overlap_frac: float) -> list[int]:
    if window_bins < 1 or window_bins > n_bins:
        raise InvalidArgumentError(
            "window does not fit inside the series",
            details=[{"window_bins": window_bins, "n_bins": n_bins}],
        )
    step = max(1, int(round(window_bins * (1.0 - overlap_frac))))
    return list(range(0, n_bins - window_bins + 1, step))


def _binary_spike_log_likelihood(eta: np.ndarray, spiked: np.ndarray, dt: float) -> float:
    """Log-likelihood of a binarized train: a bin spikes with probability
    ``1 - exp(-lambda*dt)``."""
    with np.errstate(over="ignore", divide="ignore"):
        mu = np.exp(np.minimum(eta, ETA_CEILING)) * dt
        value = float(np.sum(np.where(spiked, np.log(-np.expm1(-mu)), -mu)))
    return value if np.isfinite(value) else -np.inf


def _refine_window(
    design: np.ndarray,
    spiked: np.ndarray,
    model: TuningModel,
    dt: float,
    basis: np.ndarray,
    theta0: np.ndarray,
) -> np.ndarray:
    """Fisher scoring for ``K = basis @ theta`` on the binary spike
    likelihood, ``a`` and ``b`` held fixed.

    A penalty of ``REGRESSION_PRIOR_WEIGHT / 2`` times the mean squared change
    in z from the starting fit keeps the estimate finite when a task phase
    has no spikes in the window.
    """
    reduced = design @ basis
    prior = REGRESSION_PRIOR_WEIGHT / reduced.shape[0] * (reduced.T @ reduced)

    def objective(theta: np.ndarray) -> float:
        shift = theta - theta0
        eta = model.a * (reduced @ theta) + model.b
        return _binary_spike_log_likelihood(eta, spiked, dt) - 0.5 * float(shift @ prior @ shift)

    theta = theta0.copy()
    value = objective(theta)
    for _ in range(REGRESSION_MAX_ITERS):
        mu = np.exp(np.minimum(model.a * (reduced @ theta) + model.b, ETA_CEILING)) * dt
        # mu / (exp(mu) - 1), tending to 1 as mu -> 0
        ratio = np.where(mu > 1e-12, mu / np.expm1(np.maximum(mu, 1e-12)), 1.0 - mu / 2.0)
        grad = model.a * reduced.T @ np.where(spiked, ratio, -mu) - prior @ (theta - theta0)
        if np.linalg.norm(grad) < REGRESSION_GRAD_TOL:
            break
        info = model.a**2 * reduced.T @ (reduced * (mu * ratio)[:, None]) + prior
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            break
        scale = 1.0
        for _ in range(60):
            candidate = theta + scale * step
            value_new = objective(candidate)
            if value_new >= value:
                break
            scale *= 0.5
        else:
            break
        theta, value = candidate, value_new
    return basis @ theta


def spike_triggered_regression(
    kin: KinematicsSeries,
    spikes: SpikeTrain,
    model: TuningModel,
    window_s: float = 100.0,
    overlap_frac: float = 0.98,
    *,
    kernel_width_s: float = 0.6,
    lambda_floor: float | None = None,
    rcond: float = REGRESSION_RCOND,
) -> RegressionWindows:
    """Windowed ``K`` whose projection reproduces the window's spiking.

    Each window starts from the least-squares fit of the smoothed rate
    mapped through the inverse nonlinearity ``(log(rate) - b) / a`` and is
    refined by Fisher scoring on the binary spike likelihood. Both steps
    work in the span of the design's singular directions above ``rcond``
    times the largest one; components outside it (per-bin velocity is
    orders of magnitude smaller than position) come out as zero.
    """
    if len(kin) != len(spikes):
        raise InvalidArgumentError("kinematics and spikes must have equal length")
    if model.a == 0.0:
        raise InvalidArgumentError("inverse nonlinearity needs a != 0")
    dt = spikes.bin_width_s
    floor = settings.LAMBDA_FLOOR_HZ if lambda_floor is None else lambda_floor

    spiked_all = spikes.counts > 0
    p = np.clip(smoothed_spike_probability(spikes, kernel_width_s), 0.0, 1.0 - 1e-12)
    rate = -np.log1p(-p) / dt
    keep = rate >= floor
    with np.errstate(divide="ignore"):
        target = (np.log(rate) - model.b) / model.a

    window_bins = int(round(window_s / dt))
    starts = window_schedule(len(kin), window_bins, overlap_frac)
    centers, estimates, fallback, ranks = [], [], [], []
    for start in starts:
        sl = slice(start, start + window_bins)
        design = kin.states[sl]
        spiked = spiked_all[sl]
        rank = int(np.linalg.matrix_rank(design))
        used_pinv = rank < STATE_DIM
        if used_pinv:
            logger.warning("regression_design_singular", window_start=start, rank=rank)

        _, sv, vt = np.linalg.svd(design, full_matrices=False)
        basis = vt[sv > rcond * sv[0]].T
        mask = keep[sl]
        if mask.any():
            theta, *_ = np.linalg.lstsq(design[mask] @ basis, target[sl][mask], rcond=None)
        else:
            theta = np.zeros(basis.shape[1])
        if 0 < spiked.sum() < spiked.size:
            k = _refine_window(design, spiked, model, dt, basis, theta)
        else:
            k = basis @ theta
        centers.append(start + window_bins // 2)
        estimates.append(k)
        fallback.append(used_pinv)
        ranks.append(basis.shape[1])

    return RegressionWindows(
        centers=np.asarray(centers, dtype=np.int64),
        k=np.asarray(estimates, dtype=float).reshape(-1, STATE_DIM),
        pinv_fallback=np.asarray(fallback, dtype=bool),
        fitted_rank=np.asarray(ranks, dtype=np.int64),
    )
