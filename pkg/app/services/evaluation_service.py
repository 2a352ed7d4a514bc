"""Goodness-of-fit, information and accuracy metrics.

Covers time-rescaling KS statistics, mutual information between spikes and
modulation state, NMSE and correlation of decoded kinematics, convergence time
after a switch, neuron ranking and paired significance tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy import stats

from app.core.errors import DegenerateDataError, InvalidArgumentError
from app.services.encoding_service import (
    KinematicsSeries,
    SpikeTrain,
    TuningModel,
    conditional_intensity,
    modulation_state,
    smoothed_spike_probability,
    spike_triggered_regression,
)

KS_BAND_COEFFICIENT = 1.36  # 95% two-sided
P_SPIKE_CEILING = 1.0 - 1e-12


@dataclass
class KsResult:
    rescaled_points: np.ndarray
    ks_stat: float
    band_halfwidth: float
    inside_band: bool

    @property
    def n(self) -> int:
        return int(self.rescaled_points.size)

    @property
    def uniform_quantiles(self) -> np.ndarray:
        return (np.arange(1, self.n + 1) - 0.5) / self.n


@dataclass
class MiSeries:
    window_centers: np.ndarray
    mi_bits: np.ndarray


@dataclass
class NmseResult:
    per_dim: np.ndarray
    combined: float


def ks_rescale(
    spikes: SpikeTrain,
    lambda_series,
    *,
    correction: Literal["random", "none"] = "random",
    rng: np.random.Generator | None = None,
) -> KsResult:
    """Time-rescaled inter-spike intervals against the uniform distribution.

    Each interval integrates ``lambda*dt`` over the bins after the previous
    spike up to and including the next one. With ``correction="random"`` the
    spike bin contributes ``-log(1 - r*p)`` with ``r ~ U(0, 1)`` and
    ``p = 1 - exp(-lambda*dt)``, which makes the rescaled intervals exactly
    exponential for a correct binned intensity.
    """
    lam = np.asarray(lambda_series, dtype=float)
    if lam.shape != spikes.counts.shape:
        raise InvalidArgumentError("lambda_series must align with the spike train")
    spike_bins = np.flatnonzero(spikes.counts > 0)
    if spike_bins.size < 2:
        raise InvalidArgumentError("ks_rescale needs at least 2 spikes")

    mass = lam * spikes.bin_width_s
    cumulative = np.concatenate([[0.0], np.cumsum(mass)])
    # sum over (s_prev, s_next]
    tau = cumulative[spike_bins[1:] + 1] - cumulative[spike_bins[:-1] + 1]
    if correction == "random":
        if rng is None:
            raise InvalidArgumentError("random correction needs an rng")
        last = mass[spike_bins[1:]]
        p = -np.expm1(-last)
        r = rng.random(last.size)
        tau = tau - last - np.log1p(-r * p)
    elif correction != "none":
        raise InvalidArgumentError(f"unknown correction: {correction}")

    u = np.sort(-np.expm1(-tau))
    n = u.size
    ks_stat = float(np.max(np.abs(u - (np.arange(1, n + 1) - 0.5) / n)))
    band = KS_BAND_COEFFICIENT / np.sqrt(n)
    return KsResult(
        rescaled_points=u, ks_stat=ks_stat, band_halfwidth=float(band), inside_band=ks_stat <= band
    )


def _binary_entropy_terms(p: np.ndarray, q: float) -> np.ndarray:
    """sum over dn in {0, 1} of p(dn) log2(p(dn) / q(dn)); zero terms drop out."""
    out = np.zeros_like(p)
    for p_dn, q_dn in ((p, q), (1.0 - p, 1.0 - q)):
        nz = p_dn > 0
        out[nz] += p_dn[nz] * np.log2(p_dn[nz] / q_dn)
    return out


def mutual_information(
    z_series,
    spikes: SpikeTrain,
    model: TuningModel,
    n_bins_z: int = 20,
    *,
    marginal: Literal["empirical", "model"] = "empirical",
) -> float:
    """Bits shared between the binary spike and the modulation state.

    ``p(z)`` is a histogram over ``n_bins_z`` equal-width bins,
    ``p(spike | z)`` comes from the tuning curve at each bin centre and
    ``p(spike)`` is the spike fraction of the train (``"empirical"``) or the
    model-implied marginal (``"model"``). A tuning curve that is flat over the
    occupied bins carries no information and gives exactly 0.
    """
    z = np.asarray(z_series, dtype=float)
    if z.size == 0:
        raise InvalidArgumentError("empty series")
    if z.shape != spikes.counts.shape:
        raise InvalidArgumentError("z_series must align with the spike train")
    lo, hi = float(z.min()), float(z.max())
    if hi == lo:
        hi = lo + 1.0
    counts, edges = np.histogram(z, bins=n_bins_z, range=(lo, hi))
    p_z = counts / counts.sum()
    centres = 0.5 * (edges[:-1] + edges[1:])
    occupied = p_z > 0

    dt = spikes.bin_width_s
    p_spike_given_z = np.minimum(conditional_intensity(model, centres) * dt, P_SPIKE_CEILING)
    if np.ptp(p_spike_given_z[occupied]) == 0.0:
        return 0.0
    if marginal == "model":
        q = float(np.dot(p_z, p_spike_given_z))
    else:
        q = float(np.mean(spikes.counts > 0))
    if q <= 0.0 or q >= 1.0:
        return 0.0
    terms = _binary_entropy_terms(p_spike_given_z, q)
    return max(float(np.dot(p_z[occupied], terms[occupied])), 0.0)


def mi_sliding(
    z_series,
    spikes: SpikeTrain,
    model: TuningModel,
    window_s: float = 50.0,
    overlap_s: float = 48.0,
    *,
    n_bins_z: int = 20,
    marginal: Literal["empirical", "model"] = "empirical",
) -> MiSeries:
    z = np.asarray(z_series, dtype=float)
    dt = spikes.bin_width_s
    window = int(round(window_s / dt))
    step = max(1, int(round((window_s - overlap_s) / dt)))
    if window > z.size:
        raise InvalidArgumentError(
            "window is longer than the data",
            details=[{"window_bins": window, "n_bins": int(z.size)}],
        )
    centres, values = [], []
    for start in range(0, z.size - window + 1, step):
        stop = start + window
        values.append(
            mutual_information(
                z[start:stop], spikes.slice(start, stop), model, n_bins_z, marginal=marginal
            )
        )
        centres.append(start + window // 2)
    return MiSeries(window_centers=np.asarray(centres, dtype=np.int64), mi_bits=np.asarray(values))


def correlation_coefficient(a, b) -> float | None:
    """Pearson correlation; ``None`` when either series is constant."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgumentError("series must have equal length")
    if a.size < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    return float(stats.pearsonr(a, b)[0])


def rank_neurons(mi_per_neuron: Sequence[float]) -> list[int]:
    """Descending by MI; ties keep ascending neuron index."""
    mi = list(mi_per_neuron)
    if not mi:
        raise InvalidArgumentError("at least one neuron is required")
    return sorted(range(len(mi)), key=lambda i: (-mi[i], i))


def nmse(true_series, est_series) -> NmseResult:
    """MSE over the variance of the true series, per column. The combined
    value averages the first two columns (positions) when present."""
    true = np.asarray(true_series, dtype=float)
    est = np.asarray(est_series, dtype=float)
    if true.shape != est.shape:
        raise InvalidArgumentError("series must be aligned")
    if true.ndim == 1:
        true, est = true[:, None], est[:, None]
    centred = true - true.mean(axis=0)
    var = np.mean(centred * centred, axis=0)
    if np.any(var == 0.0):
        raise DegenerateDataError("true series has zero variance")
    err = true - est
    per_dim = np.mean(err * err, axis=0) / var
    combined = float(np.mean(per_dim[:2]))
    return NmseResult(per_dim=per_dim, combined=combined)


def position_correlation(true_positions, est_positions) -> float:
    """Mean Pearson correlation over the position columns (constant columns
    count as 0)."""
    true = np.asarray(true_positions, dtype=float)
    est = np.asarray(est_positions, dtype=float)
    values = [correlation_coefficient(true[:, d], est[:, d]) for d in range(true.shape[1])]
    return float(np.mean([v if v is not None else 0.0 for v in values]))


def moving_average(series, window: int) -> np.ndarray:
    """Trailing mean over up to ``window`` samples."""
    x = np.asarray(series, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    start = np.maximum(idx - window, 0)
    return (csum[idx] - csum[start]) / (idx - start)


def _first_index_staying(ok: np.ndarray) -> int | None:
    bad = np.flatnonzero(~ok)
    if bad.size == 0:
        return 0
    if bad[-1] == ok.size - 1:
        return None
    return int(bad[-1] + 1)


def convergence_time(
    error_series,
    window: int = 500,
    *,
    target: float | None = None,
    fraction: float = 0.9,
) -> int | None:
    """Bins until the smoothed error stays within ``target / fraction``.

    ``target`` defaults to the mean error over the last ``window`` bins.
    ``None`` means the error never settles.
    """
    err = np.asarray(error_series, dtype=float)
    if err.size < 2 * window:
        raise InvalidArgumentError("error series is shorter than 2 * window")
    final = float(np.mean(err[-window:])) if target is None else float(target)
    smoothed = moving_average(err, window)
    return _first_index_staying(smoothed <= final / fraction)


def paired_right_tail_t_test(sample_a, sample_b) -> float:
    """p-value for mean(a - b) > 0."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidArgumentError("samples must be 1-D with equal length")
    if a.size < 3:
        raise InvalidArgumentError("at least 3 pairs are required")
    diff = a - b
    if np.ptp(diff) == 0.0:
        return 0.0 if diff[0] > 0 else 1.0
    return float(stats.ttest_rel(a, b, alternative="greater").pvalue)


def ground_truth_rate(spikes: SpikeTrain, kernel_width_s: float = 0.6) -> np.ndarray:
    return smoothed_spike_probability(spikes, kernel_width_s)


def regression_truth_z(
    kin: KinematicsSeries,
    spikes: SpikeTrain,
    model: TuningModel,
    window_s: float = 100.0,
    overlap_frac: float = 0.98,
    *,
    kernel_width_s: float = 0.6,
) -> np.ndarray:
    """Per-bin z from windowed spike-triggered K (nearest window centre)
    composed with the true kinematics."""
    windows = spike_triggered_regression(
        kin, spikes, model, window_s, overlap_frac, kernel_width_s=kernel_width_s
    )
    bins = np.arange(len(kin))
    nearest = np.abs(bins[:, None] - windows.centers[None, :]).argmin(axis=1)
    return modulation_state(windows.k[nearest], kin.states)


def rmse(a, b) -> float:
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.sqrt(np.mean(diff * diff)))


def half_plane_entry(k_hat_series, k_true) -> int | None:
    """First update index from which the position components of ``K-hat``
    keep a positive dot product with those of the true ``K``."""
    k_hat = np.asarray(k_hat_series, dtype=float).reshape(-1, 5)
    if k_hat.shape[0] == 0:
        return None
    dots = k_hat[:, :2] @ np.asarray(k_true, dtype=float)[:2]
    return _first_index_staying(dots > 0)


def bins_to_error_fraction(errors, fraction: float = 0.5) -> int | None:
    """First index from which the error stays at or below ``fraction`` of its
    initial value."""
    err = np.asarray(errors, dtype=float)
    if err.size == 0:
        return None
    return _first_index_staying(err <= fraction * err[0])
