"""Particle-filter building blocks shared by the modulation-state tracker,
the kinematics decoder and the DSMCPP baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from app.core.errors import InvalidArgumentError


@dataclass
class ParticleEnsemble:
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.values.shape[0] != self.weights.shape[0]:
            raise InvalidArgumentError("values and weights must have equal length")

    @classmethod
    def uniform(cls, values: np.ndarray) -> "ParticleEnsemble":
        values = np.asarray(values, dtype=float)
        n = values.shape[0]
        return cls(values=values, weights=np.full(n, 1.0 / n))


def normalize_log_weights(log_w: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Exponentiate after shifting by the max.

    Returns ``(weights, log_mean_likelihood, degenerate)``; when every entry is
    ``-inf`` (or NaN) the weights fall back to uniform and ``degenerate`` is set.
    """
    log_w = np.asarray(log_w, dtype=float)
    n = log_w.shape[0]
    finite = np.isfinite(log_w)
    if not np.any(finite):
        return np.full(n, 1.0 / n), -np.inf, True
    log_w = np.where(finite, log_w, -np.inf)
    total = logsumexp(log_w)
    weights = np.exp(log_w - total)
    weights /= weights.sum()
    return weights, float(total - np.log(n)), False


def effective_sample_size(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_resample(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``n`` draws: one uniform offset, evenly spaced positions."""
    cumsum = np.cumsum(np.asarray(weights, dtype=float))
    # trailing zero-weight entries share the last nonzero cumsum value exactly
    cumsum /= cumsum[-1]
    positions = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(cumsum, positions, side="right"), len(cumsum) - 1)


def weighted_mean(values: np.ndarray, weights: np.ndarray):
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.ndim == 1:
        return float(np.dot(weights, values))
    return weights @ values
