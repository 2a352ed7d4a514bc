"""Recovers the time-varying hyper preferred direction ``K`` from tracked
modulation states and decoded kinematics.

Every ``update_every`` bins the trailing ``history_len`` bins form one batch
and ``K`` is refined by gradient descent on the mean squared error
``J = 1/(2T) * sum((z - K.x)^2)``, starting from the previous estimate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from app.core.errors import InvalidArgumentError
from app.core.logging import get_logger
from app.schemas.config_schema import SgdConfig

logger = get_logger(__name__)


@dataclass
class DirectionUpdate:
    k: np.ndarray
    cost_trace: list[float]
    iterations: int
    learning_rate: float
    halvings: int = 0
    converged: bool = True

    @property
    def final_cost(self) -> float:
        return self.cost_trace[-1]


@dataclass
class DecompositionResult:
    bins: np.ndarray  # update times; K applies from this bin onward
    k: np.ndarray  # (n_updates, 5)
    final_cost: np.ndarray
    iterations: np.ndarray
    halvings: list[int] = field(default_factory=list)

    def k_at_bins(self, k0: np.ndarray, n_bins: int) -> np.ndarray:
        """Piecewise-constant per-bin expansion starting from ``k0``."""
        out = np.repeat(np.asarray(k0, dtype=float)[None, :], n_bins, axis=0)
        for t, k in zip(self.bins, self.k):
            out[int(t):] = k
        return out


def _check_batch(z_hat: np.ndarray, x_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z_hat, dtype=float).reshape(-1)
    x = np.asarray(x_hat, dtype=float)
    if x.ndim != 2 or x.shape[0] != z.shape[0]:
        raise InvalidArgumentError("z_hat and x_hat must have equal length")
    if z.size == 0:
        raise InvalidArgumentError("empty history")
    return z, x


def cost(z_hat, x_hat, k) -> float:
    z, x = _check_batch(z_hat, x_hat)
    residual = z - x @ np.asarray(k, dtype=float)
    return float(residual @ residual / (2.0 * z.size))


def gradient(z_hat, x_hat, k) -> np.ndarray:
    """dJ/dK = -(1/T) * sum((z - K.x) * x)."""
    z, x = _check_batch(z_hat, x_hat)
    residual = z - x @ np.asarray(k, dtype=float)
    return -(x.T @ residual) / z.size


class _QuadraticBatch:
    """Second moments of a batch; cost and gradient in O(dim^2)."""

    def __init__(self, z: np.ndarray, x: np.ndarray):
        t = z.size
        self.gram = x.T @ x / t
        self.cross = x.T @ z / t
        self.const = float(z @ z) / (2.0 * t)

    def cost(self, k: np.ndarray) -> float:
        return self.const - float(self.cross @ k) + 0.5 * float(k @ self.gram @ k)

    def gradient(self, k: np.ndarray) -> np.ndarray:
        return self.gram @ k - self.cross


def update_direction(
    k_prev,
    z_batch,
    x_batch,
    cfg: SgdConfig,
    *,
    learning_rate: float | None = None,
) -> DirectionUpdate:
    """Gradient descent from ``k_prev`` until the cost changes by less than
    ``stop_threshold`` or ``max_iters`` steps have been taken.

    A step that would change the cost by less than the threshold is not
    applied, so a batch already at its optimum takes zero iterations. After
    ``divergence_patience`` consecutive cost increases the learning rate is
    halved and descent restarts from the best iterate.
    """
    z, x = _check_batch(z_batch, x_batch)
    if z.size > cfg.history_len:
        raise InvalidArgumentError("batch is longer than history_len")
    batch = _QuadraticBatch(z, x)
    lr = cfg.learning_rate if learning_rate is None else learning_rate

    k = np.asarray(k_prev, dtype=float).copy()
    j = batch.cost(k)
    trace = [j]
    best_k, best_j = k.copy(), j
    rising = 0
    halvings = 0
    iterations = 0
    converged = False

    while iterations < cfg.max_iters:
        k_next = k - lr * batch.gradient(k)
        j_next = batch.cost(k_next)
        if abs(j - j_next) < cfg.stop_threshold:
            converged = True
            break
        iterations += 1
        if j_next > j:
            rising += 1
        else:
            rising = 0
        k, j = k_next, j_next
        if j < best_j:
            best_k, best_j = k.copy(), j
        if rising >= cfg.divergence_patience:
            lr *= 0.5
            halvings += 1
            rising = 0
            k, j = best_k.copy(), best_j
            logger.warning("sgd_step_halved", learning_rate=lr, iteration=iterations)
        trace.append(j)

    if not converged:
        logger.warning("sgd_max_iters_reached", iterations=iterations, cost=j)
    return DirectionUpdate(
        k=k,
        cost_trace=trace,
        iterations=iterations,
        learning_rate=lr,
        halvings=halvings,
        converged=converged,
    )


class OnlineDecomposer:
    """Incremental form of :func:`run_decomposition` for interleaving with a
    decoder that produces ``x_hat`` bin by bin."""

    def __init__(self, k0, cfg: SgdConfig, *, learning_rate: float | None = None):
        self.cfg = cfg
        self.learning_rate = cfg.learning_rate if learning_rate is None else learning_rate
        self.k = np.asarray(k0, dtype=float).copy()
        self.bins: list[int] = []
        self.history: list[np.ndarray] = []
        self.final_cost: list[float] = []
        self.iterations: list[int] = []
        self.halvings: list[int] = []

    def due(self, t: int) -> bool:
        return t > 0 and t % self.cfg.update_every == 0

    def update(self, t: int, z_hat: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
        """Refine ``K`` on bins ``[max(0, t - T), t)``."""
        start = max(0, t - self.cfg.history_len)
        result = update_direction(
            self.k, z_hat[start:t], x_hat[start:t], self.cfg,
            learning_rate=self.learning_rate,
        )
        self.learning_rate = result.learning_rate
        self.k = result.k
        self.bins.append(t)
        self.history.append(result.k.copy())
        self.final_cost.append(result.final_cost)
        self.iterations.append(result.iterations)
        self.halvings.append(result.halvings)
        return self.k

    def result(self) -> DecompositionResult:
        return DecompositionResult(
            bins=np.asarray(self.bins, dtype=np.int64),
            k=np.asarray(self.history, dtype=float).reshape(-1, 5),
            final_cost=np.asarray(self.final_cost, dtype=float),
            iterations=np.asarray(self.iterations, dtype=np.int64),
            halvings=list(self.halvings),
        )


def run_decomposition(
    zhat_series,
    xhat_series,
    cfg: SgdConfig,
    k0,
    *,
    learning_rate: float | None = None,
) -> DecompositionResult:
    z = np.asarray(zhat_series, dtype=float).reshape(-1)
    x = np.asarray(xhat_series, dtype=float).reshape(-1, 5)
    if x.shape[0] != z.shape[0]:
        raise InvalidArgumentError("zhat and xhat series must have equal length")
    decomposer = OnlineDecomposer(k0, cfg, learning_rate=learning_rate)
    for t in range(cfg.update_every, z.size + 1, cfg.update_every):
        decomposer.update(t, z, x)
    return decomposer.result()
