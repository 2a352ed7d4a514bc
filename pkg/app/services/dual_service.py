"""GaPP dual structure: modulation states tracked from spikes alone feed a
per-neuron decomposer, whose direction estimates drive the kinematics decoder.

The decoder runs bin by bin; every ``update_every`` bins each neuron's ``K``
is refined on the trailing window of tracked ``z`` and decoded ``x`` and the
new estimate is used from that bin onward.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from app.core.errors import InvalidArgumentError
from app.core.logging import get_logger
from app.schemas.config_schema import SgdConfig
from app.services.decoding_service import (
    DecodeResult,
    KinematicsTransition,
    SmcppDecoder,
    spike_matrix,
)
from app.services.decomposition_service import DecompositionResult, OnlineDecomposer
from app.services.encoding_service import KIN_DIM, SpikeTrain, TuningModel

logger = get_logger(__name__)


@dataclass
class DualResult:
    decode: DecodeResult
    decompositions: list[DecompositionResult]
    k_series: np.ndarray  # (n_neurons, n_bins, 5) K in use at each bin

    @property
    def xhat(self) -> np.ndarray:
        return self.decode.xhat


def run_gapp_dual(
    spikes: Sequence[SpikeTrain],
    tunings: Sequence[TuningModel],
    zhat: np.ndarray,
    kt: KinematicsTransition,
    sgd: SgdConfig,
    n_particles: int,
    x0,
    rng: np.random.Generator,
) -> DualResult:
    """``tunings`` carry the fixed ``(a, b)`` and the initial ``K``;
    ``zhat`` is ``(n_neurons, n_bins)`` from the modulation-state trackers."""
    counts, dt = spike_matrix(spikes)
    n_bins, n_neurons = counts.shape
    zhat = np.asarray(zhat, dtype=float)
    if zhat.shape != (n_neurons, n_bins):
        raise InvalidArgumentError("zhat must be (n_neurons, n_bins)")
    if len(tunings) != n_neurons:
        raise InvalidArgumentError("one tuning model per spike train is required")

    a = np.array([m.a for m in tunings])
    b = np.array([m.b for m in tunings])
    k = np.array([m.k for m in tunings], dtype=float)
    decomposers = [
        OnlineDecomposer(m.k, sgd, learning_rate=sgd.rate_for(i))
        for i, m in enumerate(tunings)
    ]
    decoder = SmcppDecoder(kt, n_particles, x0, rng, dt=dt)

    xhat = np.empty((n_bins, KIN_DIM))
    states = np.ones((n_bins, 5))
    ess = np.empty(n_bins)
    k_series = np.empty((n_neurons, n_bins, 5))
    degenerate_bins: list[int] = []

    for t in range(n_bins):
        if decomposers and decomposers[0].due(t):
            for i, decomposer in enumerate(decomposers):
                k[i] = decomposer.update(t, zhat[i], states)
        k_series[:, t, :] = k
        xhat[t], ess[t], degenerate = decoder.step(counts[t], k, a, b)
        states[t, :KIN_DIM] = xhat[t]
        if degenerate:
            degenerate_bins.append(t)

    if degenerate_bins:
        logger.warning("decoder_weights_degenerate", bins=len(degenerate_bins))
    logger.info(
        "gapp_dual_completed",
        n_bins=n_bins,
        n_neurons=n_neurons,
        updates=len(decomposers[0].bins) if decomposers else 0,
    )
    return DualResult(
        decode=DecodeResult(xhat=xhat, ess=ess, degenerate_bins=degenerate_bins),
        decompositions=[d.result() for d in decomposers],
        k_series=k_series,
    )
