"""Per-neuron tracking jobs fanned out over a thread pool.

Each job owns its RNG stream (derived from the run seed, the neuron id and the
Monte Carlo run index), so results do not depend on the number of workers or
completion order.
"""
from __future__ import annotations

import contextvars
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from app.core.logging import bound_context, get_logger
from app.core.seeding import component_rng
from app.schemas.config_schema import GappConfig
from app.services.encoding_service import SpikeTrain, TuningModel
from app.services.tracking_service import TrackResult, TransitionModel, track

logger = get_logger(__name__)


@dataclass(frozen=True)
class TrackingJob:
    neuron_id: int
    spikes: SpikeTrain
    model: TuningModel
    transition: TransitionModel
    z0: float


def tracker_component(neuron_id: int, run: int, prefix: str = "gapp/tracker") -> str:
    return f"{prefix}/n{neuron_id}/run{run}"


def run_tracking_job(job: TrackingJob, cfg: GappConfig, seed: int, *, run: int = 0) -> TrackResult:
    with bound_context(neuron_id=job.neuron_id):
        logger.info("task_track_neuron_start", bins=len(job.spikes), run=run)
        rng = component_rng(seed, tracker_component(job.neuron_id, run))
        result = track(job.spikes, job.model, job.transition, cfg, job.z0, rng)
        logger.info(
            "task_track_neuron_done",
            range_violations=int(result.range_violation.sum()),
            degenerate_bins=len(result.degenerate_bins),
        )
        return result


def track_neurons(
    jobs: Sequence[TrackingJob],
    cfg: GappConfig,
    seed: int,
    *,
    run: int = 0,
    workers: int = 1,
) -> list[TrackResult]:
    """Results in job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [run_tracking_job(job, cfg, seed, run=run) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # each worker inherits the caller's bound log context
        futures = [
            pool.submit(contextvars.copy_context().run, run_tracking_job, job, cfg, seed, run=run)
            for job in jobs
        ]
        return [f.result() for f in futures]
