"""Assembles the per-run metrics summary from estimated and true series.

All windows are anchored at the switch bin when the dataset has one and at
bin 0 otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from app.core.errors import DegenerateDataError, InvalidArgumentError
from app.core.logging import get_logger
from app.core.seeding import component_rng
from app.schemas.config_schema import ExperimentConfig
from app.schemas.record_schema import (
    KsSummary,
    MethodMetrics,
    MetricsSummary,
    NeuronMetrics,
    SubsetMetrics,
)
from app.services.decoding_service import KinematicsTransition, smcpp_decode
from app.services.encoding_service import TuningModel, conditional_intensity
from app.services.evaluation_service import (
    KsResult,
    bins_to_error_fraction,
    convergence_time,
    correlation_coefficient,
    half_plane_entry,
    ks_rescale,
    mi_sliding,
    mutual_information,
    nmse,
    paired_right_tail_t_test,
    position_correlation,
    rank_neurons,
    regression_truth_z,
    rmse,
)
from app.services.simulation_service import SyntheticDataset

logger = get_logger(__name__)


@dataclass
class MethodEstimate:
    """Run-averaged output of one method."""

    method: str
    tunings: list[TuningModel]  # fixed (a, b) used by the method
    zhat: np.ndarray  # (n_neurons, n_bins)
    xhat: np.ndarray  # (n_bins, 4)
    k_series: np.ndarray  # (n_neurons, n_bins, 5)
    ess: np.ndarray  # (n_neurons, n_bins)
    range_violation: np.ndarray  # (n_neurons, n_bins) bool
    # per neuron: (bins, k, final_cost, iters) rows for khat_n<id>.csv
    k_tables: list[tuple] = field(default_factory=list)


@dataclass
class EvaluationOutcome:
    summary: MetricsSummary
    ks: dict[tuple[str, int], KsResult]


@dataclass(frozen=True)
class EvaluationWindow:
    start: int
    stop: int
    zhat_stop: int
    nmse_stop: int


def evaluation_window(dataset: SyntheticDataset, cfg: ExperimentConfig) -> EvaluationWindow:
    n_bins = dataset.n_bins
    start = dataset.switch_bin if dataset.switch_bin is not None else 0
    ev = cfg.evaluation
    if dataset.switch_bin is None:
        zhat_stop = n_bins
    else:
        zhat_stop = min(n_bins, start + ev.zhat_rmse_bins)
    return EvaluationWindow(
        start=start,
        stop=n_bins,
        zhat_stop=zhat_stop,
        nmse_stop=min(n_bins, start + ev.nmse_bins),
    )


def _ks_summary(
    dataset: SyntheticDataset,
    est: MethodEstimate,
    neuron_id: int,
    cfg: ExperimentConfig,
) -> KsResult | None:
    spikes = dataset.spikes[neuron_id]
    if int(np.count_nonzero(spikes.counts)) < 2:
        return None
    lam = conditional_intensity(est.tunings[neuron_id], est.zhat[neuron_id])
    rng = component_rng(cfg.seed, f"evaluation/ks/{est.method}/n{neuron_id}")
    return ks_rescale(spikes, lam, correction=cfg.evaluation.ks_correction, rng=rng)


def _mi_curve_cc(z_est, z_true, spikes, model, cfg: ExperimentConfig) -> float | None:
    ev = cfg.evaluation
    try:
        est_curve = mi_sliding(
            z_est, spikes, model, ev.mi_window_s, ev.mi_overlap_s, n_bins_z=ev.n_bins_z
        )
        true_curve = mi_sliding(
            z_true, spikes, model, ev.mi_window_s, ev.mi_overlap_s, n_bins_z=ev.n_bins_z
        )
    except InvalidArgumentError:
        return None
    if est_curve.mi_bits.size < 2:
        return None
    return correlation_coefficient(est_curve.mi_bits, true_curve.mi_bits)


def _regression_mi(
    dataset: SyntheticDataset, neuron_id: int, model: TuningModel, window: EvaluationWindow,
    cfg: ExperimentConfig,
) -> float | None:
    tr = cfg.training
    spikes = dataset.spikes[neuron_id]
    try:
        z_reg = regression_truth_z(
            dataset.kinematics,
            spikes,
            model,
            tr.regression_window_s,
            tr.regression_overlap,
            kernel_width_s=tr.kernel_width_s,
        )
    except InvalidArgumentError as exc:
        logger.warning("regression_truth_skipped", neuron_id=neuron_id, reason=exc.message)
        return None
    sl = slice(window.start, window.stop)
    return mutual_information(
        z_reg[sl], spikes.slice(window.start, window.stop), model, cfg.evaluation.n_bins_z
    )


def _update_bins(n_bins: int, cfg: ExperimentConfig, start: int) -> np.ndarray:
    every = cfg.sgd.update_every
    bins = np.arange(every, n_bins, every)
    return bins[bins >= start]


def _position_errors(dataset: SyntheticDataset, est: MethodEstimate, window: EvaluationWindow):
    true_pos = dataset.kinematics.positions[window.start:window.stop]
    diff = est.xhat[window.start:window.stop, :2] - true_pos
    return np.sum(diff * diff, axis=1)


def _block_mse(errors: np.ndarray, block: int) -> np.ndarray:
    n_blocks = errors.size // block
    return errors[: n_blocks * block].reshape(n_blocks, block).mean(axis=1)


def _subset_metrics(
    dataset: SyntheticDataset,
    kt: KinematicsTransition,
    neuron_ids: Sequence[int],
    window: EvaluationWindow,
    cfg: ExperimentConfig,
) -> SubsetMetrics | None:
    start, stop = window.start, window.nmse_stop
    if stop - start < 2:
        return None
    kin = dataset.kinematics
    truth_models = [s.model_at(start) for s in dataset.schedules]
    spikes = [s.slice(start, stop) for s in dataset.spikes]
    x0 = kin.components[start]
    true_pos = kin.positions[start:stop]

    def decode(ids: Sequence[int]) -> float:
        rng = component_rng(cfg.seed, f"evaluation/subset/{len(ids)}")
        result = smcpp_decode(
            [spikes[i] for i in ids],
            [truth_models[i] for i in ids],
            kt,
            cfg.decoder.n_particles,
            x0,
            rng,
        )
        return position_correlation(true_pos, result.xhat[:, :2])

    cc_all = decode(range(dataset.n_neurons))
    cc_subset = decode(sorted(neuron_ids))
    ratio = cc_subset / cc_all if cc_all != 0.0 else None
    logger.info("subset_decoding_done", cc_all=cc_all, cc_subset=cc_subset)
    return SubsetMetrics(
        neuron_ids=sorted(int(i) for i in neuron_ids),
        cc_all=cc_all,
        cc_subset=cc_subset,
        performance_ratio=ratio,
    )


def evaluate_run(
    dataset: SyntheticDataset,
    estimates: Sequence[MethodEstimate],
    kt: KinematicsTransition,
    cfg: ExperimentConfig,
) -> EvaluationOutcome:
    n_neurons, n_bins = dataset.n_neurons, dataset.n_bins
    window = evaluation_window(dataset, cfg)
    ev = cfg.evaluation
    post = slice(window.start, window.stop)
    zslice = slice(window.start, window.zhat_stop)
    top_k = min(ev.subset_size, n_neurons)

    neurons: list[NeuronMetrics] = []
    ks_results: dict[tuple[str, int], KsResult] = {}
    mi_truth: list[float] = []
    mi_est: dict[str, list[float]] = {e.method: [] for e in estimates}

    for i in range(n_neurons):
        spikes = dataset.spikes[i]
        post_spikes = spikes.slice(window.start, window.stop)
        truth_model = dataset.schedules[i].model_at(window.start)
        switching = dataset.switching[i] if dataset.switching else None
        entry = NeuronMetrics(
            neuron_id=i,
            switching=switching,
            mi_truth=mutual_information(
                dataset.truth_z[i, post], post_spikes, truth_model, ev.n_bins_z
            ),
            mi_regression=_regression_mi(dataset, i, truth_model, window, cfg),
        )
        mi_truth.append(entry.mi_truth)
        k_true = dataset.truth_k(i)[window.start]

        for est in estimates:
            model = est.tunings[i]
            mi = mutual_information(est.zhat[i, post], post_spikes, model, ev.n_bins_z)
            entry.mi[est.method] = mi
            mi_est[est.method].append(mi)
            entry.mi_curve_cc[est.method] = _mi_curve_cc(
                est.zhat[i, post], dataset.truth_z[i, post], post_spikes, model, cfg
            )
            entry.zhat_rmse[est.method] = rmse(est.zhat[i, zslice], dataset.truth_z[i, zslice])

            ks = _ks_summary(dataset, est, i, cfg)
            if ks is not None:
                ks_results[(est.method, i)] = ks
                entry.ks[est.method] = KsSummary(
                    ks_stat=ks.ks_stat,
                    band_halfwidth=ks.band_halfwidth,
                    inside_band=ks.inside_band,
                    n_intervals=ks.n,
                )
            else:
                entry.ks[est.method] = None

            if switching and dataset.switch_bin is not None:
                bins = _update_bins(n_bins, cfg, window.start)
                entry.half_plane_updates[est.method] = half_plane_entry(
                    est.k_series[i, bins], k_true
                )
        neurons.append(entry)

    truth_top = sorted(rank_neurons(mi_truth)[:top_k]) if n_neurons else []
    methods: dict[str, MethodMetrics] = {}
    errors: dict[str, np.ndarray] = {}
    for est in estimates:
        ranked = sorted(rank_neurons(mi_est[est.method])[:top_k]) if n_neurons else []
        metrics = MethodMetrics(
            zhat_rmse_mean=float(np.mean([n.zhat_rmse[est.method] for n in neurons]))
            if neurons
            else 0.0,
            top_k_neurons=ranked,
            top_k_match=ranked == truth_top,
        )
        nm_slice = slice(window.start, window.nmse_stop)
        try:
            result = nmse(dataset.kinematics.positions[nm_slice], est.xhat[nm_slice, :2])
            metrics.nmse_per_dim = [float(v) for v in result.per_dim]
            metrics.nmse = result.combined
        except (DegenerateDataError, InvalidArgumentError) as exc:
            logger.warning("nmse_skipped", method=est.method, reason=exc.message)
        metrics.k_error_half_bins = _k_error_half_bins(dataset, est, window)
        errors[est.method] = _position_errors(dataset, est, window)
        methods[est.method] = metrics

    target = _convergence(errors, methods, cfg)
    p_value = None
    if {"gapp", "dsmcpp"} <= set(errors):
        nm_len = window.nmse_stop - window.start
        gapp_blocks = _block_mse(errors["gapp"][:nm_len], ev.convergence_window)
        dsmcpp_blocks = _block_mse(errors["dsmcpp"][:nm_len], ev.convergence_window)
        if gapp_blocks.size >= 3:
            p_value = paired_right_tail_t_test(dsmcpp_blocks, gapp_blocks)

    subset = None
    if estimates and n_neurons:
        primary = estimates[0].method
        subset = _subset_metrics(dataset, kt, methods[primary].top_k_neurons, window, cfg)

    summary = MetricsSummary(
        switch_bin=dataset.switch_bin,
        eval_start=window.start,
        eval_end=window.stop,
        post_switch_bins=window.stop - window.start,
        convergence_target=target,
        truth_top_k=truth_top,
        methods=methods,
        neurons=neurons,
        subset=subset,
        nmse_p_value=p_value,
    )
    return EvaluationOutcome(summary=summary, ks=ks_results)


def _k_error_half_bins(
    dataset: SyntheticDataset, est: MethodEstimate, window: EvaluationWindow
) -> int | None:
    ids = [i for i, s in enumerate(dataset.switching) if s]
    if dataset.switch_bin is None or not ids:
        return None
    post = slice(window.start, window.stop)
    errors = np.mean(
        [
            np.linalg.norm(est.k_series[i, post] - dataset.truth_k(i)[post], axis=1)
            for i in ids
        ],
        axis=0,
    )
    return bins_to_error_fraction(errors, 0.5)


def _convergence(
    errors: dict[str, np.ndarray], methods: dict[str, MethodMetrics], cfg: ExperimentConfig
) -> float | None:
    """Convergence against the best final error across methods."""
    window = cfg.evaluation.convergence_window
    if not errors or min(e.size for e in errors.values()) < 2 * window:
        logger.warning("convergence_skipped", window=window)
        return None
    target = min(float(np.mean(e[-window:])) for e in errors.values())
    for method, err in errors.items():
        methods[method].convergence_bins = convergence_time(err, window, target=target)
    return target
