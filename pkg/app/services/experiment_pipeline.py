"""End-to-end experiment runs: simulate a dataset, or train, track, decode,
evaluate and write every output of a tracking run."""
from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from time import perf_counter
from typing import Callable, List

import numpy as np
import pandas as pd
import pydantic
import scipy

from app.core.config import settings
from app.core.errors import ConfigError, DegenerateDataError, InvalidArgumentError
from app.core.logging import bound_context, get_logger
from app.core.seeding import component_rng
from app.schemas.config_schema import ExperimentConfig
from app.schemas.record_schema import (
    DatasetManifest,
    ExperimentRecord,
    MetricsSummary,
    StepTiming,
)
from app.services.dataset_service import (
    ensure_output_dir,
    load_dataset,
    write_dataset,
    write_json,
    write_khat,
    write_ksplot,
    write_xhat,
    write_zhat,
)
from app.services.decoding_service import KinematicsTransition, fit_kinematics_transition
from app.services.dsmcpp_service import dsmcpp_run, fit_tuning_walk
from app.services.dual_service import run_gapp_dual
from app.services.encoding_service import (
    TuningModel,
    fit_nonlinearity,
    spike_triggered_regression,
)
from app.services.metrics_service import EvaluationOutcome, MethodEstimate, evaluate_run
from app.services.simulation_service import SyntheticDataset, make_mc_bc_scenario
from app.services.tracking_service import TransitionModel, fit_transition
from app.tasks.tracking_tasks import TrackingJob, track_neurons

logger = get_logger(__name__)


@dataclass
class PipelineStepReport:
    name: str
    duration_ms: int
    detail: str | None = None


@dataclass
class TrainedModels:
    tunings: list[TuningModel]  # fitted (a, b), K at bin 0
    transitions: list[TransitionModel]
    kinematics: KinematicsTransition
    walk_cov: np.ndarray | None  # (n_neurons, 5, 5) when fitted
    train_bins: int


@dataclass
class PipelineResult:
    record: ExperimentRecord
    metrics: MetricsSummary
    steps: List[PipelineStepReport]
    total_duration_ms: int


def versions() -> dict[str, str]:
    return {
        "spiketrack": settings.VERSION,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
    }


def train_models(dataset: SyntheticDataset, cfg: ExperimentConfig) -> TrainedModels:
    """Fit everything the trackers and decoders hold fixed from the segment
    before the switch."""
    tr = cfg.training
    limit = dataset.switch_bin or dataset.n_bins
    train = min(tr.transition_bins, limit)
    if train < 2:
        raise DegenerateDataError("training segment needs at least 2 bins")

    tunings: list[TuningModel] = []
    transitions: list[TransitionModel] = []
    for i, schedule in enumerate(dataset.schedules):
        truth = schedule.model_at(0)
        z_train = dataset.truth_z[i, :train]
        a, b = truth.a, truth.b
        if tr.fit_nonlinearity:
            try:
                fit = fit_nonlinearity(z_train, dataset.spikes[i].slice(0, train))
                a, b = fit.a, fit.b
            except DegenerateDataError as exc:
                logger.warning("nonlinearity_fit_fallback", neuron_id=i, reason=exc.message)
        tunings.append(TuningModel(k=truth.k, a=a, b=b))
        transitions.append(fit_transition(z_train))

    kin_train = min(tr.kinematics_bins, limit)
    kt = fit_kinematics_transition(dataset.kinematics.slice(0, kin_train))

    walk_cov = None
    if "dsmcpp" in cfg.methods and cfg.dsmcpp.tuning_walk_cov is None:
        walk_cov = np.stack(
            [_fit_walk(dataset, i, tunings[i], train, cfg) for i in range(dataset.n_neurons)]
        )
    logger.info("training_done", train_bins=train, kinematics_bins=kin_train)
    return TrainedModels(
        tunings=tunings,
        transitions=transitions,
        kinematics=kt,
        walk_cov=walk_cov,
        train_bins=train,
    )


def _fit_walk(
    dataset: SyntheticDataset, neuron_id: int, model: TuningModel, train: int,
    cfg: ExperimentConfig,
) -> np.ndarray:
    """Random-walk covariance from spike-triggered K over short windows."""
    dt = dataset.kinematics.bin_width_s
    window_s = min(cfg.dsmcpp.walk_window_s, train * dt / 2)
    try:
        windows = spike_triggered_regression(
            dataset.kinematics.slice(0, train),
            dataset.spikes[neuron_id].slice(0, train),
            model,
            window_s,
            cfg.training.regression_overlap,
            kernel_width_s=cfg.training.kernel_width_s,
        )
    except InvalidArgumentError as exc:
        logger.warning("tuning_walk_unfitted", neuron_id=neuron_id, reason=exc.message)
        return np.zeros((5, 5))
    if windows.centers.size < 2:
        logger.warning("tuning_walk_unfitted", neuron_id=neuron_id, reason="single window")
        return np.zeros((5, 5))
    step = int(windows.centers[1] - windows.centers[0])
    return fit_tuning_walk(windows.k, bins_per_step=step)


def _x0(dataset: SyntheticDataset) -> np.ndarray:
    return dataset.kinematics.components[0]


def run_gapp(
    dataset: SyntheticDataset, trained: TrainedModels, cfg: ExperimentConfig, *, workers: int = 1
) -> MethodEstimate:
    seed = cfg.gapp.rng_seed if cfg.gapp.rng_seed is not None else cfg.seed
    jobs = [
        TrackingJob(
            neuron_id=i,
            spikes=dataset.spikes[i],
            model=trained.tunings[i],
            transition=trained.transitions[i],
            z0=float(np.clip(dataset.truth_z[i, 0], cfg.gapp.z_min, cfg.gapp.z_max)),
        )
        for i in range(dataset.n_neurons)
    ]
    zhat, ess, xhat, k_series = [], [], [], []
    decompositions = []
    for r in range(cfg.n_mc_runs):
        with bound_context(method="gapp", mc_run=r):
            tracks = track_neurons(jobs, cfg.gapp, seed, run=r, workers=workers)
            z_run = np.vstack([t.zhat for t in tracks])
            dual = run_gapp_dual(
                dataset.spikes,
                trained.tunings,
                z_run,
                trained.kinematics,
                cfg.sgd,
                cfg.decoder.n_particles,
                _x0(dataset),
                component_rng(seed, f"gapp/decoder/run{r}"),
            )
        zhat.append(z_run)
        ess.append(np.vstack([t.ess for t in tracks]))
        xhat.append(dual.xhat)
        k_series.append(dual.k_series)
        decompositions.append(dual.decompositions)

    z_mean = np.mean(zhat, axis=0)
    k_tables = []
    for i in range(dataset.n_neurons):
        runs = [d[i] for d in decompositions]
        k_tables.append(
            (
                runs[0].bins,
                np.mean([d.k for d in runs], axis=0),
                np.mean([d.final_cost for d in runs], axis=0),
                np.rint(np.mean([d.iterations for d in runs], axis=0)).astype(np.int64),
            )
        )
    return MethodEstimate(
        method="gapp",
        tunings=trained.tunings,
        zhat=z_mean,
        xhat=np.mean(xhat, axis=0),
        k_series=np.mean(k_series, axis=0),
        ess=np.mean(ess, axis=0),
        range_violation=(z_mean < cfg.gapp.z_min) | (z_mean > cfg.gapp.z_max),
        k_tables=k_tables,
    )


def run_dsmcpp(
    dataset: SyntheticDataset, trained: TrainedModels, cfg: ExperimentConfig, *, workers: int = 1
) -> MethodEstimate:
    seed = cfg.dsmcpp.rng_seed if cfg.dsmcpp.rng_seed is not None else cfg.seed
    k0 = np.array([m.k for m in trained.tunings])
    ab = [(m.a, m.b) for m in trained.tunings]
    zhat, xhat, khat, ess = [], [], [], []
    for r in range(cfg.n_mc_runs):
        with bound_context(method="dsmcpp", mc_run=r):
            result = dsmcpp_run(
                dataset.spikes,
                ab,
                trained.kinematics,
                cfg.dsmcpp,
                k0,
                _x0(dataset),
                component_rng(seed, f"dsmcpp/run{r}"),
                walk_cov=trained.walk_cov,
            )
        zhat.append(result.zhat)
        xhat.append(result.xhat)
        khat.append(result.khat)
        ess.append(result.tuning_ess)

    z_mean = np.mean(zhat, axis=0)
    k_mean = np.mean(khat, axis=0)
    bins = np.arange(dataset.n_bins)
    return MethodEstimate(
        method="dsmcpp",
        tunings=trained.tunings,
        zhat=z_mean,
        xhat=np.mean(xhat, axis=0),
        k_series=k_mean,
        ess=np.mean(ess, axis=0),
        range_violation=(z_mean < cfg.gapp.z_min) | (z_mean > cfg.gapp.z_max),
        k_tables=[(bins, k_mean[i], None, None) for i in range(dataset.n_neurons)],
    )


MethodRunner = Callable[..., MethodEstimate]


class ExperimentPipeline:
    """
    Orchestrates one tracking run:
    Train -> GaPP and/or DSMCPP -> Evaluate -> Write.
    Step timings go into the experiment record.
    """

    def __init__(
        self,
        cfg: ExperimentConfig,
        *,
        run_id: str,
        runners: dict[str, MethodRunner] | None = None,
    ):
        self.cfg = cfg
        self.run_id = run_id
        self.runners = runners or {"gapp": run_gapp, "dsmcpp": run_dsmcpp}

    def run(self, dataset: SyntheticDataset, out_dir: str | Path, *, dataset_dir: str | None = None) -> PipelineResult:
        start_clock = perf_counter()
        steps: List[PipelineStepReport] = []
        out = ensure_output_dir(out_dir)

        step_start = perf_counter()
        trained = train_models(dataset, self.cfg)
        steps.append(
            PipelineStepReport(
                name="train",
                duration_ms=self._elapsed_ms(step_start),
                detail=f"{trained.train_bins} training bins",
            )
        )

        estimates: list[MethodEstimate] = []
        for method in self.cfg.methods:
            step_start = perf_counter()
            estimates.append(
                self.runners[method](dataset, trained, self.cfg, workers=self.cfg.workers)
            )
            steps.append(
                PipelineStepReport(
                    name=method,
                    duration_ms=self._elapsed_ms(step_start),
                    detail=f"{self.cfg.n_mc_runs} run(s), {dataset.n_neurons} neurons",
                )
            )

        step_start = perf_counter()
        outcome = evaluate_run(dataset, estimates, trained.kinematics, self.cfg)
        steps.append(
            PipelineStepReport(name="evaluate", duration_ms=self._elapsed_ms(step_start))
        )

        step_start = perf_counter()
        outputs = self._write_outputs(out, estimates, outcome)
        steps.append(
            PipelineStepReport(
                name="write",
                duration_ms=self._elapsed_ms(step_start),
                detail=f"{sum(len(v) for v in outputs.values())} files",
            )
        )

        record = ExperimentRecord(
            run_id=self.run_id,
            command="track",
            created_at=datetime.now(timezone.utc).isoformat(),
            dataset_dir=dataset_dir,
            resolved_config=self.cfg.model_dump(mode="json"),
            versions=versions(),
            outputs=outputs,
            metrics=outcome.summary,
            timings=[StepTiming(name=s.name, duration_ms=s.duration_ms, detail=s.detail) for s in steps],
        )
        write_json(record, out / "record.json")
        total_duration_ms = self._elapsed_ms(start_clock)
        logger.info("track_completed", out=str(out), duration_ms=total_duration_ms)
        return PipelineResult(
            record=record, metrics=outcome.summary, steps=steps, total_duration_ms=total_duration_ms
        )

    def _write_outputs(
        self, out: Path, estimates: list[MethodEstimate], outcome: EvaluationOutcome
    ) -> dict[str, list[str]]:
        outputs: dict[str, list[str]] = {}
        for est in estimates:
            method_dir = ensure_output_dir(out / est.method)
            files: list[Path] = []
            for i in range(est.zhat.shape[0]):
                files.append(
                    write_zhat(
                        method_dir / f"zhat_n{i}.csv", est.zhat[i], est.ess[i], est.range_violation[i]
                    )
                )
                bins, k, final_cost, iters = est.k_tables[i]
                files.append(write_khat(method_dir / f"khat_n{i}.csv", bins, k, final_cost, iters))
                ks = outcome.ks.get((est.method, i))
                if ks is not None:
                    files.append(write_ksplot(method_dir / f"ksplot_n{i}.csv", ks))
            files.append(write_xhat(method_dir / "xhat.csv", est.xhat))
            outputs[est.method] = [str(p.relative_to(out)) for p in files]
        write_json(outcome.summary, out / "metrics.json")
        outputs["evaluation"] = ["metrics.json"]
        return outputs

    @staticmethod
    def _elapsed_ms(start: float) -> int:
        return int((perf_counter() - start) * 1000)


def cmd_simulate(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> DatasetManifest:
    out = Path(out_dir or cfg.output_dir)
    dataset = make_mc_bc_scenario(cfg.scenario, cfg.seed)
    manifest = write_dataset(dataset, out, scenario=cfg.scenario.model_dump(mode="json"))
    switch = "none" if manifest.switch_bin is None else str(manifest.switch_bin)
    print(
        f"simulated {manifest.n_neurons} neurons x {manifest.n_bins} bins, "
        f"switch bin {switch} -> {out}"
    )
    return manifest


def cmd_track(
    cfg: ExperimentConfig,
    dataset_dir: str | Path | None,
    *,
    run_id: str,
    out_dir: str | Path | None = None,
) -> PipelineResult:
    source = dataset_dir or cfg.scenario.dataset_path
    if source is None:
        raise ConfigError("track needs --dataset or scenario.dataset_path")
    manifest, dataset = load_dataset(source)
    if not np.isclose(manifest.bin_width_s, cfg.scenario.bin_width_s, rtol=0.0, atol=1e-12):
        raise ConfigError(
            "dataset bin width differs from the configured bin width",
            details=[
                {"dataset_bin_width_s": manifest.bin_width_s},
                {"config_bin_width_s": cfg.scenario.bin_width_s},
            ],
        )
    out = Path(out_dir or cfg.output_dir)
    pipeline = ExperimentPipeline(cfg, run_id=run_id)
    result = pipeline.run(dataset, out, dataset_dir=str(source))
    for method, metrics in result.metrics.methods.items():
        print(
            f"{method}: nmse={metrics.nmse} convergence_bins={metrics.convergence_bins} "
            f"zhat_rmse={metrics.zhat_rmse_mean:.4f}"
        )
    print(f"outputs -> {out}")
    return result
