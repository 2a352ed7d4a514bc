"""Experiment configuration models.

Every model forbids unknown keys so a typo in a config file fails validation
instead of being silently ignored.
"""
from __future__ import annotations

import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", ser_json_inf_nan="constants")


class TaskConfig(StrictModel):
    """Two-lever task timing. Durations are in bins."""

    n_trials: int = Field(40, ge=1)
    pre_cue_bins: int = Field(50, ge=0)
    # press phase: movement to the lever plus the hold
    trial_len_bins: int = Field(100, gt=0)
    inter_trial_bins: tuple[int, int] = (300, 600)
    rest_label: tuple[float, float] = (0.0, 0.0)
    high_label: tuple[float, float] = (1.0, 1.0)
    low_label: tuple[float, float] = (1.0, -1.0)
    ramp_half_width_s: float = Field(0.25, gt=0)
    # logistic slope per bin; overrides ramp_half_width_s when set (inf = step)
    sigmoid_steepness: Optional[float] = Field(None, gt=0)
    rng_seed: Optional[int] = Field(None, ge=0)

    @field_validator("inter_trial_bins")
    @classmethod
    def _validate_inter_trial(cls, v: tuple[int, int]) -> tuple[int, int]:
        lo, hi = v
        if lo < 0 or hi < lo:
            raise ValueError("inter_trial_bins must satisfy 0 <= low <= high")
        return v

    def steepness(self, bin_width_s: float) -> float:
        if self.sigmoid_steepness is not None:
            return self.sigmoid_steepness
        half_width_bins = self.ramp_half_width_s / bin_width_s
        # 10%-90% rise spans two half-widths
        return math.log(9.0) / half_width_bins


class SwitchSpec(StrictModel):
    """Tuning change applied to one neuron at the MC->BC boundary."""

    kind: Literal["static", "flip", "rotate", "explicit"] = "static"
    angle_deg: float = 0.0
    depth_scale: float = Field(1.0, gt=0)
    k: Optional[list[float]] = None
    a: Optional[float] = None
    b: Optional[float] = None

    @model_validator(mode="after")
    def _validate_explicit(self):
        if self.kind == "explicit":
            if self.k is None or len(self.k) != 5:
                raise ValueError("explicit switch requires a 5-component k")
        elif self.k is not None:
            raise ValueError("k is only allowed for explicit switches")
        return self


class ScenarioConfig(StrictModel):
    n_neurons: int = Field(16, ge=1)
    mc_bins: int = Field(10000, ge=1)
    bc_bins: int = Field(10000, ge=0)
    n_switching: int = Field(6, ge=0)
    switch_kind: Literal["flip", "rotate"] = "flip"
    switch_angle_deg: float = 180.0
    # width of the post-switch z range over the task labels
    bc_span: float = Field(0.75, gt=0, le=1)
    switches: Optional[list[SwitchSpec]] = None
    bin_width_s: float = Field(0.01, gt=0)
    # existing dataset directory for `track`; the simulator fields are unused then
    dataset_path: Optional[str] = None
    task: TaskConfig = Field(default_factory=TaskConfig)

    @model_validator(mode="after")
    def _validate_switches(self):
        if self.n_switching > self.n_neurons:
            raise ValueError("n_switching must be <= n_neurons")
        if self.switches is not None and len(self.switches) != self.n_neurons:
            raise ValueError("switches must list one entry per neuron")
        return self

    @property
    def n_bins(self) -> int:
        return self.mc_bins + self.bc_bins


class GappConfig(StrictModel):
    n_particles: int = Field(500, ge=2)
    psi: float = Field(0.08, ge=0, le=1)
    z_min: float = 0.0
    z_max: float = 1.0
    mixture_weighting: Literal["fixed", "evidence"] = "fixed"
    rng_seed: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def _validate_support(self):
        if not self.z_min < self.z_max:
            raise ValueError("z_min must be < z_max")
        return self


class SgdConfig(StrictModel):
    learning_rate: float = Field(0.005, gt=0)
    per_neuron_learning_rate: Optional[dict[int, float]] = None
    history_len: int = Field(10000, ge=1)
    update_every: int = Field(200, ge=1)
    stop_threshold: float = Field(5e-9, gt=0)
    max_iters: int = Field(100_000, ge=1)
    divergence_patience: int = Field(10, ge=1)

    @field_validator("per_neuron_learning_rate")
    @classmethod
    def _validate_rates(cls, v: Optional[dict[int, float]]):
        if v is not None and any(rate <= 0 for rate in v.values()):
            raise ValueError("learning rates must be > 0")
        return v

    def rate_for(self, neuron_id: int) -> float:
        if self.per_neuron_learning_rate and neuron_id in self.per_neuron_learning_rate:
            return self.per_neuron_learning_rate[neuron_id]
        return self.learning_rate


class DsmcppConfig(StrictModel):
    n_tuning_particles: int = Field(200, ge=2)
    n_kin_particles: int = Field(1000, ge=2)
    # explicit per-bin random-walk covariance; fitted from MC windows when unset
    tuning_walk_cov: Optional[list[list[float]]] = None
    walk_scale: float = Field(1.0, ge=0)
    # regression window for the fitted walk; clipped to half the training span
    walk_window_s: float = Field(20.0, gt=0)
    rng_seed: Optional[int] = Field(None, ge=0)

    @field_validator("tuning_walk_cov")
    @classmethod
    def _validate_cov(cls, v: Optional[list[list[float]]]):
        if v is None:
            return v
        if len(v) != 5 or any(len(row) != 5 for row in v):
            raise ValueError("tuning_walk_cov must be 5x5")
        return v


class DecoderConfig(StrictModel):
    n_particles: int = Field(1000, ge=2)


class TrainingConfig(StrictModel):
    transition_bins: int = Field(10000, ge=2)
    kinematics_bins: int = Field(10000, ge=2)
    fit_nonlinearity: bool = True
    regression_window_s: float = Field(100.0, gt=0)
    regression_overlap: float = Field(0.98, ge=0, lt=1)
    kernel_width_s: float = Field(0.6, gt=0)


class EvaluationConfig(StrictModel):
    n_bins_z: int = Field(20, ge=2)
    mi_window_s: float = Field(50.0, gt=0)
    mi_overlap_s: float = Field(48.0, ge=0)
    convergence_window: int = Field(500, ge=1)
    nmse_bins: int = Field(8000, ge=2)
    zhat_rmse_bins: int = Field(2000, ge=1)
    subset_size: int = Field(6, ge=1)
    ks_correction: Literal["random", "none"] = "random"

    @model_validator(mode="after")
    def _validate_mi_window(self):
        if self.mi_overlap_s >= self.mi_window_s:
            raise ValueError("mi_overlap_s must be < mi_window_s")
        return self


class ExperimentConfig(StrictModel):
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    method: Literal["gapp", "dsmcpp", "both"] = "both"
    gapp: GappConfig = Field(default_factory=GappConfig)
    sgd: SgdConfig = Field(default_factory=SgdConfig)
    dsmcpp: DsmcppConfig = Field(default_factory=DsmcppConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    output_dir: str = "./runs"
    seed: int = Field(0, ge=0, lt=2**64)
    workers: int = Field(1, ge=1)
    n_mc_runs: int = Field(1, ge=1)

    @property
    def methods(self) -> list[str]:
        return ["gapp", "dsmcpp"] if self.method == "both" else [self.method]
