from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field


class DatasetFiles(BaseModel):
    kinematics: str = "kinematics.csv"
    events: str = "events.csv"
    truth: str = "truth.json"
    spikes: list[str] = Field(default_factory=list)


class DatasetManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: int = 1
    bin_width_s: float = Field(gt=0)
    n_neurons: int = Field(ge=0)
    n_bins: int = Field(ge=0)
    switch_bin: Optional[int] = None
    seed: Optional[int] = None
    scenario: Optional[dict[str, Any]] = None
    files: DatasetFiles = Field(default_factory=DatasetFiles)


class KsSummary(BaseModel):
    ks_stat: float
    band_halfwidth: float
    inside_band: bool
    n_intervals: int


class NeuronMetrics(BaseModel):
    neuron_id: int
    switching: Optional[bool] = None
    mi_truth: float
    mi_regression: Optional[float] = None
    mi: dict[str, float] = Field(default_factory=dict)
    mi_curve_cc: dict[str, Optional[float]] = Field(default_factory=dict)
    ks: dict[str, Optional[KsSummary]] = Field(default_factory=dict)
    zhat_rmse: dict[str, float] = Field(default_factory=dict)
    # update index at which K-hat enters the true post-switch half-plane
    half_plane_updates: dict[str, Optional[int]] = Field(default_factory=dict)


class MethodMetrics(BaseModel):
    nmse_per_dim: Optional[list[float]] = None
    nmse: Optional[float] = None
    convergence_bins: Optional[int] = None
    zhat_rmse_mean: float
    k_error_half_bins: Optional[int] = None
    top_k_neurons: list[int] = Field(default_factory=list)
    top_k_match: bool = False


class SubsetMetrics(BaseModel):
    neuron_ids: list[int]
    cc_all: float
    cc_subset: float
    # None when decoding with every neuron has no position correlation
    performance_ratio: Optional[float] = None


class MetricsSummary(BaseModel):
    switch_bin: Optional[int] = None
    eval_start: int
    eval_end: int
    post_switch_bins: int
    convergence_target: Optional[float] = None
    truth_top_k: list[int] = Field(default_factory=list)
    methods: dict[str, MethodMetrics] = Field(default_factory=dict)
    neurons: list[NeuronMetrics] = Field(default_factory=list)
    subset: Optional[SubsetMetrics] = None
    nmse_p_value: Optional[float] = None


class StepTiming(BaseModel):
    name: str
    duration_ms: int
    detail: Optional[str] = None


class ExperimentRecord(BaseModel):
    run_id: str
    command: str
    created_at: str
    dataset_dir: Optional[str] = None
    resolved_config: dict[str, Any]
    versions: dict[str, str] = Field(default_factory=dict)
    outputs: dict[str, list[str]] = Field(default_factory=dict)
    metrics: Optional[MetricsSummary] = None
    timings: list[StepTiming] = Field(default_factory=list)
