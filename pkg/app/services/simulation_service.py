"""Synthetic two-lever task: scripted kinematics, tuning schedules with an
abrupt MC->BC change, and LNP spike trains with recorded ground truth.

Each trial is a pre-cue rest, a press phase at the high or low lever, then an
inter-trial rest. Label transitions are smoothed with a logistic ramp and the
velocity components are first differences of position.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from app.core.errors import InvalidArgumentError
from app.core.logging import get_logger
from app.core.seeding import component_rng
from app.schemas.config_schema import ScenarioConfig, SwitchSpec, TaskConfig
from app.services.encoding_service import (
    KinematicsSeries,
    SpikeTrain,
    TuningModel,
    clamped_log_intensity,
    modulation_state,
)

logger = get_logger(__name__)

# bins where lambda*dt > 1 beyond this fraction make binarization lossy
BINARIZATION_WARN_FRACTION = 0.01


@dataclass(frozen=True)
class TaskEvent:
    bin_index: int
    kind: str  # trial_start | press | reward
    lever: str  # high | low


@dataclass
class TaskRecording:
    kinematics: KinematicsSeries
    events: list[TaskEvent]


@dataclass
class TuningSchedule:
    segments: list[tuple[int, TuningModel]]

    def __post_init__(self) -> None:
        if not self.segments or self.segments[0][0] != 0:
            raise InvalidArgumentError("first schedule segment must start at bin 0")
        starts = [start for start, _ in self.segments]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise InvalidArgumentError("schedule start bins must be strictly increasing")

    @classmethod
    def static(cls, model: TuningModel) -> "TuningSchedule":
        return cls(segments=[(0, model)])

    def model_at(self, bin_index: int) -> TuningModel:
        active = self.segments[0][1]
        for start, model in self.segments:
            if start > bin_index:
                break
            active = model
        return active

    def _bounds(self, n_bins: int):
        starts = [start for start, _ in self.segments] + [n_bins]
        for (start, model), stop in zip(self.segments, starts[1:]):
            if start < n_bins:
                yield start, min(stop, n_bins), model

    def k_series(self, n_bins: int) -> np.ndarray:
        out = np.empty((n_bins, 5))
        for start, stop, model in self._bounds(n_bins):
            out[start:stop] = model.k
        return out

    def ab_series(self, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
        a = np.empty(n_bins)
        b = np.empty(n_bins)
        for start, stop, model in self._bounds(n_bins):
            a[start:stop] = model.a
            b[start:stop] = model.b
        return a, b


@dataclass
class SyntheticDataset:
    kinematics: KinematicsSeries
    spikes: list[SpikeTrain]
    schedules: list[TuningSchedule]
    truth_z: np.ndarray  # (n_neurons, n_bins)
    events: list[TaskEvent]
    switch_bin: int | None = None
    switching: list[bool] = field(default_factory=list)
    seed: int | None = None

    @property
    def n_neurons(self) -> int:
        return len(self.spikes)

    @property
    def n_bins(self) -> int:
        return len(self.kinematics)

    def truth_k(self, neuron_id: int) -> np.ndarray:
        return self.schedules[neuron_id].k_series(self.n_bins)


def _label(cfg: TaskConfig, lever: str) -> np.ndarray:
    labels = {"rest": cfg.rest_label, "high": cfg.high_label, "low": cfg.low_label}
    return np.asarray(labels[lever], dtype=float)


def _smooth_steps(targets: np.ndarray, steepness: float) -> np.ndarray:
    """Replace each label change at bin ``t`` with a logistic ramp centred
    half a bin before ``t``; an infinite slope leaves exact steps."""
    n = targets.shape[0]
    out = np.repeat(targets[:1], n, axis=0)
    change_bins = np.flatnonzero(np.any(np.diff(targets, axis=0) != 0, axis=1)) + 1
    t = np.arange(n, dtype=float)
    for c in change_bins:
        delta = targets[c] - targets[c - 1]
        with np.errstate(invalid="ignore"):
            ramp = expit((t - c + 0.5) * steepness)
        out = out + ramp[:, None] * delta[None, :]
    return out


def generate_kinematics(
    cfg: TaskConfig,
    rng: np.random.Generator,
    *,
    bin_width_s: float = 0.01,
    n_bins: int | None = None,
) -> TaskRecording:
    """Scripted two-lever trials.

    With ``n_bins`` set, trials are appended until the series is long enough
    and the result is truncated; otherwise exactly ``cfg.n_trials`` trials are
    generated.
    """
    lo, hi = cfg.inter_trial_bins
    levers: list[str] = []
    events: list[TaskEvent] = []
    t = 0
    trial = 0
    while (n_bins is None and trial < cfg.n_trials) or (n_bins is not None and t < n_bins):
        lever = "high" if rng.random() < 0.5 else "low"
        rest_after = int(rng.integers(lo, hi + 1))
        events.append(TaskEvent(bin_index=t, kind="trial_start", lever=lever))
        levers += ["rest"] * cfg.pre_cue_bins
        t += cfg.pre_cue_bins
        events.append(TaskEvent(bin_index=t, kind="press", lever=lever))
        levers += [lever] * cfg.trial_len_bins
        t += cfg.trial_len_bins
        events.append(TaskEvent(bin_index=t, kind="reward", lever=lever))
        levers += ["rest"] * rest_after
        t += rest_after
        trial += 1

    if n_bins is not None:
        levers = levers[:n_bins]
        events = [e for e in events if e.bin_index < n_bins]

    targets = np.array([_label(cfg, lever) for lever in levers]).reshape(-1, 2)
    positions = _smooth_steps(targets, cfg.steepness(bin_width_s)) if len(levers) else targets
    velocities = np.zeros_like(positions)
    velocities[1:] = np.diff(positions, axis=0)
    kin = KinematicsSeries.from_components(
        np.column_stack([positions, velocities]), bin_width_s
    )
    return TaskRecording(kinematics=kin, events=events)


def generate_spikes(
    kin: KinematicsSeries,
    schedules: Sequence[TuningSchedule],
    seed: int,
    *,
    binarize: bool = True,
) -> list[SpikeTrain]:
    """Poisson counts per bin from the active tuning, one RNG stream per
    neuron, binarized to {0, 1} by default."""
    n_bins = len(kin)
    dt = kin.bin_width_s
    trains = []
    for neuron_id, schedule in enumerate(schedules):
        rng = component_rng(seed, f"simulate/spikes/n{neuron_id}")
        z = modulation_state(schedule.k_series(n_bins), kin.states)
        a, b = schedule.ab_series(n_bins)
        log_lam, saturated = clamped_log_intensity(a, b, z)
        mean = np.exp(log_lam) * dt
        overfull = float(np.mean(mean > 1.0)) if n_bins else 0.0
        if overfull > BINARIZATION_WARN_FRACTION:
            logger.warning(
                "binarization_distorts_poisson",
                neuron_id=neuron_id,
                fraction=round(overfull, 4),
            )
        if saturated.any():
            logger.warning("intensity_saturated", neuron_id=neuron_id, bins=int(saturated.sum()))
        counts = rng.poisson(mean)
        if binarize:
            counts = (counts > 0).astype(np.int64)
        trains.append(SpikeTrain(counts=counts, bin_width_s=dt))
    return trains


def _task_labels(cfg: TaskConfig) -> np.ndarray:
    return np.array([cfg.rest_label, cfg.high_label, cfg.low_label], dtype=float)


def _label_span(k: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    z = labels @ k[:2] + k[4]
    return float(z.min()), float(z.max())


def _rotate_pairs(k: np.ndarray, angle_deg: float) -> np.ndarray:
    theta = np.deg2rad(angle_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    out = k.copy()
    out[0:2] = rot @ k[0:2]
    out[2:4] = rot @ k[2:4]
    return out


def apply_switch(
    model: TuningModel,
    spec: SwitchSpec,
    labels: np.ndarray,
    *,
    depth_scale: float | None = None,
) -> TuningModel:
    """Post-switch tuning.

    ``flip``/``rotate`` rotate the position and velocity pairs of ``K`` and
    rescale the direction part. The bias keeps the label z-range centred where
    it was, shifted the least amount that keeps it inside [0, 1]. A flip with
    unit scale therefore maps ``z`` to ``zmin + zmax - z`` over the labels.
    """
    a = model.a if spec.a is None else spec.a
    b = model.b if spec.b is None else spec.b
    if spec.kind == "static":
        return TuningModel(k=model.k.copy(), a=a, b=b)
    if spec.kind == "explicit":
        return TuningModel(k=np.asarray(spec.k, dtype=float), a=a, b=b)

    angle = 180.0 if spec.kind == "flip" else spec.angle_deg
    scale = spec.depth_scale if depth_scale is None else depth_scale
    lo, hi = _label_span(model.k, labels)
    k_new = _rotate_pairs(model.k, angle)
    k_new[:4] *= scale
    k_new[4] = 0.0
    new_lo, new_hi = _label_span(k_new, labels)
    bias = (lo + hi) / 2.0 - (new_lo + new_hi) / 2.0
    if new_lo + bias < 0.0:
        bias = -new_lo
    elif new_hi + bias > 1.0:
        bias = 1.0 - new_hi
    k_new[4] = bias
    return TuningModel(k=k_new, a=a, b=b)


def _draw_mc_tuning(
    rng: np.random.Generator, labels: np.ndarray, *, switching: bool
) -> TuningModel:
    """MC tuning with label z-values inside (0, 1).

    Switching neurons are weakly modulated in MC; their BC tuning is wider.
    """
    z_rest = rng.uniform(0.3, 0.5)
    if switching:
        sign = 1.0 if rng.random() < 0.5 else -1.0
        d_high = sign * rng.uniform(0.1, 0.15)
        d_low = -sign * rng.uniform(0.1, 0.15)
    else:
        d_high = rng.choice([-1.0, 1.0]) * rng.uniform(0.03, 0.15)
        d_low = rng.choice([-1.0, 1.0]) * rng.uniform(0.03, 0.15)
    z_high, z_low = z_rest + d_high, z_rest + d_low

    # solve the position components from the three label z-values
    rest, high, low = labels
    design = np.array([high - rest, low - rest])
    kxy = np.linalg.solve(design, np.array([z_high - z_rest, z_low - z_rest]))
    bias = z_rest - float(rest @ kxy)
    # per-bin velocity peaks near 0.02, so larger weights would not show in z
    k_vel = rng.uniform(-0.01, 0.01, size=2)
    k = np.array([kxy[0], kxy[1], k_vel[0], k_vel[1], bias])
    return TuningModel(k=k, a=rng.uniform(2.5, 3.5), b=float(np.log(rng.uniform(3.0, 6.0))))


def default_switches(cfg: ScenarioConfig, rng: np.random.Generator) -> list[SwitchSpec]:
    switching = set(rng.choice(cfg.n_neurons, size=cfg.n_switching, replace=False).tolist())
    return [
        SwitchSpec(kind=cfg.switch_kind, angle_deg=cfg.switch_angle_deg)
        if i in switching
        else SwitchSpec(kind="static")
        for i in range(cfg.n_neurons)
    ]


def make_mc_bc_scenario(cfg: ScenarioConfig, seed: int) -> SyntheticDataset:
    """One dataset whose first ``mc_bins`` use MC tunings and the rest BC
    tunings. With default switches, switching neurons are scaled so their BC
    label z-range spans ``bc_span``."""
    task_rng = (
        np.random.default_rng(cfg.task.rng_seed)
        if cfg.task.rng_seed is not None
        else component_rng(seed, "simulate/kinematics")
    )
    tuning_rng = component_rng(seed, "simulate/tunings")
    recording = generate_kinematics(
        cfg.task, task_rng, bin_width_s=cfg.bin_width_s, n_bins=cfg.n_bins
    )
    labels = _task_labels(cfg.task)

    auto_depth = cfg.switches is None
    switches = cfg.switches if cfg.switches is not None else default_switches(cfg, tuning_rng)
    schedules: list[TuningSchedule] = []
    switching: list[bool] = []
    for spec in switches:
        changes = spec.kind != "static"
        mc_model = _draw_mc_tuning(tuning_rng, labels, switching=changes)
        if not changes or cfg.bc_bins == 0:
            schedules.append(TuningSchedule.static(mc_model))
            switching.append(False)
            continue
        depth = None
        if auto_depth:
            lo, hi = _label_span(mc_model.k, labels)
            depth = cfg.bc_span / (hi - lo)
        bc_model = apply_switch(mc_model, spec, labels, depth_scale=depth)
        schedules.append(TuningSchedule(segments=[(0, mc_model), (cfg.mc_bins, bc_model)]))
        switching.append(True)

    kin = recording.kinematics
    truth_z = np.vstack(
        [modulation_state(s.k_series(len(kin)), kin.states) for s in schedules]
    ) if schedules else np.empty((0, len(kin)))
    spikes = generate_spikes(kin, schedules, seed)
    logger.info(
        "scenario_generated",
        n_neurons=len(schedules),
        n_bins=len(kin),
        n_switching=int(sum(switching)),
    )
    return SyntheticDataset(
        kinematics=kin,
        spikes=spikes,
        schedules=schedules,
        truth_z=truth_z,
        events=recording.events,
        switch_bin=cfg.mc_bins if cfg.bc_bins > 0 else None,
        switching=switching,
        seed=seed,
    )
