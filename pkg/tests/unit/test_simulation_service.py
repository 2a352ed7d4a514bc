import numpy as np
import pytest
from pydantic import ValidationError

from app.schemas.config_schema import ScenarioConfig, SwitchSpec, TaskConfig
from app.services.encoding_service import KinematicsSeries, TuningModel, modulation_state
from app.services.simulation_service import (
    TuningSchedule,
    apply_switch,
    generate_kinematics,
    generate_spikes,
    make_mc_bc_scenario,
)

DT = 0.01
LABELS = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, -1.0]])


def test_generate_kinematics_trial_structure():
    cfg = TaskConfig(n_trials=5, pre_cue_bins=10, trial_len_bins=20, inter_trial_bins=(30, 40))
    recording = generate_kinematics(cfg, np.random.default_rng(0), bin_width_s=DT)
    kin = recording.kinematics
    assert np.all(kin.states[:, 4] == 1.0)
    assert np.all(kin.states[0, 2:4] == 0.0)
    assert np.allclose(kin.states[1:, 2:4], np.diff(kin.positions, axis=0))
    starts = [e for e in recording.events if e.kind == "trial_start"]
    assert len(starts) == 5
    assert [e.bin_index for e in recording.events] == sorted(e.bin_index for e in recording.events)
    assert kin.positions[:, 0].min() >= 0.0 and kin.positions[:, 0].max() <= 1.0


def test_infinite_steepness_gives_exact_steps():
    cfg = TaskConfig(n_trials=3, sigmoid_steepness=float("inf"))
    kin = generate_kinematics(cfg, np.random.default_rng(1), bin_width_s=DT).kinematics
    rows = {tuple(row) for row in kin.positions}
    assert rows <= {tuple(label) for label in LABELS}


def test_generate_kinematics_truncates_to_n_bins():
    recording = generate_kinematics(TaskConfig(), np.random.default_rng(2), n_bins=777)
    assert len(recording.kinematics) == 777
    assert all(e.bin_index < 777 for e in recording.events)


def test_negative_trials_rejected():
    with pytest.raises(ValidationError):
        TaskConfig(n_trials=-1)


def test_flip_mirrors_the_label_range():
    model = TuningModel(k=np.array([0.1, 0.05, 0.2, -0.1, 0.4]), a=3.0, b=1.5)
    flipped = apply_switch(model, SwitchSpec(kind="flip"), LABELS)
    states = np.column_stack([LABELS, np.zeros((3, 2)), np.ones(3)])
    z_old = modulation_state(model.k, states)
    z_new = modulation_state(flipped.k, states)
    assert np.allclose(z_new, z_old.min() + z_old.max() - z_old)
    assert flipped.a == model.a and flipped.b == model.b


def test_explicit_switch_uses_given_parameters():
    model = TuningModel(k=np.zeros(5), a=3.0, b=1.0)
    spec = SwitchSpec(kind="explicit", k=[0.1, 0.2, 0.0, 0.0, 0.3], a=2.0)
    out = apply_switch(model, spec, LABELS)
    assert np.array_equal(out.k, [0.1, 0.2, 0.0, 0.0, 0.3])
    assert out.a == 2.0 and out.b == 1.0


def test_generate_spikes_binarizes_by_default():
    kin = generate_kinematics(TaskConfig(), np.random.default_rng(3), n_bins=2000).kinematics
    loud = TuningSchedule.static(TuningModel(k=np.zeros(5), a=0.0, b=np.log(300.0)))
    binary = generate_spikes(kin, [loud], seed=1)[0]
    counts = generate_spikes(kin, [loud], seed=1, binarize=False)[0]
    assert set(np.unique(binary.counts)) <= {0, 1}
    assert counts.counts.max() > 1
    assert np.array_equal(binary.counts, (counts.counts > 0).astype(int))


def test_constant_rate_spike_fraction_matches_bernoulli_rate():
    n = 100_000
    kin = KinematicsSeries.from_components(np.zeros((n, 4)), DT)
    flat = TuningSchedule.static(TuningModel(k=np.zeros(5), a=0.0, b=np.log(10.0)))
    fraction = generate_spikes(kin, [flat], seed=4)[0].counts.mean()
    p = 1.0 - np.exp(-10.0 * DT)
    assert abs(fraction - p) < 3.0 * np.sqrt(p * (1.0 - p) / n)
    assert abs(fraction - 0.0952) < 0.003


def test_mc_velocity_weights_stay_small(small_dataset):
    for schedule in small_dataset.schedules:
        assert np.all(np.abs(schedule.model_at(0).k[2:4]) <= 0.01)


def test_scenario_shapes_and_switch(small_config, small_dataset):
    ds = small_dataset
    scenario = small_config.scenario
    assert ds.n_neurons == 4 and ds.n_bins == 3000
    assert ds.switch_bin == 1500
    assert sum(ds.switching) == 2
    for i in range(ds.n_neurons):
        z = modulation_state(ds.truth_k(i), ds.kinematics.states)
        assert np.array_equal(ds.truth_z[i], z)
        assert set(np.unique(ds.spikes[i].counts)) <= {0, 1}
        if ds.switching[i]:
            bc = ds.schedules[i].model_at(ds.switch_bin)
            z_labels = LABELS @ bc.k[:2] + bc.k[4]
            assert np.ptp(z_labels) == pytest.approx(scenario.bc_span, rel=1e-9)
            assert z_labels.min() >= -1e-12 and z_labels.max() <= 1.0 + 1e-12
        else:
            assert len(ds.schedules[i].segments) == 1


def test_scenario_is_deterministic_per_seed(small_config):
    first = make_mc_bc_scenario(small_config.scenario, 3)
    again = make_mc_bc_scenario(small_config.scenario, 3)
    other = make_mc_bc_scenario(small_config.scenario, 4)
    assert all(np.array_equal(a.counts, b.counts) for a, b in zip(first.spikes, again.spikes))
    assert np.array_equal(first.truth_z, again.truth_z)
    assert not np.array_equal(first.truth_z, other.truth_z)


def test_no_bc_segment_means_no_switch():
    cfg = ScenarioConfig(n_neurons=2, mc_bins=300, bc_bins=0, n_switching=1)
    ds = make_mc_bc_scenario(cfg, 0)
    assert ds.switch_bin is None
    assert not any(ds.switching)
