import numpy as np
import pytest

from app.core.errors import DegenerateDataError, InvalidArgumentError
from app.services.encoding_service import (
    KinematicsSeries,
    SpikeTrain,
    TuningModel,
    conditional_intensity,
    fit_nonlinearity,
    log_spike_probability,
    modulation_state,
    smoothed_spike_probability,
    spike_probability,
    spike_triggered_regression,
    window_schedule,
)
from app.schemas.config_schema import TaskConfig
from app.services.simulation_service import TuningSchedule, generate_kinematics, generate_spikes

DT = 0.01


def test_modulation_state_is_dot_product():
    assert modulation_state([1, 2, 3, 4, 5], [1, 1, 1, 1, 1]) == 15.0
    assert modulation_state([0, 0, 0, 0, 0.4], [3.0, -2.0, 0.1, 0.1, 1.0]) == 0.4


def test_modulation_state_stacked_matches_single_calls_bitwise():
    rng = np.random.default_rng(0)
    k = rng.normal(size=5)
    x = np.column_stack([rng.normal(size=(50, 4)), np.ones(50)])
    stacked = modulation_state(k, x)
    singles = np.array([modulation_state(k, row) for row in x])
    assert np.array_equal(stacked, singles)


def test_modulation_state_rejects_non_finite():
    with pytest.raises(InvalidArgumentError):
        modulation_state([np.nan, 0, 0, 0, 0], [1, 1, 1, 1, 1])


def test_intensity_is_flat_without_modulation_and_clamped_when_large():
    flat = TuningModel(k=np.zeros(5), a=0.0, b=np.log(10.0))
    assert conditional_intensity(flat, [-5.0, 0.0, 7.0]) == pytest.approx([10.0] * 3)
    steep = TuningModel(k=np.zeros(5), a=1.0, b=0.0)
    assert conditional_intensity(steep, 100.0) == pytest.approx(1000.0)


def test_spike_probability_is_normalized():
    dn = np.arange(0, 200)
    total = np.sum(spike_probability(50.0, DT, dn))
    assert abs(total - 1.0) < 1e-12
    assert spike_probability(50.0, DT, 0) == pytest.approx(np.exp(-0.5), rel=1e-12)


def test_log_spike_probability_matches_linear_domain():
    lam = np.array([0.5, 10.0, 200.0])
    for dn in (0, 1, 3):
        expected = np.log(spike_probability(lam, DT, dn))
        assert np.allclose(log_spike_probability(np.log(lam), DT, dn), expected, rtol=1e-12)


def test_spike_probability_rejects_negative_inputs():
    with pytest.raises(InvalidArgumentError):
        spike_probability(-1.0, DT, 0)
    with pytest.raises(InvalidArgumentError):
        spike_probability(1.0, DT, -1)


def test_tuning_and_kinematics_validation():
    with pytest.raises(InvalidArgumentError):
        TuningModel(k=np.zeros(4), a=1.0, b=0.0)
    with pytest.raises(InvalidArgumentError):
        KinematicsSeries(states=np.zeros((3, 5)), bin_width_s=DT)
    with pytest.raises(InvalidArgumentError):
        SpikeTrain(counts=np.array([0, -1, 2]), bin_width_s=DT)


def test_fit_nonlinearity_recovers_parameters():
    rng = np.random.default_rng(1)
    z = rng.uniform(0.0, 1.0, size=200_000)
    a_true, b_true = 3.0, np.log(5.0)
    counts = rng.poisson(np.exp(a_true * z + b_true) * DT)
    fit = fit_nonlinearity(z, SpikeTrain(counts=counts, bin_width_s=DT))
    assert fit.converged
    assert fit.a == pytest.approx(a_true, abs=0.1)
    assert fit.b == pytest.approx(b_true, abs=0.1)
    assert all(b >= a for a, b in zip(fit.log_likelihood, fit.log_likelihood[1:]))


def test_fit_nonlinearity_degenerate_inputs():
    spikes = SpikeTrain(counts=np.array([0, 1, 0, 1]), bin_width_s=DT)
    with pytest.raises(DegenerateDataError):
        fit_nonlinearity(np.full(4, 0.3), spikes)
    with pytest.raises(DegenerateDataError):
        fit_nonlinearity(np.linspace(0, 1, 4), SpikeTrain(counts=np.zeros(4), bin_width_s=DT))


def test_smoothed_probability_conserves_a_single_spike():
    counts = np.zeros(2000, dtype=int)
    counts[1000] = 1
    smoothed = smoothed_spike_probability(SpikeTrain(counts=counts, bin_width_s=DT), 0.6)
    assert abs(smoothed.sum() - 1.0) < 1e-6
    assert smoothed.argmax() == 1000
    empty = smoothed_spike_probability(SpikeTrain(counts=np.zeros(50), bin_width_s=DT))
    assert np.all(empty == 0.0)


def test_window_schedule():
    assert window_schedule(100, 20, 0.5) == list(range(0, 81, 10))
    with pytest.raises(InvalidArgumentError):
        window_schedule(10, 20, 0.5)


def test_regression_falls_back_to_pinv_on_constant_kinematics():
    n = 600
    kin = KinematicsSeries.from_components(np.tile([0.5, 0.5, 0.0, 0.0], (n, 1)), DT)
    rng = np.random.default_rng(3)
    spikes = SpikeTrain(counts=(rng.random(n) < 0.2).astype(int), bin_width_s=DT)
    model = TuningModel(k=np.zeros(5), a=3.0, b=np.log(5.0))
    windows = spike_triggered_regression(kin, spikes, model, window_s=2.0, overlap_frac=0.5)
    assert windows.pinv_fallback.all()
    assert np.all(windows.fitted_rank == 1)
    assert windows.k.shape == (windows.centers.size, 5)
    assert np.all(np.isfinite(windows.k))


def _static_task_neuron(k, *, a, b, seed=11, n_bins=20_000):
    task = TaskConfig(inter_trial_bins=(100, 150))
    recording = generate_kinematics(task, np.random.default_rng(seed), n_bins=n_bins)
    model = TuningModel(k=np.asarray(k, dtype=float), a=a, b=b)
    spikes = generate_spikes(recording.kinematics, [TuningSchedule.static(model)], seed)[0]
    return recording.kinematics, spikes, model


def test_regression_recovers_a_static_tuning_in_every_window():
    kin, spikes, model = _static_task_neuron(
        [0.12, -0.08, 0.005, -0.005, 0.5], a=5.0, b=float(np.log(5.0))
    )
    windows = spike_triggered_regression(kin, spikes, model, window_s=100.0, overlap_frac=0.98)
    assert windows.centers.size == 51
    assert not windows.pinv_fallback.any()
    # per-bin velocity directions are below the design's resolution
    assert np.all(windows.fitted_rank == 3)
    rel_err = np.abs(windows.k - model.k).max(axis=1) / np.linalg.norm(model.k)
    assert rel_err.max() < 0.05


def test_regression_velocity_components_stay_bounded():
    kin, spikes, model = _static_task_neuron(
        [0.1, 0.1, 0.3, -0.3, 0.4], a=4.0, b=float(np.log(5.0)), n_bins=10_000
    )
    windows = spike_triggered_regression(kin, spikes, model, window_s=50.0, overlap_frac=0.5)
    assert np.all(np.abs(windows.k[:, 2:4]) < 0.05)
    assert np.all(np.abs(windows.k[:, 4] - 0.4) < 0.05)


def test_regression_stays_finite_when_a_phase_never_spikes():
    n = 1200
    px = (np.arange(n) // 50) % 2
    velocity = np.concatenate([[0.0], np.diff(px)])
    kin = KinematicsSeries.from_components(
        np.column_stack([px, np.zeros(n), velocity, np.zeros(n)]).astype(float), DT
    )
    rng = np.random.default_rng(8)
    counts = ((rng.random(n) < 0.2) & (px == 0)).astype(int)
    model = TuningModel(k=np.zeros(5), a=3.0, b=np.log(20.0))
    windows = spike_triggered_regression(
        kin, SpikeTrain(counts=counts, bin_width_s=DT), model, window_s=4.0, overlap_frac=0.0
    )
    assert windows.centers.size == 3
    assert np.all(np.isfinite(windows.k))
    assert np.all(np.abs(windows.k) < 2.0)
    # the silent phase still lowers z
    assert np.all(windows.k[:, 0] < 0.0)
