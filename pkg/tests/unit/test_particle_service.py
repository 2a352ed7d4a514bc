import numpy as np

from app.services.particle_service import (
    ParticleEnsemble,
    effective_sample_size,
    normalize_log_weights,
    systematic_resample,
    weighted_mean,
)


def test_normalize_log_weights_survives_tiny_likelihoods():
    log_w = np.array([-1000.0, -1001.0, -1002.5])
    weights, log_mean, degenerate = normalize_log_weights(log_w)
    assert not degenerate
    assert abs(weights.sum() - 1.0) < 1e-12
    assert weights[0] > weights[1] > weights[2]
    assert np.isfinite(log_mean)


def test_normalize_log_weights_reports_mean_likelihood():
    _, log_mean, _ = normalize_log_weights(np.log([0.2, 0.4]))
    assert np.isclose(log_mean, np.log(0.3))


def test_all_zero_likelihood_falls_back_to_uniform():
    weights, log_mean, degenerate = normalize_log_weights(np.full(4, -np.inf))
    assert degenerate
    assert np.array_equal(weights, np.full(4, 0.25))
    assert log_mean == -np.inf


def test_effective_sample_size_extremes():
    assert np.isclose(effective_sample_size(np.full(10, 0.1)), 10.0)
    assert effective_sample_size(np.array([0.0, 1.0, 0.0])) == 1.0


def test_systematic_resample_point_mass():
    rng = np.random.default_rng(0)
    idx = systematic_resample(np.array([0.0, 1.0, 0.0]), 50, rng)
    assert np.all(idx == 1)


def test_systematic_resample_counts_are_floor_or_ceil():
    rng = np.random.default_rng(1)
    weights = np.array([0.1, 0.25, 0.4, 0.25])
    n = 37
    counts = np.bincount(systematic_resample(weights, n, rng), minlength=4)
    expected = weights * n
    assert counts.sum() == n
    assert np.all(counts >= np.floor(expected)) and np.all(counts <= np.ceil(expected))


def test_systematic_resample_never_picks_trailing_zero_weights():
    rng = np.random.default_rng(2)
    weights = np.array([0.3, 0.7, 0.0, 0.0])
    for _ in range(100):
        assert systematic_resample(weights, 20, rng).max() <= 1


def test_uniform_ensemble_and_weighted_mean():
    ensemble = ParticleEnsemble.uniform(np.array([1.0, 2.0, 3.0, 6.0]))
    assert np.isclose(ensemble.weights.sum(), 1.0)
    assert weighted_mean(ensemble.values, ensemble.weights) == 3.0
