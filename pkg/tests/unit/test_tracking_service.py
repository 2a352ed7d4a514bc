import numpy as np
import pytest

from app.core.errors import DegenerateDataError, InvalidArgumentError
from app.schemas.config_schema import GappConfig
from app.services.encoding_service import SpikeTrain, TuningModel, log_spike_probability
from app.services.particle_service import (
    ParticleEnsemble,
    normalize_log_weights,
    systematic_resample,
)
from app.services.tracking_service import (
    GappTracker,
    TransitionModel,
    combine_and_resample,
    fit_transition,
    posterior_density,
    posterior_mean,
    psi_sweep,
    silverman_bandwidth,
    track,
    weight_by_observation,
)
from tests.helpers import grid_bayes_filter

DT = 0.01
MODEL = TuningModel(k=np.zeros(5), a=4.0, b=float(np.log(10.0)))


def _ar1(n: int, f: float, r: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    z = np.empty(n)
    z[0] = 0.5
    for t in range(1, n):
        z[t] = f * z[t - 1] + rng.normal(0.0, np.sqrt(r))
    return z


def _spikes(z: np.ndarray, model: TuningModel, seed: int) -> SpikeTrain:
    rng = np.random.default_rng(seed)
    lam = np.minimum(np.exp(model.a * z + model.b), 1000.0)
    return SpikeTrain(counts=rng.poisson(lam * DT), bin_width_s=DT)


def test_fit_transition_recovers_ar1():
    z = _ar1(50_000, 0.95, 0.01, seed=0)
    tm = fit_transition(z)
    assert tm.f == pytest.approx(0.95, abs=0.01)
    assert tm.r == pytest.approx(0.01, rel=0.05)


def test_fit_transition_edge_cases():
    tm = fit_transition(np.full(100, 0.4))
    assert tm.f == 1.0 and tm.r == 0.0
    with pytest.raises(DegenerateDataError):
        fit_transition(np.zeros(10))
    with pytest.raises(InvalidArgumentError):
        fit_transition([0.3])


def test_weight_by_observation_is_normalized():
    values = np.linspace(0.0, 1.0, 200)
    weights = weight_by_observation(values, 1, MODEL, DT)
    assert abs(weights.sum() - 1.0) < 1e-12
    # a spike favours high z for a > 0
    assert weights[-1] > weights[0]
    with pytest.raises(InvalidArgumentError):
        weight_by_observation(values, -1, MODEL, DT)


def test_combine_and_resample_respects_psi_extremes():
    rng = np.random.default_rng(0)
    local = np.zeros(10)
    glob = np.ones(10)
    w = np.full(10, 0.1)
    only_local = combine_and_resample(local, w, glob, w, 0.0, 10, rng)
    only_global = combine_and_resample(local, w, glob, w, 1.0, 10, rng)
    assert only_local.global_fraction == 0.0 and np.all(only_local.values == 0.0)
    assert only_global.global_fraction == 1.0 and np.all(only_global.values == 1.0)


def test_tracker_rejects_z0_outside_support():
    cfg = GappConfig(n_particles=10)
    tm = TransitionModel(f=1.0, r=1e-4)
    with pytest.raises(InvalidArgumentError):
        GappTracker(MODEL, tm, cfg, 1.5, np.random.default_rng(0), dt=DT)


def test_psi_zero_is_the_bootstrap_filter():
    z = _ar1(300, 1.0, 1e-4, seed=1)
    spikes = _spikes(z, MODEL, seed=2)
    tm = TransitionModel(f=1.0, r=1e-4)
    cfg = GappConfig(n_particles=200, psi=0.0)
    result = track(spikes, MODEL, tm, cfg, 0.5, np.random.default_rng(9))

    rng = np.random.default_rng(9)
    particles = np.full(cfg.n_particles, 0.5)
    expected = []
    for dn in spikes.counts:
        proposed = tm.f * particles + rng.normal(0.0, np.sqrt(tm.r), size=particles.shape)
        log_lam = np.minimum(MODEL.a * proposed + MODEL.b, np.log(1000.0))
        weights, _, _ = normalize_log_weights(log_spike_probability(log_lam, DT, dn))
        weights = 1.0 * weights
        weights /= weights.sum()
        particles = proposed[systematic_resample(weights, cfg.n_particles, rng)]
        expected.append(np.mean(particles))
    assert np.array_equal(result.zhat, np.asarray(expected))
    assert np.all(result.global_fraction == 0.0)


def test_posterior_mean_matches_grid_bayes_filter():
    n_bins = 1000
    rng = np.random.default_rng(4)
    truth = np.empty(n_bins)
    truth[0] = 0.5
    for t in range(1, n_bins):
        truth[t] = np.clip(truth[t - 1] + rng.normal(0.0, 0.02), 0.0, 1.0)
        if t == 500:
            truth[t] = 0.1
    spikes = _spikes(truth, MODEL, seed=5)
    tm = TransitionModel(f=1.0, r=0.02**2)
    cfg = GappConfig(n_particles=4000, psi=0.08, mixture_weighting="evidence")

    result = track(spikes, MODEL, tm, cfg, 0.5, np.random.default_rng(6))
    grid = np.linspace(-0.25, 1.25, 201)
    oracle = grid_bayes_filter(spikes, MODEL, tm, cfg.psi, grid, (cfg.z_min, cfg.z_max), 0.5)
    assert np.sqrt(np.mean((result.zhat - oracle) ** 2)) < 0.02


def test_global_search_recovers_after_a_jump():
    n_bins = 1500
    truth = np.full(n_bins, 0.8)
    truth[500:] = 0.15
    spikes = _spikes(truth, MODEL, seed=11)
    tm = TransitionModel(f=1.0, r=1e-6)
    post = slice(500, 1000)
    errors = {}
    for psi in (0.0, 0.08):
        cfg = GappConfig(n_particles=300, psi=psi)
        result = track(spikes, MODEL, tm, cfg, 0.8, np.random.default_rng(12))
        errors[psi] = np.sqrt(np.mean((result.zhat[post] - truth[post]) ** 2))
    assert errors[0.08] < 0.5 * errors[0.0]


def test_psi_sweep_reports_each_value():
    truth = np.full(200, 0.5)
    spikes = _spikes(truth, MODEL, seed=3)
    out = psi_sweep(
        spikes,
        MODEL,
        TransitionModel(f=1.0, r=1e-4),
        GappConfig(n_particles=50),
        0.5,
        truth,
        [0.0, 0.01, 0.1],
        lambda psi: np.random.default_rng(int(psi * 1000)),
    )
    assert set(out) == {0.0, 0.01, 0.1}
    assert all(v >= 0.0 for v in out.values())


def test_posterior_density_integrates_to_one():
    rng = np.random.default_rng(0)
    ensemble = ParticleEnsemble.uniform(rng.normal(0.5, 0.05, size=500))
    grid = np.linspace(-0.5, 1.5, 4001)
    density = posterior_density(ensemble, grid)
    assert abs(np.trapezoid(density, grid) - 1.0) < 1e-3


def test_silverman_bandwidth_floor():
    ensemble = ParticleEnsemble.uniform(np.full(100, 0.3))
    assert silverman_bandwidth(ensemble) == 1e-4


def test_spike_weights_increase_with_z_below_unit_rate():
    # lambda * dt stays below 1 on [0, 1], where the one-spike likelihood is increasing
    model = TuningModel(k=np.zeros(5), a=2.0, b=float(np.log(10.0)))
    rng = np.random.default_rng(12)
    values = np.sort(rng.uniform(0.0, 1.0, size=300))
    assert np.all(np.diff(weight_by_observation(values, 1, model, DT)) > 0.0)
    for _ in range(1000):
        prior = rng.uniform(0.0, 1.0, size=50)
        weights = weight_by_observation(prior, 1, model, DT)
        assert weights @ prior >= prior.mean() - 1e-12


def test_combine_and_resample_is_unbiased():
    rng = np.random.default_rng(21)
    n, psi = 100, 0.2
    local = rng.normal(0.4, 0.1, size=n)
    glob = rng.uniform(0.0, 1.0, size=n)
    w_local = rng.dirichlet(np.ones(n))
    w_global = rng.dirichlet(np.ones(n))
    expected = (1.0 - psi) * (w_local @ local) + psi * (w_global @ glob)
    means = np.array(
        [
            combine_and_resample(local, w_local, glob, w_global, psi, n, rng).values.mean()
            for _ in range(10_000)
        ]
    )
    se = means.std(ddof=1) / np.sqrt(means.size)
    assert abs(means.mean() - expected) < 3.0 * se


def test_posterior_density_mean_matches_posterior_mean():
    tracker = GappTracker(
        MODEL, TransitionModel(f=1.0, r=1e-3), GappConfig(n_particles=300), 0.5,
        np.random.default_rng(5), dt=DT,
    )
    for dn in [0, 1, 0, 0, 1, 0, 0, 0, 1, 0]:
        tracker.step(dn)
    ensemble = tracker.ensemble()
    assert np.array_equal(ensemble.values, tracker.particles)
    grid = np.linspace(ensemble.values.min() - 1.0, ensemble.values.max() + 1.0, 40_001)
    density = posterior_density(ensemble, grid)
    quad_mean = np.trapezoid(grid * density, grid) / np.trapezoid(density, grid)
    assert abs(quad_mean - posterior_mean(ensemble)) < 1e-6
