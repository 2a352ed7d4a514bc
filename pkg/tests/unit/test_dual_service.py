import numpy as np
import pytest

from app.core.errors import InvalidArgumentError
from app.schemas.config_schema import SgdConfig
from app.services.decoding_service import fit_kinematics_transition
from app.services.dual_service import run_gapp_dual
from app.services.encoding_service import modulation_state
from tests.helpers import poisson_trains, position_tuned_models, random_walk_kinematics


def test_decomposition_pulls_k_toward_truth():
    n_bins = 2000
    kin = random_walk_kinematics(n_bins, seed=4)
    models = position_tuned_models(6)
    spikes = poisson_trains(kin, models, seed=5)
    z_true = np.vstack([modulation_state(m.k, kin.states) for m in models])
    perturbed = [m.with_k(m.k + np.array([0.3, -0.3, 0.0, 0.0, 0.1])) for m in models]
    sgd = SgdConfig(learning_rate=0.5, update_every=200, history_len=2000, max_iters=2000)

    result = run_gapp_dual(
        spikes,
        perturbed,
        z_true,
        fit_kinematics_transition(kin),
        sgd,
        300,
        kin.components[0],
        np.random.default_rng(6),
    )
    assert result.xhat.shape == (n_bins, 4)
    assert result.k_series.shape == (6, n_bins, 5)
    for i, model in enumerate(models):
        decomposition = result.decompositions[i]
        assert decomposition.bins.tolist() == list(range(200, n_bins, 200))
        assert np.array_equal(result.k_series[i, 0], perturbed[i].k)
        start_error = np.linalg.norm(perturbed[i].k - model.k)
        end_error = np.linalg.norm(result.k_series[i, -1] - model.k)
        assert end_error < start_error


def test_zhat_shape_is_checked():
    kin = random_walk_kinematics(50, seed=0)
    models = position_tuned_models(2)
    spikes = poisson_trains(kin, models, seed=1)
    with pytest.raises(InvalidArgumentError):
        run_gapp_dual(
            spikes,
            models,
            np.zeros((3, 50)),
            fit_kinematics_transition(kin),
            SgdConfig(),
            10,
            kin.components[0],
            np.random.default_rng(0),
        )
