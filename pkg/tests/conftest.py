from __future__ import annotations

import pytest

from app.schemas.config_schema import ExperimentConfig
from app.services.simulation_service import make_mc_bc_scenario
from tests.helpers import small_config_dict


@pytest.fixture()
def small_config() -> ExperimentConfig:
    return ExperimentConfig.model_validate(small_config_dict())


@pytest.fixture()
def small_dataset(small_config):
    return make_mc_bc_scenario(small_config.scenario, small_config.seed)
