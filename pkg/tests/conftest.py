"""Shared fixtures: a tiny dataset and a briefly trained model.

Full desk-scale runs live in test_acceptance.py; everything else uses a
coarse grid (8 x 4 nodes, 2 x 2 parameter points) so the whole unit suite
stays fast.  Session scope is safe because nothing mutates the fixtures.
"""

import numpy as np
import pytest

from thermorom import autoencoder as ae
from thermorom import fom, trainer


@pytest.fixture(scope="session")
def tiny_config():
    return fom.FomConfig(nx=8, ny=4, n_steps=400, t_end=0.03125)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_config):
    grid = fom.default_parameter_grid([120.0, 160.0], [0.08, 0.12])
    return fom.generate_dataset(tiny_config, grid)


@pytest.fixture(scope="session")
def tiny_run(tiny_dataset):
    config = trainer.TrainConfig(n_epochs=60, n_greedy=10 ** 9,
                                 hidden_sizes=(12, 6), n_latent=3, seed=7)
    return trainer.run_training(tiny_dataset, config), config


def identity_mlp(n: int) -> ae.MLPParameters:
    """Single linear layer each way, wired to the identity map."""
    params = ae.init_params((n, n), seed=0)
    params.enc_w[0][:] = np.eye(n)
    params.enc_b[0][:] = 0.0
    params.dec_w[0][:] = np.eye(n)
    params.dec_b[0][:] = 0.0
    return params
