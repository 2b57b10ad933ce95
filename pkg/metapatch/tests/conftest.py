import pytest

import numpy as np

from metapatch import mechanics, sampling, predictors


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full pipeline and patch solver runs, deselect with -m 'not slow'")


def toy_curves(v, grid):
    """Smooth, scale free stand-in for the tension test."""
    nu = -0.3 * v.A / (v.A + v.t) * (1. + 2. * grid) + 0.05 * v.t / (v.t + 0.1 * v.lam)
    sigma = 400. * v.t / (v.t + 0.1 * v.lam) * grid * (1. + 3. * grid)
    return mechanics.PropertyCurves(strain_grid=grid, nu=nu, sigma=sigma)


def make_toy_dataset(n=40, seed=11):
    pool = sampling.generate_pool(sampling.PoolSpec(size=n, seed=seed))
    grid = mechanics.default_strain_grid()
    curves = [toy_curves(v, grid) for v in pool]
    split = sampling.split_indices(n, split_seed=2)
    return sampling.Dataset(designs=pool, curves=curves, split=split, seeds={'pool': seed, 'split': 2})


@pytest.fixture
def toy_dataset():
    return make_toy_dataset()


@pytest.fixture
def toy_surrogates(toy_dataset):
    """Small, untrained surrogates: enough for gradient and plumbing tests."""
    setup = {'layers': [8, 6]}
    return {target: predictors.CurvePredictor(setup=setup, target=target, dataset=toy_dataset, seed=7 + k)
            for k, target in enumerate(predictors.TARGETS)}


@pytest.fixture
def trained_surrogates(toy_dataset):
    setup = {'layers': [20, 20], 'epochs': 1500, 'patience': 1500, 'learning_rate': 3e-3}
    return {target: predictors.train_forward_model(toy_dataset, target, setup, seed=3)
            for target in predictors.TARGETS}


@pytest.fixture
def rng():
    return np.random.default_rng(42)
