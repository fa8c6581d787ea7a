"""Shared fixtures; the two long runs are computed once per session."""

import time

import numpy as np
import pytest

from marginflow import toy as toymod
from marginflow.dynamics import DynamicsConfig, run_gd, run_gf
from marginflow.engine import Dataset, ScalarPowerModel, ToyTwoLayerModel
from marginflow.poly import NonnegPoly


@pytest.fixture(scope="session")
def toy_config():
    return toymod.ToyConfig()


@pytest.fixture(scope="session")
def toy_dataset(toy_config):
    return toymod.gen_symmetric_dataset(toy_config, seed=0)


@pytest.fixture(scope="session")
def toy_model(toy_config):
    return ToyTwoLayerModel(toy_config.d, toy_config.alpha_l)


@pytest.fixture(scope="session")
def reduced_traj(toy_dataset, toy_config):
    """Reduced-flow trajectory to horizon 1e5; used by several criteria."""
    start = time.perf_counter()
    traj = toymod.run_reduced_ode(toy_dataset, toy_config, horizon=1e5)
    traj.metadata["build_seconds"] = time.perf_counter() - start
    return traj


@pytest.fixture(scope="session")
def gd_traj(toy_model, toy_dataset):
    """Full gradient-descent run, 150k steps at eta = 0.1, every step recorded."""
    config = DynamicsConfig(mode="gd", eta=0.1, max_steps=150000, record_every=1)
    start = time.perf_counter()
    traj = run_gd(toy_model, toy_dataset, np.zeros(toy_model.dim), config,
                  toymod.TOY_M, toymod.TOY_ENV_P, toymod.TOY_ENV_Q)
    traj.metadata["build_seconds"] = time.perf_counter() - start
    return traj


@pytest.fixture(scope="session")
def ex35_model():
    return ScalarPowerModel(3)


@pytest.fixture(scope="session")
def ex35_dataset():
    return Dataset(X=np.array([[1.0]]), y=np.array([1.0]))


@pytest.fixture(scope="session")
def ex35_p():
    return NonnegPoly((0.0, 0.0, 0.0, 1.0))


@pytest.fixture(scope="session")
def ex35_traj(ex35_model, ex35_dataset, ex35_p):
    config = DynamicsConfig(mode="gf", horizon=1e4, gf_tolerance=1e-10)
    return run_gf(ex35_model, ex35_dataset, np.array([-1.0]), config, 3, ex35_p)
