"""Shared fixtures: system presets and a cached value-iteration oracle."""

import dataclasses

import numpy as np
import pytest

from iocnoisy.systems import (
    BoxSpace,
    CostParams,
    SystemModel,
    TruncatedGaussian,
    make_linear_system,
    make_temperature_system,
)
from iocnoisy.polybasis import enumerate_indices


@pytest.fixture(scope="session")
def linear_model():
    return make_linear_system()


@pytest.fixture(scope="session")
def temperature_model():
    return make_temperature_system()


def make_scalar_linear_system(a=1.0, b=1.0, alpha=0.9, noise_std=0.01):
    """1-D linear system x+ = a x + b u + w with features x^2, u^2."""
    iset = enumerate_indices(2, 1)
    drift = np.zeros((1, len(iset)))
    drift[0, iset.position((1, 0))] = a
    drift[0, iset.position((0, 1))] = b
    feat_iset = enumerate_indices(2, 2)
    feats = np.zeros((2, len(feat_iset)))
    feats[0, feat_iset.position((2, 0))] = 1.0
    feats[1, feat_iset.position((0, 2))] = 1.0
    return SystemModel(
        name="scalar",
        n_x=1,
        n_a=1,
        state_space=BoxSpace(lo=[-1.0], hi=[1.0]),
        action_space=BoxSpace(lo=[-1.0], hi=[1.0]),
        drift_iset=iset,
        drift_coeffs=drift,
        process_noise=TruncatedGaussian(mean=[0.0], std=[noise_std], bound=0.1),
        feat_iset=feat_iset,
        feat_coeffs=feats,
        discount=alpha,
        lin_A=np.array([[a]]),
        lin_B=np.array([[b]]),
    )


def with_tiny_noise(model, std=1e-12, bound=1e-9):
    """Copy of a system with effectively deterministic transitions."""
    noise = TruncatedGaussian(
        mean=np.zeros(model.n_x), std=np.full(model.n_x, std), bound=bound
    )
    return dataclasses.replace(model, process_noise=noise)


LINEAR_VI_COST = CostParams(np.array([0.6, 0.35, 0.45]))


@pytest.fixture(scope="session")
def linear_vi_oracle(linear_model):
    """Fine-grid value iteration on the linear preset (slow; computed once)."""
    from iocnoisy.oracle import value_iteration_policy

    policy, V = value_iteration_policy(
        linear_model, LINEAR_VI_COST, n_state=61, n_action=41, quad_nodes=4
    )
    policy = dataclasses.replace(policy, quad_nodes=4)
    return policy, V, LINEAR_VI_COST
