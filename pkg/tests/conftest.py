"""Shared small trained artifacts so module tests stay fast.

One 6x6 two-agent pipeline is trained once per session at a reduced budget;
behavioural quality bars live in the acceptance suite, these artifacts only
need to be structurally sound.
"""

import numpy as np
import pytest

from relopts.abstraction import Abstraction
from relopts.data import RandomJointPolicy, collect_dataset
from relopts.fermat import FermatConfig, train_fermat_encoder
from relopts.grid import empty_grid
from relopts.metric import MetricConfig, train_learned_distance
from relopts.spectral import build_graph, eigendecompose


@pytest.fixture(scope="session")
def small_spec():
    return empty_grid(6, 6, 2, horizon=40)


@pytest.fixture(scope="session")
def small_dataset(small_spec):
    return collect_dataset(small_spec, RandomJointPolicy(small_spec, seed=11),
                           n_transitions=6000, seed=11)


@pytest.fixture(scope="session")
def small_distance(small_dataset):
    cfg = MetricConfig(steps=900, batch=128)
    return train_learned_distance(small_dataset, cfg, seed=11)


@pytest.fixture(scope="session")
def small_phi(small_dataset, small_distance):
    cfg = FermatConfig(steps=2000, hidden=[64, 64])
    return train_fermat_encoder(small_dataset, small_distance, cfg, seed=11)


@pytest.fixture(scope="session")
def small_abstraction(small_dataset, small_phi, small_distance):
    graph = build_graph(small_dataset, small_phi, small_distance, q=1.0, mode="relative")
    k_max = min(5, graph.n_nodes - 2)
    basis = eigendecompose(graph, k_max=k_max)
    return Abstraction(small_phi, small_distance, q=1.0, basis=basis)
