"""Shared builders for the test suite.

The two experiment configs below are the calibrated desk-scale setups used
across protocol, simulator and acceptance tests: an 8-class rotated Gaussian
task where a 180-degree rotation makes cluster objectives genuinely conflict,
small enough that a full run takes a couple of seconds.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from dacsim import (
    Arch,
    ClientShard,
    ClusterLayout,
    ClusterSpec,
    Dataset,
    ExperimentConfig,
    generate_base_task,
)

TASK = dict(
    T=60,
    E=3,
    m=3,
    batch_size=8,
    learning_rate=0.1,
    tau=30.0,
    train_n=48,
    val_n=24,
    test_n=64,
    input_dim=4,
    hidden_dim=0,
    n_classes=8,
)


def two_cluster_config(protocol: str = "dac", seed: int = 0, **overrides) -> ExperimentConfig:
    """10 + 10 clients on 0/180-degree rotations: maximally conflicting clusters."""
    layout = ClusterLayout(
        (ClusterSpec(count=10, rotation=0.0), ClusterSpec(count=10, rotation=180.0))
    )
    kw = dict(TASK, protocol=protocol, seed=seed, K=20, layout=layout, shift="rotation")
    kw.update(overrides)
    return ExperimentConfig(**kw)


def heterogeneous_config(protocol: str = "dac", seed: int = 0, **overrides) -> ExperimentConfig:
    """14/4/1/1 clients on 0/180/350/10 degrees: three similar clusters, one conflicting."""
    layout = ClusterLayout(
        (
            ClusterSpec(count=14, rotation=0.0),
            ClusterSpec(count=4, rotation=180.0),
            ClusterSpec(count=1, rotation=350.0),
            ClusterSpec(count=1, rotation=10.0),
        )
    )
    kw = dict(TASK, protocol=protocol, seed=seed, K=20, layout=layout, shift="rotation")
    kw.update(overrides)
    return ExperimentConfig(**kw)


def tiny_shard(seed: int = 0, n_train: int = 32, n_classes: int = 2, dim: int = 2) -> ClientShard:
    """A single separable-blob client for direct training tests."""
    pool = generate_base_task(n_classes, dim, n_train + 32, seed)
    train = Dataset(pool.features[:n_train], pool.labels[:n_train])
    val = Dataset(pool.features[n_train : n_train + 16], pool.labels[n_train : n_train + 16])
    test = Dataset(pool.features[n_train + 16 :], pool.labels[n_train + 16 :])
    return ClientShard(client_id=0, train=train, val=val, test=test, cluster_id=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_arch() -> Arch:
    return Arch(input_dim=2, hidden_dim=0, n_classes=2)
