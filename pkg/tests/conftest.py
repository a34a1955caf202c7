"""Shared fixtures: small deterministic streams and a trained two-task model.

Everything is seeded; repeated sessions produce identical numbers.
"""

from __future__ import annotations

import numpy as np
import pytest

from artsy.data import gen_gaussian_stream
from artsy.engine import EngineConfig, init_state, run_experiment, train_step


@pytest.fixture(scope="session")
def tiny_stream():
    """Two incremental tasks, well separated, small n — fast but realistic."""
    return gen_gaussian_stream(seed=11, num_tasks=2, samples_per_class=40)


@pytest.fixture(scope="session")
def tiny_cfg():
    return EngineConfig(seed=11)


@pytest.fixture(scope="session")
def tiny_model(tiny_stream, tiny_cfg):
    """A fully trained two-task model on the tiny stream (learned gates)."""
    state, report = run_experiment(tiny_stream, tiny_cfg)
    return state, report


@pytest.fixture(scope="session")
def tiny_oracle_model(tiny_stream):
    cfg = EngineConfig(seed=11, gate_mode="oracle")
    state, report = run_experiment(tiny_stream, cfg)
    return state, report


@pytest.fixture()
def fresh_state(tiny_stream, tiny_cfg):
    """Untrained state (backbone pre-trained, no incremental steps yet)."""
    state, stats = init_state(tiny_stream, tiny_cfg)
    return state


def train_through(stream, cfg, upto: int):
    """Train the first `upto` incremental tasks, returning the state."""
    state, _ = init_state(stream, cfg)
    for task in stream.incremental[:upto]:
        train_step(state, task, cfg)
    return state


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260819)
