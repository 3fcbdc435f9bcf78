"""Shared fixtures and small world builders used across the suite."""

from __future__ import annotations

import numpy as np
import pytest

from aop.envs import MazeLifelongEnv, WorldEntry, WorldSchedule
from aop.nn import Mlp


def single_world_schedule(walls, goals, active=0, period=10_000) -> WorldSchedule:
    """A frozen maze world (one schedule entry at t=0)."""
    return WorldSchedule(
        env_kind="maze", kind="cw", period=period, seed=0,
        entries=[WorldEntry(0, {"walls": walls, "goals": goals, "active": active})],
    )


def open_maze(goals=((1.0, 0.5), (0.1, 0.5)), reward_mode="dense", start=(0.5, 0.5)):
    """Wall-free maze with a pinned goal pair."""
    sched = single_world_schedule([], [list(goals[0]), list(goals[1])])
    return MazeLifelongEnv(sched, reward_mode, start=start)


def constant_net(obs_dim: int, value: float) -> Mlp:
    """A network returning `value` for every input (zero weights, output bias)."""
    net = Mlp([obs_dim, 4, 1], rng=None)
    net.biases[-1][:] = value
    return net


def linear_value_net(weights: np.ndarray) -> Mlp:
    """Single linear layer net: V(s) = weights . s (used to embed exact
    tabular value functions over one-hot states)."""
    w = np.asarray(weights, dtype=np.float64)
    net = Mlp([w.shape[0], 1], rng=None)
    net.weights[0][:, 0] = w
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(0)
