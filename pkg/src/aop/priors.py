"""Model-free priors learned from planner-generated data.

Two priors propose full-horizon candidate trajectories to the planner:

* behavior cloning: regress the executed plan's actions on states;
* a twin-critic delayed actor-critic trained off-policy on everything the
  planner rolled out.

Both only consume replayed transitions and produce rollouts through model
snapshots; they never mutate the environment or the planner.
"""

from __future__ import annotations

import numpy as np

from .nn import AdamState, Mlp, adam_step, regression_step
from .trajectory import Trajectory

__all__ = [
    "PolicyBuffer",
    "BcPrior",
    "Td3Prior",
    "prior_rollout",
    "soft_update",
    "SOURCE_POPULATION",
    "SOURCE_FINAL",
]

SOURCE_POPULATION = 0  # transitions from population rollouts
SOURCE_FINAL = 1  # transitions from the executed (weight-averaged) plan


class PolicyBuffer:
    """Capacity-bounded FIFO of planner-rolled transitions, flagged by source."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, obs_dim))
        self.sources = np.zeros(capacity, dtype=np.uint8)
        self.size = 0
        self._head = 0

    def __len__(self) -> int:
        return self.size

    def add_batch(self, states, actions, rewards, next_states, source: int) -> None:
        states = np.asarray(states, dtype=np.float64)
        n = states.shape[0]
        if n > self.capacity:  # keep only the newest records
            states, actions, rewards, next_states = (
                a[-self.capacity :] for a in (states, actions, rewards, next_states)
            )
            n = self.capacity
        idx = (self._head + np.arange(n)) % self.capacity
        self.states[idx] = states
        self.actions[idx] = actions
        self.rewards[idx] = rewards
        self.next_states[idx] = next_states
        self.sources[idx] = source
        self._head = int((self._head + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int, source: int | None = None):
        """Uniform minibatch; optionally restricted to one source flag."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        if source is None:
            idx = rng.integers(0, self.size, batch)
            idx = (self._head - self.size + idx) % self.capacity
        else:
            pool = np.nonzero(self.sources[: self.size] == source)[0]
            if pool.size == 0:
                raise ValueError(f"no transitions with source={source}")
            idx = pool[rng.integers(0, pool.size, batch)]
        return (
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
        )


class BcPrior:
    """Behavior-cloning prior: a direct state -> action regressor.

    Trains on the executed plan's transitions only; outputs are clamped to
    the action bounds.
    """

    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64), learning_rate: float = 1e-3,
                 bound: float = 1.0, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.bound = float(bound)
        self.net = Mlp([obs_dim, *hidden, act_dim], rng)
        self.adam = AdamState.for_params(self.net.param_arrays(), learning_rate)

    def action(self, obs) -> np.ndarray:
        return np.clip(self.net.forward(obs), -self.bound, self.bound)

    def update(self, buffer: PolicyBuffer, steps: int, batch: int, rng: np.random.Generator) -> float:
        if len(buffer) == 0:
            raise ValueError("cannot train on an empty buffer")
        loss = 0.0
        for _ in range(steps):
            s, a, _, _ = buffer.sample(rng, batch, source=SOURCE_FINAL)
            loss = regression_step(self.net, self.adam, s, a)
        return loss


def soft_update(target: Mlp, live: Mlp, tau: float) -> None:
    """Exponential moving average: target <- tau * live + (1 - tau) * target."""
    for tp, lp in zip(target.param_arrays(), live.param_arrays()):
        tp *= 1.0 - tau
        tp += tau * lp


class Td3Prior:
    """Twin-critic delayed actor-critic trained off the planner's rollouts.

    Hyperparameters not fixed by the experiment tables follow the original
    algorithm's defaults: target smoothing noise 0.2 clipped at 0.5, policy
    delay 2, soft-update rate 0.005. The actor squashes through tanh to the
    action bounds; critics score (state, action) concatenations.
    """

    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64), learning_rate: float = 1e-3,
                 bound: float = 1.0, gamma: float = 0.99, policy_delay: int = 2,
                 smooth_std: float = 0.2, smooth_clip: float = 0.5, tau: float = 0.005,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.bound = float(bound)
        self.gamma = float(gamma)
        self.policy_delay = int(policy_delay)
        self.smooth_std = float(smooth_std)
        self.smooth_clip = float(smooth_clip)
        self.tau = float(tau)
        self.actor = Mlp([obs_dim, *hidden, act_dim], rng)
        self.q1 = Mlp([obs_dim + act_dim, *hidden, 1], rng)
        self.q2 = Mlp([obs_dim + act_dim, *hidden, 1], rng)
        self.actor_target = self.actor.copy()
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.adam_actor = AdamState.for_params(self.actor.param_arrays(), learning_rate)
        self.adam_q1 = AdamState.for_params(self.q1.param_arrays(), learning_rate)
        self.adam_q2 = AdamState.for_params(self.q2.param_arrays(), learning_rate)
        self.total_updates = 0

    def action(self, obs) -> np.ndarray:
        return np.tanh(self.net_forward(obs)) * self.bound

    def net_forward(self, obs) -> np.ndarray:
        return self.actor.forward(obs)

    def _target_q(self, next_states: np.ndarray, noise: np.ndarray) -> np.ndarray:
        a2 = np.tanh(self.actor_target.forward(next_states)) * self.bound
        a2 = np.clip(a2 + noise, -self.bound, self.bound)
        x2 = np.concatenate([next_states, a2], axis=1)
        q1 = self.q1_target.forward(x2)[:, 0]
        q2 = self.q2_target.forward(x2)[:, 0]
        return np.minimum(q1, q2)

    def update(self, buffer: PolicyBuffer, steps: int, batch: int, rng: np.random.Generator) -> float:
        if len(buffer) < batch:
            raise ValueError(f"buffer size {len(buffer)} < batch {batch}")
        critic_loss = 0.0
        for _ in range(steps):
            s, a, r, s2 = buffer.sample(rng, batch)
            noise = np.clip(
                rng.normal(0.0, self.smooth_std, size=a.shape), -self.smooth_clip, self.smooth_clip
            )
            y = r + self.gamma * self._target_q(s2, noise)
            x = np.concatenate([s, a], axis=1)
            critic_loss = regression_step(self.q1, self.adam_q1, x, y)
            regression_step(self.q2, self.adam_q2, x, y)
            self.total_updates += 1
            if self.total_updates % self.policy_delay == 0:
                self._actor_step(s)
                soft_update(self.actor_target, self.actor, self.tau)
                soft_update(self.q1_target, self.q1, self.tau)
                soft_update(self.q2_target, self.q2, self.tau)
        return critic_loss

    def _actor_step(self, states: np.ndarray) -> None:
        """Ascend q1(s, squash(actor(s))): the critic's input gradient is
        chained through the tanh squashing into the actor."""
        u, cache_a = self.actor.forward_with_cache(states)
        squashed = np.tanh(u)
        x = np.concatenate([states, squashed * self.bound], axis=1)
        qv, cache_q = self.q1.forward_with_cache(x)
        if not np.all(np.isfinite(qv)):
            raise ValueError("non-finite critic value in actor update")
        upstream = np.full_like(qv, -1.0 / qv.shape[0])  # d(-mean q)/dq
        _, dx = self.q1.backward_full(cache_q, upstream)
        da = dx[:, self.obs_dim :]
        du = da * self.bound * (1.0 - squashed * squashed)
        grads = self.actor.backward(cache_a, du)
        adam_step(self.actor.param_arrays(), grads, self.adam_actor)

    def save(self, path_prefix: str) -> None:
        self.actor.save(f"{path_prefix}.actor.json")
        self.q1.save(f"{path_prefix}.q1.json")
        self.q2.save(f"{path_prefix}.q2.json")


def prior_rollout(prior, model, horizon: int, state=None) -> Trajectory:
    """Deterministic closed-loop rollout of a prior through a model snapshot."""
    if horizon == 0:
        obs0 = model.observe(state)
        return Trajectory(obs0[None, :], np.zeros((0, model.action_dim)), np.zeros(0))
    obs, acts, rew = model.rollout_policy(lambda k, o: prior.action(o), horizon, state=state)
    return Trajectory(obs, acts, rew)
