"""The trajectory record shared by environment models and the planner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Trajectory", "discount_vector", "discounted_return"]


def discount_vector(gamma: float, h: int) -> np.ndarray:
    """Canonical discount weights ``gamma**k`` for k in [0, h)."""
    return gamma ** np.arange(h, dtype=np.float64)


def discounted_return(rewards: np.ndarray, gamma: float, terminal_value: float = 0.0) -> float:
    """H-step discounted return plus ``gamma**H`` times a terminal estimate.

    This is the planner's scoring formula; it is kept as one canonical
    expression (single np.dot) so independently written references can
    reproduce it bit for bit.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    h = rewards.shape[0]
    return float(np.dot(rewards, discount_vector(gamma, h)) + gamma**h * terminal_value)


@dataclass
class Trajectory:
    """A planned or simulated path: H+1 observations, H actions, H rewards.

    ``return_estimate`` is the discounted return of the rewards plus a
    discounted terminal value; it is None until something scores the
    trajectory.
    """

    states: np.ndarray  # (H+1, obs_dim)
    actions: np.ndarray  # (H, act_dim)
    rewards: np.ndarray  # (H,)
    return_estimate: float | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        h = self.actions.shape[0]
        if self.states.shape[0] != h + 1 or self.rewards.shape[0] != h:
            raise ValueError(
                f"inconsistent trajectory lengths: {self.states.shape[0]} states, "
                f"{h} actions, {self.rewards.shape[0]} rewards"
            )

    def __len__(self) -> int:
        return self.actions.shape[0]

    def recomputed_return(self, gamma: float, terminal_value: float = 0.0) -> float:
        """Re-derive the score from stored rewards; used by consistency checks."""
        return discounted_return(self.rewards, gamma, terminal_value)
