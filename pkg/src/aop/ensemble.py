"""Value-function ensemble: optimistic aggregation and uncertainty signals.

An ensemble of n independently initialized value networks supplies

* the terminal estimate used by the planner, a temperature-kappa log-sum-exp
  that always lies between the member mean and the member max;
* the member standard deviation at the current state (epistemic uncertainty);
* the squared gap between a trajectory-segment return and the member mean at
  the segment head (the consistency error that drives horizon selection).

Members train by fitted value iteration on the replayed lifetime: K-step
discounted returns along the stored experience bootstrapped with a lagged
copy of each member, minibatches sampled independently per member.
"""

from __future__ import annotations

import numpy as np

from .nn import AdamState, Mlp, regression_step

__all__ = ["ValueBuffer", "ValueEnsemble"]


class ValueBuffer:
    """Capacity-bounded FIFO of (state, action, next_state, reward) records.

    Records arrive once per timestep of one unbroken lifetime, so the stored
    window is always time-contiguous: logical index i is the i-th oldest
    record and consecutive indices are consecutive env steps.
    """

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.next_states = np.zeros((capacity, obs_dim))
        self.rewards = np.zeros(capacity)
        self.size = 0
        self._head = 0  # next physical write slot

    def __len__(self) -> int:
        return self.size

    def add(self, state, action, next_state, reward) -> None:
        i = self._head
        self.states[i] = state
        self.actions[i] = action
        self.next_states[i] = next_state
        self.rewards[i] = reward
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _physical(self, logical: np.ndarray) -> np.ndarray:
        start = (self._head - self.size) % self.capacity
        return (start + logical) % self.capacity

    def gather_sequences(self, starts: np.ndarray, span: int):
        """Fixed-span reward windows from logical start indices, truncated at
        the newest record.

        Returns (rewards (B, span), valid mask (B, span), lengths (B,),
        bootstrap_states (B, obs_dim)) where bootstrap_states[b] is the state
        reached after lengths[b] steps from starts[b].
        """
        starts = np.asarray(starts, dtype=np.int64)
        lengths = np.minimum(span, self.size - starts)
        grid = starts[:, None] + np.arange(span)[None, :]
        valid = grid < self.size
        phys = self._physical(np.minimum(grid, self.size - 1))
        rewards = self.rewards[phys] * valid
        boot_phys = self._physical(starts + lengths - 1)
        boot_states = self.next_states[boot_phys]
        return rewards, valid, lengths, boot_states


class ValueEnsemble:
    """n value networks with log-sum-exp aggregation.

    Inference methods are pure given frozen members and safe for concurrent
    readers; `train` is single-writer.
    """

    def __init__(
        self,
        obs_dim: int,
        n_members: int = 6,
        kappa: float = 1e-2,
        gamma: float = 0.99,
        hidden=(64, 64),
        learning_rate: float = 1e-3,
        bootstrap_span: int = 32,
        rng: np.random.Generator | None = None,
    ):
        if not 0.0 <= gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {gamma}")
        rng = rng if rng is not None else np.random.default_rng()
        self.obs_dim = obs_dim
        self.kappa = float(kappa)
        self.gamma = float(gamma)
        self.bootstrap_span = int(bootstrap_span)
        sizes = [obs_dim, *hidden, 1]
        self.members = [Mlp(sizes, rng) for _ in range(n_members)]
        self.adam = [AdamState.for_params(m.param_arrays(), learning_rate) for m in self.members]
        # independent minibatch streams are the ensemble's diversity source
        self._train_rngs = [np.random.default_rng(s) for s in rng.integers(0, 2**63 - 1, n_members)]

    @property
    def n_members(self) -> int:
        return len(self.members)

    # ------------------------------------------------------------ inference

    def member_values(self, states) -> np.ndarray:
        """Member predictions: (n,) for one state, (n, B) for a batch."""
        states = np.asarray(states, dtype=np.float64)
        single = states.ndim == 1
        batch = states[None, :] if single else states
        vals = np.stack([m.forward(batch)[:, 0] for m in self.members])
        return vals[:, 0] if single else vals

    def aggregate(self, states):
        """Log-sum-exp aggregate (1/kappa) log((1/n) sum_i e^{kappa V_i}).

        Lies in [mean, max] of the member values for every state. Computed
        with max subtraction (no overflow) in expm1/log1p form, which keeps
        the small-kappa regime accurate: the trailing division by kappa
        would otherwise amplify plain log/exp rounding into the estimate.
        """
        vals = self.member_values(states)
        z = self.kappa * vals
        m = z.max(axis=0)
        # mean(exp(z-m)) = 1 + mean(expm1(z-m)), with z-m <= 0 elementwise
        s = np.mean(np.expm1(z - m), axis=0)
        agg = (m + np.log1p(s)) / self.kappa
        return float(agg) if np.ndim(agg) == 0 else agg

    def ensemble_std(self, state) -> float:
        """Population standard deviation (n in the denominator) of member values."""
        vals = self.member_values(state)
        return float(np.std(vals, axis=0)) if vals.ndim == 1 else np.std(vals, axis=0)

    # ------------------------------------------------------ consistency error

    def bellman_curve(self, states: np.ndarray, rewards: np.ndarray, h_min: int, h_full: int) -> np.ndarray:
        """Consistency error for every horizon H in [h_min, h_full].

        eps(H) is the squared gap between (a) the discounted return of the
        trajectory segment from step H to step h_full, with discounting
        restarted at the segment head, plus gamma^(h_full-H) times the
        aggregated terminal value, and (b) the member MEAN value at the
        segment head state.
        """
        states = np.asarray(states, dtype=np.float64)
        rewards = np.asarray(rewards, dtype=np.float64)
        if len(rewards) < h_full or states.shape[0] < h_full + 1:
            raise ValueError(f"trajectory shorter than h_full={h_full}")
        mean_v = self.member_values(states[: h_full + 1]).mean(axis=0)
        agg_end = self.aggregate(states[h_full])
        suffix = np.zeros(h_full + 1)
        for k in range(h_full - 1, -1, -1):
            suffix[k] = rewards[k] + self.gamma * suffix[k + 1]
        hs = np.arange(h_min, h_full + 1)
        seg = suffix[hs] + self.gamma ** (h_full - hs) * agg_end
        return (seg - mean_v[hs]) ** 2

    def bellman_error(self, traj, h: int, h_full: int) -> float:
        """eps(H) for a single horizon; `traj` needs .states and .rewards of
        length >= h_full."""
        if not 0 <= h <= h_full:
            raise ValueError(f"H={h} out of range [0, {h_full}]")
        return float(self.bellman_curve(traj.states, traj.rewards, h, h_full)[0])

    # -------------------------------------------------------------- training

    def train(self, buffer: ValueBuffer, steps: int, batch: int) -> float:
        """`steps` Adam steps per member on independently sampled minibatches.

        Targets are K-step discounted returns along the stored sequence,
        bootstrapped with a lagged copy of the member refreshed at the start
        of this call. Returns the final minibatch loss (averaged over
        members); raises if any loss diverges.
        """
        if len(buffer) == 0:
            raise ValueError("cannot train on an empty buffer")
        if steps <= 0:
            return 0.0
        span = self.bootstrap_span
        disc = self.gamma ** np.arange(span)
        last_losses = []
        for i, member in enumerate(self.members):
            lag = member.copy()
            rng = self._train_rngs[i]
            loss = 0.0
            for _ in range(steps):
                starts = rng.integers(0, len(buffer), batch)
                rewards, valid, lengths, boot_states = buffer.gather_sequences(starts, span)
                boot_v = lag.forward(boot_states)[:, 0]
                targets = (rewards * disc[None, :]).sum(axis=1) + self.gamma**lengths * boot_v
                phys = buffer._physical(starts)
                loss = regression_step(member, self.adam[i], buffer.states[phys], targets)
            last_losses.append(loss)
        return float(np.mean(last_losses))

    # -------------------------------------------------------- serialization

    def save(self, path_prefix: str) -> None:
        for i, m in enumerate(self.members):
            m.save(f"{path_prefix}.member{i}.json")

    def load(self, path_prefix: str) -> None:
        for i, m in enumerate(self.members):
            self.members[i] = Mlp.load(f"{path_prefix}.member{i}.json")
